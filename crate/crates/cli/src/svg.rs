use std::fmt::Write;

const WIDTH: f64 = 800.0;
const ROW: f64 = 24.0;
const LABEL_W: f64 = 200.0;
const VALUE_W: f64 = 90.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bars, one 24px row each, with the value printed at the bar end.
/// Missing values get an empty row labeled `n/a`.
pub fn bar_chart(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let height = ROW * bars.len().max(1) as f64;
    let values: Vec<f64> = bars.iter().filter_map(|b| b.1).collect();
    let lo = values.iter().copied().fold(0.0, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_w = WIDTH - LABEL_W - VALUE_W;
    let x = |v: f64| LABEL_W + (v - lo) / span * plot_w;
    let zero = x(0.0);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    for (i, (label, value)) in bars.iter().enumerate() {
        let y = ROW * i as f64;
        let mid = y + ROW / 2.0 + 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{mid:.1}" text-anchor="end">{}</text>"#, LABEL_W - 6.0, escape(label)).unwrap();
        match value {
            Some(v) => {
                let (a, b) = if *v >= 0.0 { (zero, x(*v)) } else { (x(*v), zero) };
                writeln!(
                    s,
                    r##"<rect x="{a:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4c72b0"/>"##,
                    y + 3.0,
                    (b - a).max(0.5),
                    ROW - 6.0
                )
                .unwrap();
                let (tx, anchor) = if *v >= 0.0 || a - 44.0 < LABEL_W { (b + 4.0, "start") } else { (a - 4.0, "end") };
                writeln!(s, r#"<text x="{tx:.1}" y="{mid:.1}" text-anchor="{anchor}">{v:.3}</text>"#).unwrap();
            }
            None => {
                writeln!(s, r#"<text x="{:.1}" y="{mid:.1}">n/a</text>"#, zero + 4.0).unwrap();
            }
        }
    }
    writeln!(
        s,
        r##"<line x1="{zero:.1}" y1="0" x2="{zero:.1}" y2="{height}" stroke="#333" stroke-width="1"/>"##
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Polyline through `(x, y)` points on an 800x300 canvas.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (WIDTH, 300.0, 50.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points.iter().map(pick).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let (y0, y1) = if y1 - y0 < 1e-9 { (y0 - 0.05, y1 + 0.05) } else { (y0, y1) };
    let xs = |v: f64| if x1 > x0 { pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad) } else { w / 2.0 };
    let ys = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    writeln!(
        s,
        r##"<polyline fill="none" stroke="#333" points="{pad},{pad} {pad},{:.1} {:.1},{:.1}"/>"##,
        h - pad,
        w - pad,
        h - pad
    )
    .unwrap();
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", xs(x), ys(y))).collect();
    writeln!(s, r##"<polyline fill="none" stroke="#4c72b0" stroke-width="2" points="{}"/>"##, path.join(" ")).unwrap();
    for &(x, y) in points {
        writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#4c72b0"/>"##, xs(x), ys(y)).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{y:.3}</text>"#, xs(x), ys(y) - 8.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, xs(x), h - pad + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, w / 2.0, h - 8.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(y_label)).unwrap();
    s.push_str("</svg>\n");
    s
}
