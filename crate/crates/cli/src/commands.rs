use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xfermetric::bundle::{read_bundle, EmbeddingBundle};
use xfermetric::distance::{compute_distance, mean_dist, resolve_distances, DISTANCE_IDS};
use xfermetric::evaluation::{evaluate as run_evaluation, rtp_metric, EvaluateOptions, TransferRecord};
use xfermetric::io::{
    self, read_candidate_scores, read_perf, score_table, CandidateScoreRow, DistanceRow, Format, ScoreRow,
};
use xfermetric::knn::{knn_sweep, KnnConfig, KnnMode};
use xfermetric::metrics::{MetricRegistry, Orientation};
use xfermetric::synthetic::{clustered, SyntheticSpec};
use xfermetric::CorrelationReport;

use crate::params::{distance_params, metric_overrides};
use crate::svg::{bar_chart, line_chart};
use crate::{BenchArgs, DistanceArgs, EvaluateArgs, ReportArgs, RtpArgs, ScoreArgs, SweepArgs};

/// Distances and their aggregate are lower-better; every other id is
/// treated as a higher-better transferability score.
pub fn default_orientation(metric: &str) -> Orientation {
    if DISTANCE_IDS.contains(&metric) || metric == "mean_dist" {
        Orientation::LowerBetter
    } else {
        Orientation::HigherBetter
    }
}

fn load(path: &Path) -> Result<EmbeddingBundle> {
    read_bundle(path).with_context(|| format!("reading bundle {}", path.display()))
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn table_bytes<T: Serialize>(out: Option<&Path>, rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let json = out.is_some_and(|p| Format::from_path(p) == Format::Json);
    Ok(if json { io::json_bytes(rows)? } else { io::csv_bytes_with_header(rows, header)? })
}

fn model_name(bundle: &EmbeddingBundle, explicit: Option<&str>) -> String {
    explicit
        .map(str::to_string)
        .or_else(|| bundle.provenance().get("model").and_then(|v| v.as_str()).map(str::to_string))
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let registry = MetricRegistry::new();
    let ids = registry.resolve(&a.metrics)?;
    let overrides = metric_overrides(&a.params, Some(&a.knn))?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for path in &a.bundle {
        let bundle = load(path)?;
        let model = model_name(&bundle, a.model.as_deref());
        for outcome in registry.run(&bundle, &ids, &overrides, a.seed, a.parallel)? {
            match outcome.result {
                Ok(s) => {
                    for w in &s.warnings {
                        eprintln!("warning: {}: {}: {w}", bundle.name(), s.metric);
                    }
                    rows.push(ScoreRow {
                        model: model.clone(),
                        bundle: bundle.name().to_string(),
                        metric: s.metric,
                        value: s.value,
                        wall_time_s: a.bench.then_some(s.wall_time),
                    });
                }
                Err(e) => failures.push(format!("{}: {}: {e}", bundle.name(), outcome.metric)),
            }
        }
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }
    if rows.is_empty() {
        bail!("all metrics failed");
    }
    if a.strict && !failures.is_empty() {
        bail!("{} metric run(s) failed in strict mode", failures.len());
    }
    let bytes = table_bytes(a.out.as_deref(), &rows, &io::SCORE_HEADER)?;
    write_out(a.out.as_deref(), &bytes)
}

/// One dataset as seen by one or more extractors.
struct BundleGroup {
    name: String,
    bundles: Vec<EmbeddingBundle>,
}

fn load_group(list: &str) -> Result<BundleGroup> {
    let bundles = list
        .split(',')
        .map(|p| load(Path::new(p.trim())))
        .collect::<Result<Vec<_>>>()?;
    let name = bundles.iter().map(|b| b.name()).collect::<Vec<_>>().join("+");
    Ok(BundleGroup { name, bundles })
}

/// Pairs the i-th source extractor with the i-th target extractor; a
/// single bundle on either side pairs with every bundle on the other.
fn extractor_pairs<'a>(s: &'a BundleGroup, t: &'a BundleGroup) -> Result<Vec<(&'a EmbeddingBundle, &'a EmbeddingBundle)>> {
    let (ns, nt) = (s.bundles.len(), t.bundles.len());
    if ns != nt && ns != 1 && nt != 1 {
        bail!("{} has {ns} extractor bundles but {} has {nt}", s.name, t.name);
    }
    let n = ns.max(nt);
    Ok((0..n)
        .map(|i| (&s.bundles[i.min(ns - 1)], &t.bundles[i.min(nt - 1)]))
        .collect())
}

pub fn distance(a: DistanceArgs) -> Result<()> {
    let ids = resolve_distances(&a.metrics)?;
    if a.mean && a.target.len() < 2 {
        bail!("mean-dist needs ≥ 2 candidates");
    }
    let params = distance_params(&a.params, &a.emd_cost)?;
    let source = load_group(&a.source)?;
    let targets = a.target.iter().map(|t| load_group(t)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for target in &targets {
        let pairs = extractor_pairs(&source, target)?;
        for id in &ids {
            let (mut value, mut wall) = (0.0, 0.0);
            for (s, t) in &pairs {
                let d = compute_distance(id, s, t, &params, a.seed)
                    .with_context(|| format!("{id} between {} and {}", s.name(), t.name()))?;
                value += d.value;
                wall += d.wall_time;
            }
            value /= pairs.len() as f64;
            columns.entry(id.as_str()).or_default().push(value);
            rows.push(DistanceRow {
                source: source.name.clone(),
                target: target.name.clone(),
                metric: id.clone(),
                value,
                wall_time_s: a.bench.then_some(wall),
            });
        }
    }
    if a.mean {
        let cols: Vec<Vec<f64>> = columns.into_values().collect();
        for (target, value) in targets.iter().zip(mean_dist(&cols)?) {
            rows.push(DistanceRow {
                source: source.name.clone(),
                target: target.name.clone(),
                metric: "mean_dist".into(),
                value,
                wall_time_s: None,
            });
        }
    }
    let bytes = table_bytes(a.out.as_deref(), &rows, &io::DISTANCE_HEADER)?;
    write_out(a.out.as_deref(), &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct RtpRow {
    candidate: String,
    perf_p: f64,
    perf_ri: f64,
    rtp: f64,
    tg: f64,
}

pub fn rtp(a: RtpArgs) -> Result<()> {
    let perf = read_perf(&a.perf)?;
    let rows = perf
        .iter()
        .map(|r| {
            let rtp = xfermetric::evaluation::rtp(r).with_context(|| format!("candidate {}", r.candidate))?;
            Ok(RtpRow {
                candidate: r.candidate.clone(),
                perf_p: r.perf_p,
                perf_ri: r.perf_ri,
                rtp,
                tg: 1.0 - rtp,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let (Some(p), Some(ri)) = (&a.scores_p, &a.scores_ri) {
        let Some(out) = &a.rtp_p_out else {
            bail!("--scores-p and --scores-ri need --rtp-p-out");
        };
        let key = |r: &CandidateScoreRow| (r.candidate.clone(), r.metric.clone());
        let ri: BTreeMap<_, _> = read_candidate_scores(ri)?.into_iter().map(|r| (key(&r), r.value)).collect();
        let mut rtp_p = Vec::new();
        for row in read_candidate_scores(p)? {
            let Some(&est_ri) = ri.get(&key(&row)) else {
                eprintln!("warning: no random-init score for {} / {}", row.candidate, row.metric);
                continue;
            };
            let record = TransferRecord {
                est_p: Some(row.value),
                est_ri: Some(est_ri),
                ..TransferRecord::new(row.candidate.clone(), 1.0, 0.0)
            };
            let orientation = row.orientation.unwrap_or_else(|| default_orientation(&row.metric));
            match rtp_metric(&record, orientation) {
                Ok(value) => rtp_p.push(CandidateScoreRow {
                    candidate: row.candidate,
                    metric: row.metric,
                    value,
                    orientation: Some(Orientation::HigherBetter),
                }),
                Err(e) => eprintln!("warning: RTP_P undefined for {} / {}: {e}", row.candidate, row.metric),
            }
        }
        rtp_p.sort_by(|x, y| (&x.candidate, &x.metric).cmp(&(&y.candidate, &y.metric)));
        let bytes = table_bytes(Some(out), &rtp_p, &io::CANDIDATE_SCORE_HEADER)?;
        io::write_atomic(out, &bytes)?;
    }
    let bytes = table_bytes(a.out.as_deref(), &rows, &["candidate", "perf_p", "perf_ri", "rtp", "tg"])?;
    write_out(a.out.as_deref(), &bytes)
}

fn report_chart(report: &CorrelationReport) -> String {
    let bars: Vec<(String, Option<f64>)> = report.results.iter().map(|r| (r.metric.clone(), r.value)).collect();
    bar_chart(&format!("{} vs {} performance", report.measure, report.target), &bars)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let table = score_table(&read_candidate_scores(&a.scores)?, default_orientation);
    let perf = read_perf(&a.perf)?;
    let options = EvaluateOptions {
        symmetric_tau_w: a.symmetric,
        pessimistic_rel1: a.pessimistic,
        invert_lower_better: !a.no_invert,
    };
    let report = run_evaluation(&table, &perf, a.target.parse()?, a.measure.parse()?, &options)?;
    for r in &report.results {
        if let Some(e) = &r.error {
            eprintln!("warning: {}: {e}", r.metric);
        }
    }
    if let Some(svg) = &a.svg {
        io::write_atomic(svg, report_chart(&report).as_bytes())?;
    }
    write_out(a.out.as_deref(), &io::json_bytes(&report)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    k: usize,
    score: f64,
}

pub fn sweep_k(a: SweepArgs) -> Result<()> {
    let bundle = load(&a.bundle)?;
    let cfg = KnnConfig {
        fraction: a.split_fraction.unwrap_or(KnnConfig::default().fraction),
        seed: a.seed,
        mode: if a.cv3 { KnnMode::Cv3 } else { KnnMode::Single },
        stratified: !a.no_stratify,
        ..KnnConfig::default()
    };
    let sweep = knn_sweep(&bundle, &a.k_values, &cfg)?;
    let rows: Vec<SweepRow> = sweep.iter().map(|&(k, score)| SweepRow { k, score }).collect();
    if let Some(svg) = &a.svg {
        let points: Vec<(f64, f64)> = sweep.iter().map(|&(k, s)| (k as f64, s)).collect();
        io::write_atomic(svg, line_chart(&format!("k-NN score on {}", bundle.name()), "k", "score", &points).as_bytes())?;
    }
    write_out(a.out.as_deref(), &io::csv_bytes_with_header(&rows, &["k", "score"])?)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let bundle = match &a.bundle {
        Some(p) => load(p)?,
        None => clustered(&SyntheticSpec {
            n: a.n,
            d: a.d,
            classes: a.classes,
            separation: 3.0,
            source_classes: Some(a.source_classes),
            temperature: 1.0,
            seed: a.seed,
        })
        .with_name(format!("synthetic-{}x{}", a.n, a.d)),
    };
    let registry = MetricRegistry::new();
    let ids = registry.resolve(&a.metrics)?;
    let overrides = metric_overrides(&a.params, None)?;
    let mut rows = Vec::new();
    for outcome in registry.run(&bundle, &ids, &overrides, a.seed, false)? {
        match outcome.result {
            Ok(s) => {
                eprintln!("{:<10} {:>10.4} s", s.metric, s.wall_time);
                rows.push(ScoreRow {
                    model: "bench".into(),
                    bundle: bundle.name().to_string(),
                    metric: s.metric,
                    value: s.value,
                    wall_time_s: Some(s.wall_time),
                });
            }
            Err(e) => eprintln!("failed: {}: {e}", outcome.metric),
        }
    }
    if rows.is_empty() {
        bail!("all metrics failed");
    }
    if let Some(svg) = &a.svg {
        let bars: Vec<(String, Option<f64>)> = rows.iter().map(|r| (r.metric.clone(), r.wall_time_s)).collect();
        io::write_atomic(svg, bar_chart("wall time (s)", &bars).as_bytes())?;
    }
    let bytes = table_bytes(a.out.as_deref(), &rows, &io::SCORE_HEADER)?;
    write_out(a.out.as_deref(), &bytes)
}

enum ReportInput {
    Correlation(CorrelationReport),
    Sweep(Vec<SweepRow>),
    Scores(Vec<ScoreRow>),
}

fn read_report_input(path: &Path) -> Result<ReportInput> {
    if Format::from_path(path) == Format::Json {
        return Ok(ReportInput::Correlation(io::read_report(path)?));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default().trim();
    if header == "k,score" {
        Ok(ReportInput::Sweep(io::read_table(path)?))
    } else if header.starts_with("model,bundle,metric,value") {
        Ok(ReportInput::Scores(io::read_scores(path)?))
    } else {
        bail!("{}: unrecognized table header {header:?}", path.display())
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let input = read_report_input(&a.input)?;
    let svg_out = a
        .out
        .as_deref()
        .is_some_and(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")));
    let bytes = if svg_out {
        match &input {
            ReportInput::Correlation(r) => report_chart(r),
            ReportInput::Sweep(rows) => {
                let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.score)).collect();
                line_chart("k-NN score", "k", "score", &points)
            }
            ReportInput::Scores(rows) => {
                let timed = rows.iter().all(|r| r.wall_time_s.is_some());
                let bars: Vec<(String, Option<f64>)> = rows
                    .iter()
                    .map(|r| (r.metric.clone(), if timed { r.wall_time_s } else { Some(r.value) }))
                    .collect();
                bar_chart(if timed { "wall time (s)" } else { "score" }, &bars)
            }
        }
    } else {
        markdown(&input)
    };
    write_out(a.out.as_deref(), bytes.as_bytes())
}

fn markdown(input: &ReportInput) -> String {
    let mut s = String::new();
    match input {
        ReportInput::Correlation(r) => {
            writeln!(s, "{} against {} performance, {} candidates\n", r.measure, r.target, r.n_candidates).unwrap();
            s.push_str("| metric | value | n |\n|---|---:|---:|\n");
            for m in &r.results {
                let v = m.value.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                writeln!(s, "| {} | {v} | {} |", m.metric, m.n_effective).unwrap();
            }
        }
        ReportInput::Sweep(rows) => {
            s.push_str("| k | score |\n|---:|---:|\n");
            for r in rows {
                writeln!(s, "| {} | {:.4} |", r.k, r.score).unwrap();
            }
        }
        ReportInput::Scores(rows) => {
            s.push_str("| model | bundle | metric | value | wall time (s) |\n|---|---|---|---:|---:|\n");
            for r in rows {
                let w = r.wall_time_s.map_or(String::new(), |w| format!("{w:.4}"));
                writeln!(s, "| {} | {} | {} | {:.6} | {w} |", r.model, r.bundle, r.metric, r.value).unwrap();
            }
        }
    }
    s
}
