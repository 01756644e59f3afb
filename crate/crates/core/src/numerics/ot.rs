//! Exact discrete optimal transport via the transportation simplex
//! (network simplex on the complete bipartite graph).

use nalgebra::DMatrix;

use super::NumericsError;

/// Tolerance on each marginal summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub value: f64,
    /// Non-zero `(source, target, mass)` entries.
    pub flows: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn row_marginals(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for &(i, _, f) in &self.flows {
            out[i] += f;
        }
        out
    }

    pub fn col_marginals(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(_, j, f) in &self.flows {
            out[j] += f;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

struct Tree {
    m: usize,
    cells: Vec<Cell>,
    /// Basic cell ids incident to each node; rows are `0..m`, columns `m..m+n`.
    incident: Vec<Vec<usize>>,
}

impl Tree {
    fn endpoints(&self, id: usize) -> (usize, usize) {
        let c = self.cells[id];
        (c.row, self.m + c.col)
    }

    fn other(&self, id: usize, node: usize) -> usize {
        let (a, b) = self.endpoints(id);
        if a == node {
            b
        } else {
            a
        }
    }

    fn add(&mut self, cell: Cell) -> usize {
        let id = self.cells.len();
        self.cells.push(cell);
        let (a, b) = self.endpoints(id);
        self.incident[a].push(id);
        self.incident[b].push(id);
        id
    }

    /// Replaces basic cell `id` by `cell`, keeping ids stable.
    fn replace(&mut self, id: usize, cell: Cell) {
        let (a, b) = self.endpoints(id);
        self.incident[a].retain(|&e| e != id);
        self.incident[b].retain(|&e| e != id);
        self.cells[id] = cell;
        let (a, b) = self.endpoints(id);
        self.incident[a].push(id);
        self.incident[b].push(id);
    }
}

fn check_weights(w: &[f64], side: &str) -> Result<(), NumericsError> {
    if w.is_empty() {
        return Err(NumericsError::InvalidInput(format!("{side} weights are empty")));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(NumericsError::InvalidInput(format!(
            "{side} weights must be finite and nonnegative"
        )));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(NumericsError::WeightSum {
            side: side.to_string(),
            sum: s,
        });
    }
    Ok(())
}

/// Minimum transport cost between two probability vectors.
pub fn ot_exact(wa: &[f64], wb: &[f64], cost: &DMatrix<f64>) -> Result<f64, NumericsError> {
    ot_plan(wa, wb, cost).map(|p| p.value)
}

/// Optimal plan and its cost.
pub fn ot_plan(wa: &[f64], wb: &[f64], cost: &DMatrix<f64>) -> Result<TransportPlan, NumericsError> {
    check_weights(wa, "source")?;
    check_weights(wb, "target")?;
    if cost.shape() != (wa.len(), wb.len()) {
        return Err(NumericsError::DimensionMismatch(format!(
            "cost is {}x{}, weights are {} and {}",
            cost.nrows(),
            cost.ncols(),
            wa.len(),
            wb.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(NumericsError::InvalidInput(
            "costs must be finite and nonnegative".into(),
        ));
    }
    // Zero-mass points never carry flow.
    let rows: Vec<usize> = (0..wa.len()).filter(|&i| wa[i] > 0.0).collect();
    let cols: Vec<usize> = (0..wb.len()).filter(|&j| wb[j] > 0.0).collect();
    let supply: Vec<f64> = rows.iter().map(|&i| wa[i]).collect();
    let sa: f64 = supply.iter().sum();
    let sb: f64 = cols.iter().map(|&j| wb[j]).sum();
    // Rescale the demand so both sides carry identical total mass.
    let demand: Vec<f64> = cols.iter().map(|&j| wb[j] * sa / sb).collect();
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cost[(rows[i], cols[j])]);

    let flows = transport_simplex(&supply, &demand, &sub)?;
    let mut value = 0.0;
    let mut out = Vec::new();
    for (i, j, f) in flows {
        if f > 0.0 {
            value += f * sub[(i, j)];
            out.push((rows[i], cols[j], f));
        }
    }
    Ok(TransportPlan { value, flows: out })
}

fn transport_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &DMatrix<f64>,
) -> Result<Vec<(usize, usize, f64)>, NumericsError> {
    let (m, n) = (supply.len(), demand.len());
    let nodes = m + n;
    let mut tree = Tree {
        m,
        cells: Vec::with_capacity(nodes - 1),
        incident: vec![Vec::new(); nodes],
    };

    // North-west corner start: exactly m + n - 1 basic cells forming a spanning tree.
    let (mut ra, mut rb) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let f = ra[i].min(rb[j]);
        tree.add(Cell { row: i, col: j, flow: f });
        ra[i] -= f;
        rb[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && ra[i] < rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let max_pivots = 50 * nodes * nodes + 1000;
    let mut potential = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut stack = Vec::with_capacity(nodes);

    for _ in 0..max_pivots {
        // Potentials u_i + v_j = c_ij on basic cells, rooted at row 0.
        parent.fill(usize::MAX);
        depth[0] = 0;
        potential[0] = 0.0;
        stack.clear();
        stack.push(0);
        let mut seen = vec![false; nodes];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &id in &tree.incident[u] {
                let w = tree.other(id, u);
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                parent[w] = id;
                depth[w] = depth[u] + 1;
                let c = tree.cells[id];
                potential[w] = cost[(c.row, c.col)] - potential[u];
                stack.push(w);
            }
        }

        // Dantzig entering rule.
        let mut best = (-tol, usize::MAX, usize::MAX);
        for r in 0..m {
            for c in 0..n {
                let reduced = cost[(r, c)] - potential[r] - potential[m + c];
                if reduced < best.0 {
                    best = (reduced, r, c);
                }
            }
        }
        if best.1 == usize::MAX {
            return Ok(tree.cells.iter().map(|c| (c.row, c.col, c.flow)).collect());
        }
        let (er, ec) = (best.1, best.2);

        // Tree path from column node back to row node.
        let (mut a, mut b) = (m + ec, er);
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        while depth[a] > depth[b] {
            from_col.push(parent[a]);
            a = tree.other(parent[a], a);
        }
        while depth[b] > depth[a] {
            from_row.push(parent[b]);
            b = tree.other(parent[b], b);
        }
        while a != b {
            from_col.push(parent[a]);
            a = tree.other(parent[a], a);
            from_row.push(parent[b]);
            b = tree.other(parent[b], b);
        }
        from_row.reverse();
        let path: Vec<usize> = from_col.into_iter().chain(from_row).collect();

        // Alternate signs starting with a decrease next to the entering column.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &id in path.iter().step_by(2) {
            if tree.cells[id].flow < theta {
                theta = tree.cells[id].flow;
                leaving = id;
            }
        }
        for (k, &id) in path.iter().enumerate() {
            if k % 2 == 0 {
                tree.cells[id].flow = (tree.cells[id].flow - theta).max(0.0);
            } else {
                tree.cells[id].flow += theta;
            }
        }
        tree.replace(leaving, Cell { row: er, col: ec, flow: theta });
    }
    Err(NumericsError::NoConvergence(format!(
        "transportation simplex exceeded {max_pivots} pivots"
    )))
}
