//! Graphons (symmetric kernels on the label square) and their finite weight
//! matrices.
//!
//! The label space is `I = [0, 1)`. A graphon `W : I x I -> R` induces finite
//! weight matrices in two ways, both with nodes at cell centers
//! `x_k = (k - 1/2) / N`:
//!
//! ```text
//! pointwise:  w_kl = W(x_k, x_l)
//! averaged:   w_kl = N^2 * integral of W over I_k x I_l,   I_k = [(k-1)/N, k/N)
//! ```
//!
//! Cell averages use a fixed tensor 8-point Gauss-Legendre rule per axis for
//! the builtin families and exact cell-overlap sums for step graphons. Signed
//! graphons are allowed throughout; symmetry is required.

use std::io::Write;

use crate::error::{CoreError, CoreResult};
use crate::quad;
use crate::trajectory::fmt_f64;

/// Builtin graphon families.
///
/// All are symmetric; `Threshold` is discontinuous (non-Lipschitz), the rest
/// are Lipschitz with the constants reported by
/// [`Graphon::lipschitz_constant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphonFamily {
    /// `W(x, y) = c` (any sign).
    Constant(f64),
    /// `W(x, y) = x * y`.
    Product,
    /// `W(x, y) = min(x, y)`.
    Min,
    /// `W(x, y) = cos(pi * (x - y))` (signed).
    Cosine,
    /// `W(x, y) = 1` if `|x - y| <= r`, else `0`.
    Threshold(f64),
}

/// A graphon: a builtin family or a step function built from a
/// [`WeightMatrix`].
#[derive(Debug, Clone)]
pub enum Graphon {
    Family(GraphonFamily),
    Step(WeightMatrix),
}

impl Graphon {
    pub fn constant(c: f64) -> CoreResult<Self> {
        if !c.is_finite() {
            return Err(CoreError::Domain(format!("constant graphon value {c}")));
        }
        Ok(Graphon::Family(GraphonFamily::Constant(c)))
    }

    pub fn product() -> Self {
        Graphon::Family(GraphonFamily::Product)
    }

    pub fn min() -> Self {
        Graphon::Family(GraphonFamily::Min)
    }

    pub fn cosine() -> Self {
        Graphon::Family(GraphonFamily::Cosine)
    }

    pub fn threshold(r: f64) -> CoreResult<Self> {
        if !r.is_finite() || r <= 0.0 || r >= 1.0 {
            return Err(CoreError::Domain(format!(
                "threshold radius must lie in (0, 1), got {r}"
            )));
        }
        Ok(Graphon::Family(GraphonFamily::Threshold(r)))
    }

    /// Evaluate at `(x, y)`. Step graphons look up the cell containing the
    /// point; the right endpoint `x = 1` is folded into the last cell.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Graphon::Family(f) => match *f {
                GraphonFamily::Constant(c) => c,
                GraphonFamily::Product => x * y,
                GraphonFamily::Min => x.min(y),
                GraphonFamily::Cosine => (std::f64::consts::PI * (x - y)).cos(),
                GraphonFamily::Threshold(r) => {
                    if (x - y).abs() <= r {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
            Graphon::Step(m) => {
                let n = m.n();
                let cell = |v: f64| (((v * n as f64).floor() as usize).min(n - 1)).max(0);
                m.entry(cell(x), cell(y))
            }
        }
    }

    /// Lipschitz constant with respect to `sqrt(dx^2 + dy^2)`, when one exists.
    /// `Threshold` and step graphons return `None`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match self {
            Graphon::Family(GraphonFamily::Constant(_)) => Some(0.0),
            Graphon::Family(GraphonFamily::Product) => Some(std::f64::consts::SQRT_2),
            Graphon::Family(GraphonFamily::Min) => Some(1.0),
            Graphon::Family(GraphonFamily::Cosine) => {
                Some(std::f64::consts::PI * std::f64::consts::SQRT_2)
            }
            Graphon::Family(GraphonFamily::Threshold(_)) => None,
            Graphon::Step(_) => None,
        }
    }

    /// Largest absolute value the graphon attains on the label square.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Graphon::Family(GraphonFamily::Constant(c)) => c.abs(),
            Graphon::Family(GraphonFamily::Product) => 1.0,
            Graphon::Family(GraphonFamily::Min) => 1.0,
            Graphon::Family(GraphonFamily::Cosine) => 1.0,
            Graphon::Family(GraphonFamily::Threshold(_)) => 1.0,
            Graphon::Step(m) => m
                .entries()
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs())),
        }
    }
}

/// Step graphon constant on the cells of the matrix's uniform partition.
/// The matrix must be symmetric.
pub fn step_graphon(w: WeightMatrix) -> CoreResult<Graphon> {
    let n = w.n();
    for k in 0..n {
        for l in (k + 1)..n {
            let (a, b) = (w.entry(k, l), w.entry(l, k));
            if a != b {
                return Err(CoreError::Validation(format!(
                    "step graphon needs a symmetric matrix; entries ({k},{l}) = {a} and ({l},{k}) = {b} differ"
                )));
            }
        }
    }
    Ok(Graphon::Step(w))
}

/// Square weight matrix together with the label-space nodes its rows and
/// columns live at.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>, // row-major n x n
    nodes: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(n: usize, entries: Vec<f64>, nodes: Vec<f64>) -> CoreResult<Self> {
        if n == 0 {
            return Err(CoreError::Domain("weight matrix needs n >= 1".into()));
        }
        if entries.len() != n * n {
            return Err(CoreError::Shape(format!(
                "weight matrix needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if nodes.len() != n {
            return Err(CoreError::Shape(format!(
                "weight matrix needs {n} nodes, got {}",
                nodes.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Validation(
                "weight matrix entries must be finite".into(),
            ));
        }
        for w in nodes.windows(2) {
            if !(w[0] < w[1]) {
                return Err(CoreError::Validation(
                    "weight matrix nodes must be strictly increasing".into(),
                ));
            }
        }
        if nodes[0] < 0.0 || *nodes.last().unwrap() >= 1.0 {
            return Err(CoreError::Validation(
                "weight matrix nodes must lie in [0, 1)".into(),
            ));
        }
        Ok(WeightMatrix { n, entries, nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.n + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// CSV layout: first row the nodes, then `n` rows of matrix entries.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> CoreResult<()> {
        let row = |vals: &[f64]| {
            vals.iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(out, "{}", row(&self.nodes))?;
        for k in 0..self.n {
            writeln!(out, "{}", row(&self.entries[k * self.n..(k + 1) * self.n]))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> CoreResult<Self> {
        let parse_row = |line: &str, what: &str| -> CoreResult<Vec<f64>> {
            line.split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        CoreError::Validation(format!("{what}: cannot parse '{f}' as a number"))
                    })
                })
                .collect()
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let nodes = parse_row(
            lines
                .next()
                .ok_or_else(|| CoreError::Validation("empty weight matrix CSV".into()))?,
            "node row",
        )?;
        let n = nodes.len();
        let mut entries = Vec::with_capacity(n * n);
        for k in 0..n {
            let line = lines.next().ok_or_else(|| {
                CoreError::Validation(format!("weight matrix CSV ended before row {k}"))
            })?;
            let row = parse_row(line, "matrix row")?;
            if row.len() != n {
                return Err(CoreError::Validation(format!(
                    "weight matrix row {k} has {} entries, expected {n}",
                    row.len()
                )));
            }
            entries.extend_from_slice(&row);
        }
        if lines.next().is_some() {
            return Err(CoreError::Validation(
                "weight matrix CSV has trailing rows".into(),
            ));
        }
        WeightMatrix::new(n, entries, nodes)
    }
}

/// Cell-center nodes `x_k = (k - 1/2) / N` for `k = 1, ..., N`.
pub fn uniform_nodes(n: usize) -> CoreResult<Vec<f64>> {
    if n == 0 {
        return Err(CoreError::Domain("node count must be >= 1".into()));
    }
    Ok((1..=n).map(|k| (k as f64 - 0.5) / n as f64).collect())
}

/// Pointwise sampling: `w_kl = W(x_k, x_l)` at the given nodes.
pub fn sample_pointwise(g: &Graphon, nodes: &[f64]) -> CoreResult<WeightMatrix> {
    let n = nodes.len();
    if n == 0 {
        return Err(CoreError::Domain("pointwise sampling needs nodes".into()));
    }
    let mut entries = Vec::with_capacity(n * n);
    for k in 0..n {
        for l in 0..n {
            entries.push(g.eval(nodes[k], nodes[l]));
        }
    }
    WeightMatrix::new(n, entries, nodes.to_vec())
}

/// Averaged sampling: `w_kl = N^2 * integral of W over I_k x I_l` with
/// `I_k = [(k-1)/N, k/N)`, nodes at cell centers.
pub fn sample_averaged(g: &Graphon, n: usize) -> CoreResult<WeightMatrix> {
    if n == 0 {
        return Err(CoreError::Domain("averaged sampling needs n >= 1".into()));
    }
    let nodes = uniform_nodes(n)?;
    let nn = n as f64;
    let mut entries = vec![0.0; n * n];
    match g {
        Graphon::Family(_) => {
            for k in 0..n {
                let (a0, a1) = (k as f64 / nn, (k + 1) as f64 / nn);
                let xq: Vec<(f64, f64)> =
                    quad::scaled(&quad::GL8_NODES, &quad::GL8_WEIGHTS, a0, a1).collect();
                for l in 0..n {
                    let (b0, b1) = (l as f64 / nn, (l + 1) as f64 / nn);
                    let mut acc = 0.0;
                    for (y, wy) in quad::scaled(&quad::GL8_NODES, &quad::GL8_WEIGHTS, b0, b1) {
                        for &(x, wx) in &xq {
                            acc += wx * wy * g.eval(x, y);
                        }
                    }
                    entries[k * n + l] = nn * nn * acc;
                }
            }
        }
        Graphon::Step(m) => {
            // Exact: sum source-cell values weighted by cell overlap areas.
            let p = m.n();
            let pf = p as f64;
            let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
            for k in 0..n {
                let (a0, a1) = (k as f64 / nn, (k + 1) as f64 / nn);
                for l in 0..n {
                    let (b0, b1) = (l as f64 / nn, (l + 1) as f64 / nn);
                    let mut acc = 0.0;
                    for pk in 0..p {
                        let ox = overlap(a0, a1, pk as f64 / pf, (pk + 1) as f64 / pf);
                        if ox <= 0.0 {
                            continue;
                        }
                        for pl in 0..p {
                            let oy = overlap(b0, b1, pl as f64 / pf, (pl + 1) as f64 / pf);
                            if oy > 0.0 {
                                acc += ox * oy * m.entry(pk, pl);
                            }
                        }
                    }
                    entries[k * n + l] = nn * nn * acc;
                }
            }
        }
    }
    WeightMatrix::new(n, entries, nodes)
}

/// `L^p` distance (`p` in `{1, 2}`) between two graphons on the label square,
/// estimated by the midpoint rule on a `resolution x resolution` grid.
pub fn lp_distance(a: &Graphon, b: &Graphon, p: u32, resolution: usize) -> CoreResult<f64> {
    if p != 1 && p != 2 {
        return Err(CoreError::Domain(format!("lp_distance supports p in {{1, 2}}, got {p}")));
    }
    if resolution == 0 {
        return Err(CoreError::Domain("lp_distance needs resolution >= 1".into()));
    }
    let r = resolution as f64;
    let mut acc = 0.0;
    for i in 0..resolution {
        let x = (i as f64 + 0.5) / r;
        for j in 0..resolution {
            let y = (j as f64 + 0.5) / r;
            let d = (a.eval(x, y) - b.eval(x, y)).abs();
            acc += if p == 1 { d } else { d * d };
        }
    }
    acc /= r * r;
    Ok(if p == 1 { acc } else { acc.sqrt() })
}

/// Midpoint-rule estimate of the translation-continuity defect
///
/// ```text
/// sup_x  integral over y of |W(x + delta, y) - W(x, y)| dy,
/// ```
///
/// with `x` probed over `[0, 1 - delta)` so shifted points stay inside the
/// label space.
pub fn continuity_defect(g: &Graphon, delta: f64, probes: usize) -> CoreResult<f64> {
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(CoreError::Domain(format!(
            "continuity defect shift must lie in (0, 1), got {delta}"
        )));
    }
    if probes == 0 {
        return Err(CoreError::Domain("continuity defect needs probes >= 1".into()));
    }
    let pf = probes as f64;
    let mut sup = 0.0f64;
    for i in 0..probes {
        let x = (i as f64 + 0.5) / pf * (1.0 - delta);
        let mut acc = 0.0;
        for j in 0..probes {
            let y = (j as f64 + 0.5) / pf;
            acc += (g.eval(x + delta, y) - g.eval(x, y)).abs();
        }
        sup = sup.max(acc / pf);
    }
    Ok(sup)
}
