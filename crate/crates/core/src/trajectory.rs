//! Uniform time grids, immutable sampled trajectories, and ensembles.
//!
//! A [`TimeGrid`] with horizon `t_end` and `steps` intervals has nodes
//!
//! ```text
//! t_i = (i * t_end) / steps,          i = 0, ..., steps,
//! ```
//!
//! so `node(steps) == t_end` holds bit-exactly and the spacing is uniform to
//! machine precision. A [`Trajectory`] stores one state vector per node and is
//! immutable once built; stepwise construction goes through
//! [`TrajectoryBuilder`]. Histories handed to memory kernels are always
//! restrictions of trajectories to `[0, t]`, which keeps them append-only.

use std::io::Write;

use crate::error::{CoreError, CoreResult};

/// Uniform grid on `[0, t_end]` with `steps` intervals (`steps + 1` nodes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> CoreResult<Self> {
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(CoreError::Domain(format!(
                "time grid horizon must be finite and positive, got {t_end}"
            )));
        }
        if steps == 0 {
            return Err(CoreError::Domain(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `t_end / steps`, the increment used by the integrators.
    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    /// Node `t_i = (i * t_end) / steps`. The final node is exactly `t_end`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        (i as f64 * self.t_end) / self.steps as f64
    }

    /// Index of the node that equals `t` bit-exactly, or an alignment error.
    pub fn node_index(&self, t: f64) -> CoreResult<usize> {
        if !t.is_finite() || t < 0.0 || t > self.t_end {
            return Err(CoreError::Domain(format!(
                "time {t} outside [0, {}]",
                self.t_end
            )));
        }
        let guess = (t / self.t_end * self.steps as f64).round() as usize;
        for i in [guess, guess.saturating_sub(1), guess + 1] {
            if i <= self.steps && self.node(i) == t {
                return Ok(i);
            }
        }
        Err(CoreError::Alignment(format!(
            "time {t} is not a node of the grid (t_end {}, steps {})",
            self.t_end, self.steps
        )))
    }
}

/// Immutable trajectory: one `dim`-vector per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>, // (steps + 1) * dim, node-major
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> CoreResult<Self> {
        if dim == 0 {
            return Err(CoreError::Domain("trajectory dimension must be >= 1".into()));
        }
        let expect = (grid.steps + 1) * dim;
        if values.len() != expect {
            return Err(CoreError::Shape(format!(
                "trajectory needs {expect} values ({} nodes x dim {dim}), got {}",
                grid.steps + 1,
                values.len()
            )));
        }
        Ok(Trajectory { grid, dim, values })
    }

    /// Trajectory holding the same state at every node.
    pub fn constant(grid: TimeGrid, state: &[f64]) -> CoreResult<Self> {
        if state.is_empty() {
            return Err(CoreError::Domain("trajectory dimension must be >= 1".into()));
        }
        let mut values = Vec::with_capacity((grid.steps + 1) * state.len());
        for _ in 0..=grid.steps {
            values.extend_from_slice(state);
        }
        Trajectory::new(grid, state.len(), values)
    }

    /// Sample a scalar function of time at every node (dimension 1).
    pub fn from_scalar_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..=grid.steps).map(|i| f(grid.node(i))).collect();
        Trajectory {
            grid,
            dim: 1,
            values,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State at node `i` (panics on out-of-range node index).
    pub fn node_values(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Scalar state at node `i`; only valid for dimension-1 trajectories.
    pub fn scalar_at(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluate at time `t` in `[0, t_end]`: stored value bit-exactly when `t`
    /// is a node, linear interpolation between neighbours otherwise.
    pub fn evaluate(&self, t: f64) -> CoreResult<Vec<f64>> {
        if !t.is_finite() || t < 0.0 || t > self.grid.t_end {
            return Err(CoreError::Domain(format!(
                "evaluation time {t} outside [0, {}]",
                self.grid.t_end
            )));
        }
        let n = self.grid.steps;
        let mut lo = ((t / self.grid.t_end) * n as f64).floor() as usize;
        if lo >= n {
            lo = n - 1;
        }
        // Guard against floating-point misplacement of the cell index.
        while lo > 0 && self.grid.node(lo) > t {
            lo -= 1;
        }
        while lo + 1 < n && self.grid.node(lo + 1) < t {
            lo += 1;
        }
        let (t0, t1) = (self.grid.node(lo), self.grid.node(lo + 1));
        if t == t0 {
            return Ok(self.node_values(lo).to_vec());
        }
        if t == t1 {
            return Ok(self.node_values(lo + 1).to_vec());
        }
        let theta = (t - t0) / (t1 - t0);
        let a = self.node_values(lo);
        let b = self.node_values(lo + 1);
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| x + theta * (y - x))
            .collect())
    }

    /// Restriction to `[0, t]`; `t` must be a grid node bit-exactly.
    pub fn restrict(&self, t: f64) -> CoreResult<Trajectory> {
        let i = self.grid.node_index(t)?;
        if i == 0 {
            return Err(CoreError::Domain(
                "restriction horizon must be positive".into(),
            ));
        }
        let grid = TimeGrid {
            t_end: self.grid.node(i),
            steps: i,
        };
        Ok(Trajectory {
            grid,
            dim: self.dim,
            values: self.values[..(i + 1) * self.dim].to_vec(),
        })
    }

    /// Write CSV with header `t,v0,...,v{d-1}` at full double precision
    /// (17 significant digits).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> CoreResult<()> {
        write!(out, "t")?;
        for j in 0..self.dim {
            write!(out, ",v{j}")?;
        }
        writeln!(out)?;
        for i in 0..=self.grid.steps {
            write!(out, "{}", fmt_f64(self.grid.node(i)))?;
            for v in self.node_values(i) {
                write!(out, ",{}", fmt_f64(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Format a float with 17 significant digits (full double precision).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Builder appending one node state at a time; the trajectory itself stays
/// immutable.
#[derive(Debug, Clone)]
pub struct TrajectoryBuilder {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl TrajectoryBuilder {
    pub fn new(grid: TimeGrid, initial: &[f64]) -> CoreResult<Self> {
        if initial.is_empty() {
            return Err(CoreError::Domain("trajectory dimension must be >= 1".into()));
        }
        let mut values = Vec::with_capacity((grid.steps + 1) * initial.len());
        values.extend_from_slice(initial);
        Ok(TrajectoryBuilder {
            grid,
            dim: initial.len(),
            values,
        })
    }

    pub fn filled_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn push(&mut self, state: &[f64]) -> CoreResult<()> {
        if state.len() != self.dim {
            return Err(CoreError::Shape(format!(
                "appending state of dimension {}, builder dimension is {}",
                state.len(),
                self.dim
            )));
        }
        if self.filled_nodes() > self.grid.steps {
            return Err(CoreError::Shape("builder already complete".into()));
        }
        self.values.extend_from_slice(state);
        Ok(())
    }

    pub fn finish(self) -> CoreResult<Trajectory> {
        Trajectory::new(self.grid, self.dim, self.values)
    }
}

/// `max_{t_i <= t} |a(t_i) - b(t_i)|_2` over shared grid nodes.
pub fn sup_distance(a: &Trajectory, b: &Trajectory, t: f64) -> CoreResult<f64> {
    if a.grid != b.grid {
        return Err(CoreError::Shape(
            "sup_distance requires trajectories on the same grid".into(),
        ));
    }
    if a.dim != b.dim {
        return Err(CoreError::Shape(format!(
            "sup_distance dimension mismatch: {} vs {}",
            a.dim, b.dim
        )));
    }
    let last = a.grid.node_index(t)?;
    let mut sup = 0.0f64;
    for i in 0..=last {
        let (x, y) = (a.node_values(i), b.node_values(i));
        let mut s = 0.0;
        for (u, v) in x.iter().zip(y) {
            let d = u - v;
            s += d * d;
        }
        sup = sup.max(s.sqrt());
    }
    Ok(sup)
}

/// A family of trajectories on one shared grid, tagged with scalar labels
/// (positions in the label space `[0, 1)`).
#[derive(Debug, Clone)]
pub struct Ensemble {
    trajectories: Vec<Trajectory>,
    labels: Vec<f64>,
}

impl Ensemble {
    pub fn new(trajectories: Vec<Trajectory>, labels: Vec<f64>) -> CoreResult<Self> {
        if trajectories.is_empty() {
            return Err(CoreError::Domain("ensemble needs at least one member".into()));
        }
        if trajectories.len() != labels.len() {
            return Err(CoreError::Shape(format!(
                "ensemble has {} trajectories but {} labels",
                trajectories.len(),
                labels.len()
            )));
        }
        let grid = trajectories[0].grid;
        let dim = trajectories[0].dim;
        for tr in &trajectories {
            if tr.grid != grid || tr.dim != dim {
                return Err(CoreError::Shape(
                    "all ensemble members must share one grid and dimension".into(),
                ));
            }
        }
        Ok(Ensemble {
            trajectories,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        self.trajectories[0].grid
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim
    }

    pub fn member(&self, k: usize) -> &Trajectory {
        &self.trajectories[k]
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn into_parts(self) -> (Vec<Trajectory>, Vec<f64>) {
        (self.trajectories, self.labels)
    }

    /// Long-format CSV with header `t,particle,x_label,v0,...,v{d-1}`;
    /// rows ordered by node index, then particle index.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> CoreResult<()> {
        let dim = self.dim();
        write!(out, "t,particle,x_label")?;
        for j in 0..dim {
            write!(out, ",v{j}")?;
        }
        writeln!(out)?;
        let grid = self.grid();
        for i in 0..=grid.steps() {
            for (k, tr) in self.trajectories.iter().enumerate() {
                write!(
                    out,
                    "{},{k},{}",
                    fmt_f64(grid.node(i)),
                    fmt_f64(self.labels[k])
                )?;
                for v in tr.node_values(i) {
                    write!(out, ",{}", fmt_f64(*v))?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
