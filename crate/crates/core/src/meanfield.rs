//! Mean-field limits of the particle dynamics: characteristic equations,
//! push-forward measures, the continuum field equation, the Picard
//! fixed-point characterization, weak-form residuals, and the block-sampled
//! construction used when the connectivity profile is not continuous.
//!
//! The characteristic system for an atomic initial measure
//! `mu0 = sum_j m_j delta_{(zeta_j, x_j)}` closes into an `M`-atom system
//!
//! ```text
//! d/dt Z^{x_j} = sum_i m_i K_t(W(x_j, x_i), Z^{x_j}|[0,t], Z^{x_i}|[0,t])
//! ```
//!
//! integrated by the same scheme as the finite particle system, so a particle
//! run with pointwise-sampled weights is reproduced bit-for-bit. The
//! continuum field solver collocates `du/dt (t,x) = int K_t(W(x,y), ...) dy`
//! at cell centers with midpoint quadrature, which again coincides with the
//! particle discretization by construction.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{
    integrate_frozen, integrate_self_consistent, EngineSetup, MemoryKernel,
};
use crate::error::{CoreError, CoreResult};
use crate::graphon::{sample_averaged, sample_pointwise, uniform_nodes, Graphon};
use crate::quad::{scaled, GL16_NODES, GL16_WEIGHTS};
use crate::trajectory::{fmt_f64, sup_distance, Ensemble, TimeGrid, Trajectory};

const MASS_DEFECT_TOL: f64 = 1e-12;

fn check_masses(masses: &[f64]) -> CoreResult<()> {
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(CoreError::Validation(
            "masses must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > MASS_DEFECT_TOL {
        return Err(CoreError::Validation(format!(
            "masses must sum to 1 (defect {:e} exceeds {MASS_DEFECT_TOL:e})",
            (total - 1.0).abs()
        )));
    }
    Ok(())
}

fn check_labels(labels: &[f64]) -> CoreResult<()> {
    if labels.iter().any(|x| !x.is_finite() || !(0.0..=1.0).contains(x)) {
        return Err(CoreError::Validation(
            "labels must lie in the unit interval".into(),
        ));
    }
    Ok(())
}

/// Uniform masses `1/M` for `m` atoms.
pub fn uniform_masses(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

// ---------------------------------------------------------------------------
// Measure types
// ---------------------------------------------------------------------------

/// Finitely supported probability measure on `R^d x I`: `M` state atoms with
/// labels in the unit interval and nonnegative masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointMeasure {
    dim: usize,
    atoms: Vec<f64>,
    labels: Vec<f64>,
    masses: Vec<f64>,
}

impl LabeledPointMeasure {
    pub fn new(
        dim: usize,
        atoms: Vec<f64>,
        labels: Vec<f64>,
        masses: Vec<f64>,
    ) -> CoreResult<Self> {
        if dim == 0 {
            return Err(CoreError::Domain("state dimension must be >= 1".into()));
        }
        let m = labels.len();
        if m == 0 {
            return Err(CoreError::Domain("measure needs at least one atom".into()));
        }
        if atoms.len() != m * dim || masses.len() != m {
            return Err(CoreError::Shape(format!(
                "measure with {m} labels needs {m} x {dim} atom values and {m} masses, got {} and {}",
                atoms.len(),
                masses.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Validation("atom states must be finite".into()));
        }
        check_labels(&labels)?;
        check_masses(&masses)?;
        Ok(LabeledPointMeasure {
            dim,
            atoms,
            labels,
            masses,
        })
    }

    /// Measure with uniform masses `1/M`.
    pub fn uniform(dim: usize, atoms: Vec<f64>, labels: Vec<f64>) -> CoreResult<Self> {
        let m = labels.len();
        LabeledPointMeasure::new(dim, atoms, labels, uniform_masses(m))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    pub fn atoms_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn label(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Finitely supported probability measure on `C([0,T], R^d) x I`: `M`
/// trajectory atoms with labels and masses.
#[derive(Debug, Clone)]
pub struct LabeledPathMeasure {
    atoms: Vec<Trajectory>,
    labels: Vec<f64>,
    masses: Vec<f64>,
}

impl LabeledPathMeasure {
    pub fn new(atoms: Vec<Trajectory>, labels: Vec<f64>, masses: Vec<f64>) -> CoreResult<Self> {
        let m = atoms.len();
        if m == 0 {
            return Err(CoreError::Domain("measure needs at least one atom".into()));
        }
        if labels.len() != m || masses.len() != m {
            return Err(CoreError::Shape(format!(
                "measure with {m} path atoms needs {m} labels and masses, got {} and {}",
                labels.len(),
                masses.len()
            )));
        }
        let grid = atoms[0].grid();
        let dim = atoms[0].dim();
        if atoms.iter().any(|a| a.grid() != grid || a.dim() != dim) {
            return Err(CoreError::Shape(
                "path atoms must share one grid and one dimension".into(),
            ));
        }
        check_labels(&labels)?;
        check_masses(&masses)?;
        Ok(LabeledPathMeasure {
            atoms,
            labels,
            masses,
        })
    }

    pub fn uniform(atoms: Vec<Trajectory>, labels: Vec<f64>) -> CoreResult<Self> {
        let m = atoms.len();
        LabeledPathMeasure::new(atoms, labels, uniform_masses(m))
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn grid(&self) -> TimeGrid {
        self.atoms[0].grid()
    }

    pub fn atom(&self, j: usize) -> &Trajectory {
        &self.atoms[j]
    }

    pub fn atoms(&self) -> &[Trajectory] {
        &self.atoms
    }

    pub fn label(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Push-forward under evaluation at grid node `node` (keeping labels).
    pub fn slice(&self, node: usize) -> CoreResult<LabeledPointMeasure> {
        if node > self.grid().steps() {
            return Err(CoreError::Domain(format!(
                "slice node {node} outside grid with {} steps",
                self.grid().steps()
            )));
        }
        let mut atoms = Vec::with_capacity(self.len() * self.dim());
        for a in &self.atoms {
            atoms.extend_from_slice(a.node_values(node));
        }
        LabeledPointMeasure::new(self.dim(), atoms, self.labels.clone(), self.masses.clone())
    }
}

/// Measurable family of point measures, constant on each block of the
/// uniform `n`-partition of the unit interval.
#[derive(Debug, Clone)]
pub struct FiberedPointMeasure {
    fibers: Vec<LabeledPointMeasure>,
}

impl FiberedPointMeasure {
    pub fn new(fibers: Vec<LabeledPointMeasure>) -> CoreResult<Self> {
        if fibers.is_empty() {
            return Err(CoreError::Domain("fibered measure needs >= 1 block".into()));
        }
        let dim = fibers[0].dim();
        if fibers.iter().any(|f| f.dim() != dim) {
            return Err(CoreError::Shape(
                "all fibers must share one state dimension".into(),
            ));
        }
        Ok(FiberedPointMeasure { fibers })
    }

    pub fn n_blocks(&self) -> usize {
        self.fibers.len()
    }

    pub fn fiber(&self, i: usize) -> &LabeledPointMeasure {
        &self.fibers[i]
    }

    pub fn fibers(&self) -> &[LabeledPointMeasure] {
        &self.fibers
    }
}

/// Measurable family of path measures, constant on each block of the uniform
/// `n`-partition of the unit interval.
#[derive(Debug, Clone)]
pub struct FiberedPathMeasure {
    fibers: Vec<LabeledPathMeasure>,
}

impl FiberedPathMeasure {
    pub fn new(fibers: Vec<LabeledPathMeasure>) -> CoreResult<Self> {
        if fibers.is_empty() {
            return Err(CoreError::Domain("fibered measure needs >= 1 block".into()));
        }
        let grid = fibers[0].grid();
        let dim = fibers[0].dim();
        if fibers.iter().any(|f| f.grid() != grid || f.dim() != dim) {
            return Err(CoreError::Shape(
                "all fibers must share one grid and one dimension".into(),
            ));
        }
        Ok(FiberedPathMeasure { fibers })
    }

    pub fn n_blocks(&self) -> usize {
        self.fibers.len()
    }

    pub fn fiber(&self, i: usize) -> &LabeledPathMeasure {
        &self.fibers[i]
    }

    pub fn fibers(&self) -> &[LabeledPathMeasure] {
        &self.fibers
    }

    /// Blockwise push-forward under evaluation at grid node `node`.
    pub fn slice(&self, node: usize) -> CoreResult<FiberedPointMeasure> {
        FiberedPointMeasure::new(
            self.fibers
                .iter()
                .map(|f| f.slice(node))
                .collect::<CoreResult<Vec<_>>>()?,
        )
    }
}

/// Collocated solution `u(t, x_j)` of the continuum field equation on cell
/// centers `x_j = (j - 1/2) / n_x`.
#[derive(Debug, Clone)]
pub struct ContinuumField {
    xgrid: Vec<f64>,
    fields: Vec<Trajectory>,
}

impl ContinuumField {
    pub fn new(xgrid: Vec<f64>, fields: Vec<Trajectory>) -> CoreResult<Self> {
        if xgrid.is_empty() || xgrid.len() != fields.len() {
            return Err(CoreError::Shape(format!(
                "field needs one trajectory per pivot, got {} pivots and {} trajectories",
                xgrid.len(),
                fields.len()
            )));
        }
        check_labels(&xgrid)?;
        let grid = fields[0].grid();
        let dim = fields[0].dim();
        if fields.iter().any(|f| f.grid() != grid || f.dim() != dim) {
            return Err(CoreError::Shape(
                "field trajectories must share one grid and one dimension".into(),
            ));
        }
        Ok(ContinuumField { xgrid, fields })
    }

    pub fn n_x(&self) -> usize {
        self.xgrid.len()
    }

    pub fn xgrid(&self) -> &[f64] {
        &self.xgrid
    }

    pub fn field(&self, j: usize) -> &Trajectory {
        &self.fields[j]
    }

    pub fn fields(&self) -> &[Trajectory] {
        &self.fields
    }

    pub fn grid(&self) -> TimeGrid {
        self.fields[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    /// Long-format CSV `t,x,v0..`: all pivots per time node, full precision.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> CoreResult<()> {
        let dim = self.dim();
        let mut header = String::from("t,x");
        for c in 0..dim {
            header.push_str(&format!(",v{c}"));
        }
        writeln!(out, "{header}")?;
        let grid = self.grid();
        for i in 0..=grid.steps() {
            for (j, x) in self.xgrid.iter().enumerate() {
                let mut line = format!("{},{}", fmt_f64(grid.node(i)), fmt_f64(*x));
                for v in self.fields[j].node_values(i) {
                    line.push(',');
                    line.push_str(&fmt_f64(*v));
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Characteristic and continuum solvers
// ---------------------------------------------------------------------------

fn pairwise_weights(g: &Graphon, labels: &[f64]) -> Vec<f64> {
    let m = labels.len();
    let mut w = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            w[j * m + i] = g.eval(labels[j], labels[i]);
        }
    }
    w
}

/// Integrate the characteristic system of the atomic initial measure `mu0`
/// under kernel `K` and connectivity profile `g`: the closed `M`-atom system
/// whose solution is the path family `Z^{x_j}(zeta_j, mu0)`. Returns the
/// push-forward path measure with the labels and masses of `mu0`.
pub fn solve_characteristics(
    kernel: &MemoryKernel,
    g: &Graphon,
    mu0: &LabeledPointMeasure,
    grid: TimeGrid,
) -> CoreResult<LabeledPathMeasure> {
    let weights = pairwise_weights(g, mu0.labels());
    let setup = EngineSetup {
        kernel,
        weights: &weights,
        masses: mu0.masses(),
        dim: mu0.dim(),
        grid,
        paranoid: false,
    };
    let atoms = integrate_self_consistent(&setup, mu0.atoms_flat())?;
    LabeledPathMeasure::new(atoms, mu0.labels().to_vec(), mu0.masses().to_vec())
}

/// Collocate the continuum field equation at `n_x` cell centers with midpoint
/// quadrature in the label variable. `u0` holds the initial field values at
/// the cell centers, flat `n_x x dim`. The discretization is identical to an
/// `n_x`-particle system with pointwise-sampled weights, so the two agree
/// bit-for-bit.
pub fn solve_continuum(
    kernel: &MemoryKernel,
    g: &Graphon,
    u0: &[f64],
    dim: usize,
    grid: TimeGrid,
) -> CoreResult<ContinuumField> {
    if dim == 0 {
        return Err(CoreError::Domain("state dimension must be >= 1".into()));
    }
    if u0.is_empty() || u0.len() % dim != 0 {
        return Err(CoreError::Shape(format!(
            "initial field must hold n_x x dim {dim} values, got {}",
            u0.len()
        )));
    }
    let n_x = u0.len() / dim;
    let nodes = uniform_nodes(n_x)?;
    let w = sample_pointwise(g, &nodes)?;
    let masses = uniform_masses(n_x);
    let setup = EngineSetup {
        kernel,
        weights: w.entries(),
        masses: &masses,
        dim,
        grid,
        paranoid: false,
    };
    let fields = integrate_self_consistent(&setup, u0)?;
    ContinuumField::new(nodes, fields)
}

/// Evaluate a scalar initial profile at the `n_x` cell centers.
pub fn sample_profile(f: impl Fn(f64) -> f64, n_x: usize) -> CoreResult<Vec<f64>> {
    Ok(uniform_nodes(n_x)?.into_iter().map(f).collect())
}

/// Represent a continuum field as measures: the fibered family of one Dirac
/// path per block, and the flattened labeled path measure with uniform
/// masses.
pub fn continuum_to_measure(
    u: &ContinuumField,
) -> CoreResult<(FiberedPathMeasure, LabeledPathMeasure)> {
    let n = u.n_x();
    let fibers = (0..n)
        .map(|j| {
            LabeledPathMeasure::new(vec![u.field(j).clone()], vec![u.xgrid()[j]], vec![1.0])
        })
        .collect::<CoreResult<Vec<_>>>()?;
    let flat = LabeledPathMeasure::uniform(u.fields().to_vec(), u.xgrid().to_vec())?;
    Ok((FiberedPathMeasure::new(fibers)?, flat))
}

// ---------------------------------------------------------------------------
// Picard fixed point
// ---------------------------------------------------------------------------

/// Per-sweep record of a Picard iteration.
#[derive(Debug, Clone)]
pub struct IterationReport {
    /// Number of sweeps performed (the returned measure is the last one).
    pub iterations: usize,
    /// Max sup-distance between corresponding atoms of successive iterates,
    /// one entry per sweep.
    pub defects: Vec<f64>,
}

/// Picard iteration for the fixed point characterizing the mean-field path
/// measure: sweep `j+1` integrates every atom against the frozen sweep-`j`
/// path family problem and the defect is the largest sup-distance between
/// corresponding atoms of successive sweeps. Starts from constant-in-time
/// atoms. The self-consistent scheme of [`solve_characteristics`] is a
/// bit-exact fixed point of one sweep, so the limits agree.
pub fn fixed_point_iterate(
    kernel: &MemoryKernel,
    g: &Graphon,
    mu0: &LabeledPointMeasure,
    grid: TimeGrid,
    tol: f64,
    max_iter: usize,
) -> CoreResult<(LabeledPathMeasure, IterationReport)> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(CoreError::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(CoreError::Domain("max_iter must be >= 1".into()));
    }
    let weights = pairwise_weights(g, mu0.labels());
    let setup = EngineSetup {
        kernel,
        weights: &weights,
        masses: mu0.masses(),
        dim: mu0.dim(),
        grid,
        paranoid: false,
    };
    let t_end = grid.t_end();
    let mut current: Vec<Trajectory> = (0..mu0.len())
        .map(|j| Trajectory::constant(grid, mu0.atom(j)))
        .collect::<CoreResult<Vec<_>>>()?;
    let mut defects = Vec::new();
    for sweep in 1..=max_iter {
        let next = integrate_frozen(&setup, &current)?;
        let mut defect = 0.0f64;
        for (a, b) in next.iter().zip(current.iter()) {
            defect = defect.max(sup_distance(a, b, t_end)?);
        }
        defects.push(defect);
        current = next;
        if defect <= tol {
            let measure = LabeledPathMeasure::new(
                current,
                mu0.labels().to_vec(),
                mu0.masses().to_vec(),
            )?;
            return Ok((
                measure,
                IterationReport {
                    iterations: sweep,
                    defects,
                },
            ));
        }
    }
    Err(CoreError::NoConvergence {
        iterations: max_iter,
        defects,
    })
}

// ---------------------------------------------------------------------------
// Weak-form residual
// ---------------------------------------------------------------------------

/// Analytic test functions `phi(zeta, x)` with exact first-coordinate state
/// derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    /// `phi = 1` (mass conservation probe).
    One,
    /// `phi = zeta_1`.
    Coord,
    /// `phi = zeta_1^2`.
    CoordSq,
    /// `phi = b(x) zeta_1` with the smooth bump
    /// `b(x) = exp(1 - 1/(1 - (2x-1)^2))` on `(0,1)`, zero at the endpoints.
    BumpCoord,
}

fn bump(x: f64) -> f64 {
    let u = 2.0 * x - 1.0;
    if u.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

impl TestFunction {
    pub fn eval(&self, zeta: &[f64], x: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Coord => zeta[0],
            TestFunction::CoordSq => zeta[0] * zeta[0],
            TestFunction::BumpCoord => bump(x) * zeta[0],
        }
    }

    /// Exact partial derivative in the first state coordinate (the scalar
    /// interaction rate drives every coordinate equally, and the catalog
    /// functions depend on the first coordinate only).
    pub fn dzeta(&self, zeta: &[f64], x: f64) -> f64 {
        match self {
            TestFunction::One => 0.0,
            TestFunction::Coord => 1.0,
            TestFunction::CoordSq => 2.0 * zeta[0],
            TestFunction::BumpCoord => bump(x),
        }
    }

    pub fn parse(s: &str) -> CoreResult<Self> {
        match s {
            "one" => Ok(TestFunction::One),
            "coord" => Ok(TestFunction::Coord),
            "coord_sq" => Ok(TestFunction::CoordSq),
            "bump_coord" => Ok(TestFunction::BumpCoord),
            other => Err(CoreError::Validation(format!(
                "unknown test function '{other}' (catalog: one, coord, coord_sq, bump_coord)"
            ))),
        }
    }
}

/// Result of a weak-form residual evaluation.
#[derive(Debug, Clone, Copy)]
pub struct WeakFormResidual {
    /// `|d/dt <phi, mu_t> - <dzeta phi . K, mu (x) mu>|` at the node.
    pub value: f64,
    /// True when the node sits on the grid boundary and a one-sided
    /// second-order difference replaced the centered one.
    pub one_sided: bool,
}

/// Residual of the weak equation satisfied by the mean-field path measure at
/// grid node `node`: the time derivative of the `phi`-moment (centered
/// second-order differences at interior nodes) minus the double integral of
/// `dzeta phi` against the kernel along the atom histories.
pub fn weak_form_residual(
    mu: &LabeledPathMeasure,
    kernel: &MemoryKernel,
    g: &Graphon,
    test: TestFunction,
    node: usize,
) -> CoreResult<WeakFormResidual> {
    let grid = mu.grid();
    let steps = grid.steps();
    if steps < 2 {
        return Err(CoreError::Domain(
            "weak-form residual needs a grid with >= 2 steps".into(),
        ));
    }
    if node > steps {
        return Err(CoreError::Domain(format!(
            "node {node} outside grid with {steps} steps"
        )));
    }
    let m = mu.len();
    let h = grid.h();
    let moment = |i: usize| -> f64 {
        let mut acc = 0.0;
        for j in 0..m {
            acc += mu.masses()[j] * test.eval(mu.atom(j).node_values(i), mu.label(j));
        }
        acc
    };
    let (ddt, one_sided) = if node == 0 {
        (
            (-3.0 * moment(0) + 4.0 * moment(1) - moment(2)) / (2.0 * h),
            true,
        )
    } else if node == steps {
        (
            (3.0 * moment(steps) - 4.0 * moment(steps - 1) + moment(steps - 2)) / (2.0 * h),
            true,
        )
    } else {
        ((moment(node + 1) - moment(node - 1)) / (2.0 * h), false)
    };

    let mut interaction = 0.0;
    for j in 0..m {
        let dphi = test.dzeta(mu.atom(j).node_values(node), mu.label(j));
        if dphi == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for i in 0..m {
            let w0 = g.eval(mu.label(j), mu.label(i));
            inner += mu.masses()[i] * kernel.evaluate(w0, mu.atom(j), mu.atom(i), node)?;
        }
        interaction += mu.masses()[j] * dphi * inner;
    }
    Ok(WeakFormResidual {
        value: (ddt - interaction).abs(),
        one_sided,
    })
}

// ---------------------------------------------------------------------------
// Initial laws and the block construction
// ---------------------------------------------------------------------------

/// Polynomial profile `p(x) = c_0 + c_1 x + ...` over the label interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    coeffs: Vec<f64>,
}

impl Profile {
    pub fn new(coeffs: Vec<f64>) -> CoreResult<Self> {
        if coeffs.is_empty() {
            return Err(CoreError::Domain("profile needs >= 1 coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(CoreError::Validation("profile coefficients must be finite".into()));
        }
        Ok(Profile { coeffs })
    }

    pub fn constant(c: f64) -> CoreResult<Self> {
        Profile::new(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Catalog of scalar initial laws fibered over the label: the law of the
/// state at label `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Normal with polynomial mean and standard deviation profiles.
    Gaussian { mean: Profile, sd: Profile },
    /// Uniform on `[lo(x), hi(x))`.
    Uniform { lo: Profile, hi: Profile },
    /// Point mass at `value(x)`.
    Dirac { value: Profile },
}

/// One mixture component of a block law: a scalar law pinned at a quadrature
/// node.
#[derive(Debug, Clone, Copy)]
enum ScalarLaw {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Dirac { value: f64 },
}

impl ScalarLaw {
    fn mean(&self) -> f64 {
        match self {
            ScalarLaw::Gaussian { mean, .. } => *mean,
            ScalarLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarLaw::Dirac { value } => *value,
        }
    }

    fn variance(&self) -> f64 {
        match self {
            ScalarLaw::Gaussian { sd, .. } => sd * sd,
            ScalarLaw::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            ScalarLaw::Dirac { .. } => 0.0,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Gaussian { mean, sd } => {
                if *sd == 0.0 {
                    *mean
                } else {
                    Normal::new(*mean, *sd)
                        .expect("validated standard deviation")
                        .sample(rng)
                }
            }
            ScalarLaw::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            ScalarLaw::Dirac { value } => *value,
        }
    }
}

impl InitialLaw {
    fn at(&self, x: f64) -> CoreResult<ScalarLaw> {
        Ok(match self {
            InitialLaw::Gaussian { mean, sd } => {
                let s = sd.eval(x);
                if s < 0.0 {
                    return Err(CoreError::Domain(format!(
                        "gaussian law needs sd(x) >= 0, got {s} at x = {x}"
                    )));
                }
                ScalarLaw::Gaussian {
                    mean: mean.eval(x),
                    sd: s,
                }
            }
            InitialLaw::Uniform { lo, hi } => {
                let (a, b) = (lo.eval(x), hi.eval(x));
                if !(a < b) {
                    return Err(CoreError::Domain(format!(
                        "uniform law needs lo(x) < hi(x), got [{a}, {b}) at x = {x}"
                    )));
                }
                ScalarLaw::Uniform { lo: a, hi: b }
            }
            InitialLaw::Dirac { value } => ScalarLaw::Dirac {
                value: value.eval(x),
            },
        })
    }
}

/// Block-averaged law: a mixture of the fiber laws at Gauss quadrature nodes
/// of one block of the uniform `n`-partition.
#[derive(Debug, Clone)]
pub struct BlockLaw {
    components: Vec<(f64, ScalarLaw)>,
}

impl BlockLaw {
    /// Mixture weights sum.
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|(w, _)| w).sum()
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|(w, c)| w * c.mean()).sum()
    }

    /// Standard deviation of the mixture.
    pub fn sd(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .components
            .iter()
            .map(|(w, c)| w * (c.variance() + c.mean() * c.mean()))
            .sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    /// Draw one value: pick a mixture component by weight, then sample it.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, c) in &self.components {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components
            .last()
            .expect("block laws are nonempty")
            .1
            .sample(rng)
    }
}

/// Block averages `n * integral over block k of the fiber law family`,
/// realized as mixtures over a 16-point Gauss rule per block.
pub fn block_initial_measures(family: &InitialLaw, n: usize) -> CoreResult<Vec<BlockLaw>> {
    if n == 0 {
        return Err(CoreError::Domain("block count must be >= 1".into()));
    }
    let mut laws = Vec::with_capacity(n);
    for k in 0..n {
        let a = k as f64 / n as f64;
        let b = (k + 1) as f64 / n as f64;
        let mut components = Vec::with_capacity(GL16_NODES.len());
        for (x, w) in scaled(&GL16_NODES, &GL16_WEIGHTS, a, b) {
            components.push((w * n as f64, family.at(x)?));
        }
        laws.push(BlockLaw { components });
    }
    Ok(laws)
}

/// Sample the block particle system: `N = n * m` particles, `m` iid initial
/// states per block drawn from the block laws with a seeded generator, labels
/// at the fine cell centers, weights block-averaged from `g` and expanded
/// blockwise, integrated under `K`. Deterministic for a fixed seed: draws are
/// consumed block-major, one component pick plus one value draw per particle.
pub fn sample_block_system(
    family: &InitialLaw,
    n: usize,
    m: usize,
    seed: u64,
    g: &Graphon,
    kernel: &MemoryKernel,
    grid: TimeGrid,
) -> CoreResult<Ensemble> {
    if n == 0 || m == 0 {
        return Err(CoreError::Domain("block counts n, m must be >= 1".into()));
    }
    let n_total = n * m;
    let laws = block_initial_measures(family, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi0 = Vec::with_capacity(n_total);
    for law in &laws {
        for _ in 0..m {
            phi0.push(law.sample(&mut rng));
        }
    }
    let labels = uniform_nodes(n_total)?;
    let coarse = sample_averaged(g, n)?;
    let mut w = vec![0.0; n_total * n_total];
    for k in 0..n {
        for i in 0..m {
            for l in 0..n {
                for j in 0..m {
                    w[(k * m + i) * n_total + (l * m + j)] = coarse.entry(k, l);
                }
            }
        }
    }
    let w_in = crate::graphon::WeightMatrix::new(n_total, w, labels)?;
    crate::dynamics::simulate_memory(kernel, &w_in, &phi0, 1, grid)
}

/// Local empirical measure of a blockwise-ordered ensemble: fiber `i` is the
/// uniform measure on the `m` trajectories of block `i`.
pub fn local_empirical_measure(e: &Ensemble, n: usize, m: usize) -> CoreResult<FiberedPathMeasure> {
    if n == 0 || m == 0 || e.len() != n * m {
        return Err(CoreError::Shape(format!(
            "ensemble with {} members cannot split into {n} blocks of {m}",
            e.len()
        )));
    }
    let fibers = (0..n)
        .map(|i| {
            LabeledPathMeasure::uniform(
                e.members()[i * m..(i + 1) * m].to_vec(),
                e.labels()[i * m..(i + 1) * m].to_vec(),
            )
        })
        .collect::<CoreResult<Vec<_>>>()?;
    FiberedPathMeasure::new(fibers)
}

/// Recorded sensitivity of the characteristic flow to its initial state and
/// label: `e^{L_K t} dzeta + L_W (e^{L_K t} - 1) dx`.
pub fn lipschitz_flow_bound(l_k: f64, l_w: f64, dzeta: f64, dx: f64, t: f64) -> f64 {
    let growth = (l_k * t).exp();
    growth * dzeta + l_w * (growth - 1.0) * dx
}
