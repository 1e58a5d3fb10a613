//! Particle systems with co-evolving weights and their memory-kernel
//! reduction.
//!
//! The coupled formulation integrates states and weights jointly:
//!
//! ```text
//! d/dt phi^k = (1/N) * sum_l  w_kl * C(phi^k, phi^l)
//! d/dt w_kl  = F(w_kl, phi^k, phi^l)
//! ```
//!
//! Eliminating the weights yields the memory formulation
//!
//! ```text
//! d/dt phi^k = (1/N) * sum_l  K_t(w_kl(0), phi^k|[0,t], phi^l|[0,t])
//! ```
//!
//! where, for weight dynamics `F`, the kernel is the weight flow evaluated
//! along the pair of histories times the coupling at their endpoints:
//! `K_t(w0, f, g) = Phi_t[w0, f, g] * C(f(t), g(t))`. For the linear dynamics
//! `F = -a w + g` the flow has the closed convolution form
//!
//! ```text
//! w(t) = w0 e^{-a t} + integral_0^t g(f(s), g(s)) e^{-a (t - s)} ds,
//! ```
//!
//! implemented with trapezoid quadrature updated incrementally.
//!
//! All integrators are Heun's method (explicit trapezoid, second order). For
//! non-local right-hand sides the predictor evaluates the kernel with
//! histories up to `t_i` and the corrector appends the predicted endpoint and
//! evaluates at `t_{i+1}`; stateful kernels co-integrate their per-pair weight
//! state once per accepted step, which is arithmetically identical to
//! re-solving the weight equation from `t = 0` because histories are
//! append-only (cross-checked by the paranoid mode). Inner sums always
//! accumulate in index order, so results are independent of thread count.

use rayon::prelude::*;

use crate::catalog::{
    parse_coupling, parse_pair_function, parse_weight_dynamics, PairCoupling, PairFunction,
    Tokens, WeightDynamics,
};
use crate::error::{CoreError, CoreResult};
use crate::graphon::WeightMatrix;
use crate::trajectory::{Ensemble, TimeGrid, Trajectory};

// ---------------------------------------------------------------------------
// Shared single-step arithmetic. Every code path that advances a weight state
// goes through these two helpers so that incremental caches, paranoid
// re-solves, and pure kernel evaluation agree bit-for-bit.
// ---------------------------------------------------------------------------

#[inline]
fn heun_weight_step(
    f: &WeightDynamics,
    w: f64,
    h: f64,
    phi0: &[f64],
    psi0: &[f64],
    phi1: &[f64],
    psi1: &[f64],
) -> f64 {
    let k1 = f.eval(w, phi0, psi0);
    let k2 = f.eval(w + h * k1, phi1, psi1);
    w + 0.5 * h * (k1 + k2)
}

#[inline]
fn duhamel_step_factor(decay: f64, h: f64) -> f64 {
    (-decay * h).exp()
}

/// One trapezoid update of the convolution integral under decay `a`:
/// `conv(t+h) = e^{-a h} (conv(t) + h/2 g(t)) + h/2 g(t+h)`.
#[inline]
fn duhamel_conv_step(conv: f64, eh: f64, h: f64, g_prev: f64, g_next: f64) -> f64 {
    eh * (conv + 0.5 * h * g_prev) + 0.5 * h * g_next
}

// ---------------------------------------------------------------------------
// Memory kernels
// ---------------------------------------------------------------------------

/// How a [`MemoryKernel`] maps `(w0, f|[0,t], g|[0,t])` to a scalar rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelRule {
    /// `K = c`, ignoring weight and histories.
    Constant(f64),
    /// `K = C(f(t), g(t))`, ignoring the weight.
    Instantaneous(PairCoupling),
    /// Closed-form weight `w0 e^{-a t} + (g * e^{-a .})(t)` times `C` at the
    /// endpoints.
    Duhamel {
        coupling: PairCoupling,
        decay: f64,
        forcing: PairFunction,
    },
    /// Weight flow of `F` along the pair of histories times `C` at the
    /// endpoints.
    Flow {
        coupling: PairCoupling,
        weight: WeightDynamics,
    },
}

/// Non-local-in-time interaction kernel acting on pairs of state histories.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryKernel {
    rule: KernelRule,
}

impl MemoryKernel {
    pub fn constant(c: f64) -> CoreResult<Self> {
        if !c.is_finite() {
            return Err(CoreError::Domain(format!("constant kernel value {c}")));
        }
        Ok(MemoryKernel {
            rule: KernelRule::Constant(c),
        })
    }

    pub fn instantaneous(coupling: PairCoupling) -> Self {
        MemoryKernel {
            rule: KernelRule::Instantaneous(coupling),
        }
    }

    /// Kernel induced by weight dynamics `F`: the reduction of the coupled
    /// system to the memory formulation. `F = constant:0` gives the static
    /// kernel `w0 * C`.
    pub fn from_flow(coupling: PairCoupling, weight: WeightDynamics) -> Self {
        MemoryKernel {
            rule: KernelRule::Flow { coupling, weight },
        }
    }

    /// Closed-form kernel for the linear dynamics `F = -a w + g`, `a > 0`.
    pub fn duhamel(coupling: PairCoupling, decay: f64, forcing: PairFunction) -> CoreResult<Self> {
        if !decay.is_finite() || decay <= 0.0 {
            return Err(CoreError::Domain(format!(
                "duhamel kernel needs decay a > 0, got {decay}"
            )));
        }
        Ok(MemoryKernel {
            rule: KernelRule::Duhamel {
                coupling,
                decay,
                forcing,
            },
        })
    }

    pub fn rule(&self) -> &KernelRule {
        &self.rule
    }

    /// Recorded Lipschitz constant of `(w0, f, g) -> K_t(w0, f, g)` with
    /// respect to `|d w0| + sup|d f| + sup|d g|`, valid over `[0, t_end]` for
    /// initial weights bounded by `w0_max`.
    ///
    /// Flow kernels record `e^{L_F T} (L_C + sup|C| L_F T)`; kernels with an
    /// unbounded coupling and weight-history feedback report infinity.
    pub fn lipschitz_bound(&self, w0_max: f64, t_end: f64) -> f64 {
        // A zero Lipschitz factor kills the associated sensitivity term even
        // when the companion sup bound is infinite.
        fn damp(sup: f64, lip_factor: f64) -> f64 {
            if lip_factor == 0.0 {
                0.0
            } else {
                sup * lip_factor
            }
        }
        match &self.rule {
            KernelRule::Constant(_) => 0.0,
            KernelRule::Instantaneous(c) => c.lipschitz_bound(),
            KernelRule::Duhamel {
                coupling,
                decay,
                forcing,
            } => {
                let w_rng = w0_max.max(forcing.sup_bound() / decay);
                let hist = w_rng * coupling.lipschitz_bound()
                    + damp(
                        coupling.sup_bound(),
                        forcing.lipschitz_bound() * (1.0 - (-decay * t_end).exp()) / decay,
                    );
                // Max over the w0 direction (slope at most sup|C|) and the
                // history directions.
                coupling.sup_bound().max(hist)
            }
            KernelRule::Flow { coupling, weight } => {
                let lf = weight.lipschitz_bound();
                (lf * t_end).exp()
                    * (coupling.lipschitz_bound() + damp(coupling.sup_bound(), lf * t_end))
            }
        }
    }

    /// Bound on `|K_t|` over `[0, t_end]` for initial weights bounded by
    /// `w0_max`; infinite when the coupling is unbounded.
    pub fn sup_bound(&self, w0_max: f64, t_end: f64) -> f64 {
        match &self.rule {
            KernelRule::Constant(c) => c.abs(),
            KernelRule::Instantaneous(c) => c.sup_bound(),
            KernelRule::Duhamel {
                coupling,
                decay,
                forcing,
            } => w0_max.max(forcing.sup_bound() / decay) * coupling.sup_bound(),
            KernelRule::Flow { coupling, weight } => {
                weight.weight_range(w0_max, t_end) * coupling.sup_bound()
            }
        }
    }

    /// Pure evaluation of `K` at grid node `node` along two full histories,
    /// re-solving any internal weight state from `t = 0`. Bit-identical to
    /// the incremental caches used by the integrators.
    pub fn evaluate(
        &self,
        w0: f64,
        f: &Trajectory,
        g: &Trajectory,
        node: usize,
    ) -> CoreResult<f64> {
        if f.grid() != g.grid() || f.dim() != g.dim() {
            return Err(CoreError::Shape(
                "kernel evaluation needs histories on one grid with one dimension".into(),
            ));
        }
        if node > f.grid().steps() {
            return Err(CoreError::Domain(format!(
                "kernel evaluation node {node} outside grid with {} steps",
                f.grid().steps()
            )));
        }
        let h = f.grid().h();
        Ok(match &self.rule {
            KernelRule::Constant(c) => *c,
            KernelRule::Instantaneous(c) => c.eval(f.node_values(node), g.node_values(node)),
            KernelRule::Duhamel {
                coupling,
                decay,
                forcing,
            } => {
                let eh = duhamel_step_factor(*decay, h);
                let mut conv = 0.0;
                let mut dec = 1.0;
                for i in 0..node {
                    let gp = forcing.eval(f.node_values(i), g.node_values(i));
                    let gn = forcing.eval(f.node_values(i + 1), g.node_values(i + 1));
                    conv = duhamel_conv_step(conv, eh, h, gp, gn);
                    dec *= eh;
                }
                (w0 * dec + conv) * coupling.eval(f.node_values(node), g.node_values(node))
            }
            KernelRule::Flow { coupling, weight } => {
                let mut w = w0;
                for i in 0..node {
                    w = heun_weight_step(
                        weight,
                        w,
                        h,
                        f.node_values(i),
                        g.node_values(i),
                        f.node_values(i + 1),
                        g.node_values(i + 1),
                    );
                }
                w * coupling.eval(f.node_values(node), g.node_values(node))
            }
        })
    }

    /// Canonical id string (`flow:<C>:<F>`, `duhamel:<a>:<g>`,
    /// `instantaneous:<C>`, `constant:<c>`).
    pub fn id_string(&self) -> String {
        match &self.rule {
            KernelRule::Constant(c) => format!("constant:{c}"),
            KernelRule::Instantaneous(c) => format!("instantaneous:{c}"),
            KernelRule::Duhamel { decay, forcing, .. } => format!("duhamel:{decay}:{forcing}"),
            KernelRule::Flow { coupling, weight } => format!("flow:{coupling}:{weight}"),
        }
    }

    /// Parse a kernel id. `duhamel:<a>:<g>` and bare `instantaneous` take
    /// their coupling from `coupling`; `flow:<C>:<F>` and
    /// `instantaneous:<C>` embed it.
    pub fn parse(s: &str, coupling: Option<PairCoupling>) -> CoreResult<Self> {
        let need = |c: Option<PairCoupling>| {
            c.ok_or_else(|| {
                CoreError::Validation(format!(
                    "kernel '{s}' needs a pair coupling supplied alongside the id"
                ))
            })
        };
        let mut t = Tokens::new(s);
        let kernel = match t.next()? {
            "constant" => MemoryKernel::constant(t.next_f64()?)?,
            "instantaneous" => {
                if t.is_done() {
                    MemoryKernel::instantaneous(need(coupling)?)
                } else {
                    MemoryKernel::instantaneous(parse_coupling(&mut t)?)
                }
            }
            "duhamel" => {
                let a = t.next_f64()?;
                let g = parse_pair_function(&mut t)?;
                MemoryKernel::duhamel(need(coupling)?, a, g)?
            }
            "flow" => {
                let c = parse_coupling(&mut t)?;
                let f = parse_weight_dynamics(&mut t)?;
                MemoryKernel::from_flow(c, f)
            }
            other => {
                return Err(CoreError::Validation(format!("unknown kernel '{other}'")));
            }
        };
        t.finish()?;
        Ok(kernel)
    }
}

// ---------------------------------------------------------------------------
// Standalone weight-equation solvers
// ---------------------------------------------------------------------------

fn check_pair_histories(gamma: &Trajectory, gamma2: &Trajectory) -> CoreResult<()> {
    if gamma.grid() != gamma2.grid() || gamma.dim() != gamma2.dim() {
        return Err(CoreError::Shape(
            "weight equation needs both histories on one grid with one dimension".into(),
        ));
    }
    Ok(())
}

/// Heun solution of `dw/dt = F(w, gamma(t), gamma2(t))`, `w(0) = w0`, along
/// the given histories. Returns the scalar weight trajectory.
pub fn solve_weight_ode(
    f: &WeightDynamics,
    w0: f64,
    gamma: &Trajectory,
    gamma2: &Trajectory,
) -> CoreResult<Trajectory> {
    check_pair_histories(gamma, gamma2)?;
    if !w0.is_finite() {
        return Err(CoreError::Domain(format!("initial weight {w0}")));
    }
    let grid = gamma.grid();
    let h = grid.h();
    let mut values = Vec::with_capacity(grid.steps() + 1);
    let mut w = w0;
    values.push(w);
    for i in 0..grid.steps() {
        w = heun_weight_step(
            f,
            w,
            h,
            gamma.node_values(i),
            gamma2.node_values(i),
            gamma.node_values(i + 1),
            gamma2.node_values(i + 1),
        );
        if !w.is_finite() {
            return Err(CoreError::Divergence {
                step: i + 1,
                t: grid.node(i + 1),
                detail: format!("weight state became {w}"),
            });
        }
        values.push(w);
    }
    Trajectory::new(grid, 1, values)
}

/// Weight flow map: the value at time `t` of the weight equation started from
/// `w0` at grid node `t0` along the given histories. Composing over adjacent
/// windows reproduces the full solve exactly because the discrete steps are
/// identical.
pub fn flow_map(
    f: &WeightDynamics,
    w0: f64,
    gamma: &Trajectory,
    gamma2: &Trajectory,
    t0: f64,
    t: f64,
) -> CoreResult<f64> {
    check_pair_histories(gamma, gamma2)?;
    if !w0.is_finite() {
        return Err(CoreError::Domain(format!("initial weight {w0}")));
    }
    let grid = gamma.grid();
    let i0 = grid.node_index(t0)?;
    let i1 = grid.node_index(t)?;
    if i0 > i1 {
        return Err(CoreError::Domain(format!(
            "flow map needs t0 <= t, got t0 = {t0}, t = {t}"
        )));
    }
    let h = grid.h();
    let mut w = w0;
    for i in i0..i1 {
        w = heun_weight_step(
            f,
            w,
            h,
            gamma.node_values(i),
            gamma2.node_values(i),
            gamma.node_values(i + 1),
            gamma2.node_values(i + 1),
        );
        if !w.is_finite() {
            return Err(CoreError::Divergence {
                step: i + 1,
                t: grid.node(i + 1),
                detail: format!("weight state became {w}"),
            });
        }
    }
    Ok(w)
}

/// Closed-form weight for the linear dynamics `F = -a w + g`:
/// `w(t) = w0 e^{-a t} + integral_0^t g(gamma(s), gamma2(s)) e^{-a(t-s)} ds`
/// with the convolution evaluated by trapezoid quadrature at every node.
pub fn duhamel_weight(
    decay: f64,
    forcing: &PairFunction,
    w0: f64,
    gamma: &Trajectory,
    gamma2: &Trajectory,
) -> CoreResult<Trajectory> {
    check_pair_histories(gamma, gamma2)?;
    if !decay.is_finite() || decay <= 0.0 {
        return Err(CoreError::Domain(format!(
            "duhamel weight needs decay a > 0, got {decay}"
        )));
    }
    if !w0.is_finite() {
        return Err(CoreError::Domain(format!("initial weight {w0}")));
    }
    let grid = gamma.grid();
    let h = grid.h();
    let eh = duhamel_step_factor(decay, h);
    let mut values = Vec::with_capacity(grid.steps() + 1);
    let mut conv = 0.0;
    let mut dec = 1.0;
    values.push(w0);
    for i in 0..grid.steps() {
        let gp = forcing.eval(gamma.node_values(i), gamma2.node_values(i));
        let gn = forcing.eval(gamma.node_values(i + 1), gamma2.node_values(i + 1));
        conv = duhamel_conv_step(conv, eh, h, gp, gn);
        dec *= eh;
        values.push(w0 * dec + conv);
    }
    Trajectory::new(grid, 1, values)
}

// ---------------------------------------------------------------------------
// The shared Heun-with-history engine
// ---------------------------------------------------------------------------

/// Per-pair incremental kernel state.
#[derive(Debug, Clone, Copy)]
enum PairState {
    Stateless,
    Flow { w: f64 },
    Duhamel { decay: f64, conv: f64 },
}

pub(crate) struct EngineSetup<'a> {
    pub kernel: &'a MemoryKernel,
    /// Initial weights, row-major `M x M`; entry `(k, l)` feeds the kernel
    /// coupling particle `k` to driver `l`.
    pub weights: &'a [f64],
    /// Quadrature masses of the drivers (length `M`).
    pub masses: &'a [f64],
    pub dim: usize,
    pub grid: TimeGrid,
    /// Re-solve every pair state from `t = 0` after each step and require
    /// bitwise agreement with the incremental cache.
    pub paranoid: bool,
}

/// Read access to the driver family at one node, either the evolving states
/// themselves or a frozen path family.
#[derive(Clone, Copy)]
enum Snapshot<'a> {
    /// Flat `M x dim` state block.
    Flat { data: &'a [f64], dim: usize },
    /// Node `node` of a frozen trajectory family.
    Paths {
        paths: &'a [Trajectory],
        node: usize,
    },
}

impl<'a> Snapshot<'a> {
    #[inline]
    fn get(&self, l: usize) -> &'a [f64] {
        match *self {
            Snapshot::Flat { data, dim } => &data[l * dim..(l + 1) * dim],
            Snapshot::Paths { paths, node } => paths[l].node_values(node),
        }
    }
}

fn init_pair_states(kernel: &MemoryKernel, weights: &[f64]) -> Vec<PairState> {
    match kernel.rule() {
        KernelRule::Constant(_) | KernelRule::Instantaneous(_) => {
            vec![PairState::Stateless; weights.len()]
        }
        KernelRule::Flow { .. } => weights.iter().map(|&w| PairState::Flow { w }).collect(),
        KernelRule::Duhamel { .. } => vec![
            PairState::Duhamel {
                decay: 1.0,
                conv: 0.0
            };
            weights.len()
        ],
    }
}

/// Stage-one rate for row `k`: kernel at node `i` using cached pair states.
/// Returns the offending driver index if the kernel yields a non-finite value.
fn stage1_row(
    kernel: &MemoryKernel,
    w_row: &[f64],
    st_row: &[PairState],
    masses: &[f64],
    self_now: &[f64],
    drivers: Snapshot,
) -> Result<f64, usize> {
    let m = masses.len();
    let mut acc = 0.0;
    match kernel.rule() {
        KernelRule::Constant(c) => {
            for l in 0..m {
                acc += masses[l] * c;
            }
        }
        KernelRule::Instantaneous(cp) => {
            for l in 0..m {
                let v = cp.eval(self_now, drivers.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
        KernelRule::Duhamel { coupling, .. } => {
            for l in 0..m {
                let PairState::Duhamel { decay, conv } = st_row[l] else {
                    unreachable!()
                };
                let v = (w_row[l] * decay + conv) * coupling.eval(self_now, drivers.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
        KernelRule::Flow { coupling, .. } => {
            for l in 0..m {
                let PairState::Flow { w } = st_row[l] else {
                    unreachable!()
                };
                let v = w * coupling.eval(self_now, drivers.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
    }
    Ok(acc)
}

/// Stage-two rate for row `k`: kernel at node `i + 1` with pair states
/// advanced provisionally along the predicted endpoints (not stored).
#[allow(clippy::too_many_arguments)]
fn stage2_row(
    kernel: &MemoryKernel,
    w_row: &[f64],
    st_row: &[PairState],
    masses: &[f64],
    h: f64,
    eh: f64,
    self_now: &[f64],
    self_pred: &[f64],
    drivers_now: Snapshot,
    drivers_pred: Snapshot,
) -> Result<f64, usize> {
    let m = masses.len();
    let mut acc = 0.0;
    match kernel.rule() {
        KernelRule::Constant(c) => {
            for l in 0..m {
                acc += masses[l] * c;
            }
        }
        KernelRule::Instantaneous(cp) => {
            for l in 0..m {
                let v = cp.eval(self_pred, drivers_pred.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
        KernelRule::Duhamel {
            coupling, forcing, ..
        } => {
            for l in 0..m {
                let PairState::Duhamel { decay, conv } = st_row[l] else {
                    unreachable!()
                };
                let gp = forcing.eval(self_now, drivers_now.get(l));
                let gn = forcing.eval(self_pred, drivers_pred.get(l));
                let conv1 = duhamel_conv_step(conv, eh, h, gp, gn);
                let v = (w_row[l] * (decay * eh) + conv1)
                    * coupling.eval(self_pred, drivers_pred.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
        KernelRule::Flow { coupling, weight } => {
            for l in 0..m {
                let PairState::Flow { w } = st_row[l] else {
                    unreachable!()
                };
                let w1 = heun_weight_step(
                    weight,
                    w,
                    h,
                    self_now,
                    drivers_now.get(l),
                    self_pred,
                    drivers_pred.get(l),
                );
                let v = w1 * coupling.eval(self_pred, drivers_pred.get(l));
                if !v.is_finite() {
                    return Err(l);
                }
                acc += masses[l] * v;
            }
        }
    }
    Ok(acc)
}

/// Advance the pair states of row `k` along the accepted endpoints.
fn advance_row(
    kernel: &MemoryKernel,
    st_row: &mut [PairState],
    h: f64,
    eh: f64,
    self_now: &[f64],
    self_next: &[f64],
    drivers_now: Snapshot,
    drivers_next: Snapshot,
) {
    match kernel.rule() {
        KernelRule::Constant(_) | KernelRule::Instantaneous(_) => {}
        KernelRule::Duhamel { forcing, .. } => {
            for (l, st) in st_row.iter_mut().enumerate() {
                let PairState::Duhamel { decay, conv } = *st else {
                    unreachable!()
                };
                let gp = forcing.eval(self_now, drivers_now.get(l));
                let gn = forcing.eval(self_next, drivers_next.get(l));
                *st = PairState::Duhamel {
                    decay: decay * eh,
                    conv: duhamel_conv_step(conv, eh, h, gp, gn),
                };
            }
        }
        KernelRule::Flow { weight, .. } => {
            for (l, st) in st_row.iter_mut().enumerate() {
                let PairState::Flow { w } = *st else {
                    unreachable!()
                };
                *st = PairState::Flow {
                    w: heun_weight_step(
                        weight,
                        w,
                        h,
                        self_now,
                        drivers_now.get(l),
                        self_next,
                        drivers_next.get(l),
                    ),
                };
            }
        }
    }
}

fn validate_setup(setup: &EngineSetup, init_len: usize) -> CoreResult<usize> {
    let m = setup.masses.len();
    if m == 0 {
        return Err(CoreError::Domain("integration needs at least one particle".into()));
    }
    if setup.dim == 0 {
        return Err(CoreError::Domain("state dimension must be >= 1".into()));
    }
    if setup.weights.len() != m * m {
        return Err(CoreError::Shape(format!(
            "weight block must be {m} x {m}, got {} entries",
            setup.weights.len()
        )));
    }
    if init_len != m * setup.dim {
        return Err(CoreError::Shape(format!(
            "initial state block must hold {m} x dim {} values, got {init_len}",
            setup.dim
        )));
    }
    if setup.weights.iter().any(|w| !w.is_finite()) {
        return Err(CoreError::Validation("initial weights must be finite".into()));
    }
    Ok(m)
}

/// Convert per-entity value buffers into trajectories.
fn finish_histories(
    grid: TimeGrid,
    dim: usize,
    hist: Vec<Vec<f64>>,
) -> CoreResult<Vec<Trajectory>> {
    hist.into_iter()
        .map(|values| Trajectory::new(grid, dim, values))
        .collect()
}

fn paranoid_check(
    kernel: &MemoryKernel,
    weights: &[f64],
    states: &[PairState],
    hist: &[Vec<f64>],
    drivers: Option<&[Trajectory]>,
    dim: usize,
    grid: TimeGrid,
    upto: usize,
) -> CoreResult<()> {
    let m = match drivers {
        Some(d) => d.len(),
        None => hist.len(),
    };
    let h = grid.h();
    let eh = match kernel.rule() {
        KernelRule::Duhamel { decay, .. } => duhamel_step_factor(*decay, h),
        _ => 0.0,
    };
    let node_of = |hb: &Vec<f64>, i: usize| -> Vec<f64> { hb[i * dim..(i + 1) * dim].to_vec() };
    for k in 0..hist.len() {
        for l in 0..m {
            let get_drv = |i: usize| -> Vec<f64> {
                match drivers {
                    Some(d) => d[l].node_values(i).to_vec(),
                    None => node_of(&hist[l], i),
                }
            };
            let expect = match kernel.rule() {
                KernelRule::Constant(_) | KernelRule::Instantaneous(_) => continue,
                KernelRule::Flow { weight, .. } => {
                    let mut w = weights[k * m + l];
                    for i in 0..upto {
                        w = heun_weight_step(
                            weight,
                            w,
                            h,
                            &node_of(&hist[k], i),
                            &get_drv(i),
                            &node_of(&hist[k], i + 1),
                            &get_drv(i + 1),
                        );
                    }
                    PairState::Flow { w }
                }
                KernelRule::Duhamel { forcing, .. } => {
                    let mut conv = 0.0;
                    let mut dec = 1.0;
                    for i in 0..upto {
                        let gp = forcing.eval(&node_of(&hist[k], i), &get_drv(i));
                        let gn = forcing.eval(&node_of(&hist[k], i + 1), &get_drv(i + 1));
                        conv = duhamel_conv_step(conv, eh, h, gp, gn);
                        dec *= eh;
                    }
                    PairState::Duhamel { decay: dec, conv }
                }
            };
            let same = match (expect, states[k * m + l]) {
                (PairState::Flow { w: a }, PairState::Flow { w: b }) => a.to_bits() == b.to_bits(),
                (
                    PairState::Duhamel { decay: d1, conv: c1 },
                    PairState::Duhamel { decay: d2, conv: c2 },
                ) => d1.to_bits() == d2.to_bits() && c1.to_bits() == c2.to_bits(),
                _ => false,
            };
            if !same {
                return Err(CoreError::Validation(format!(
                    "paranoid cross-check failed for pair ({k}, {l}) after step {upto}: incremental weight state disagrees with re-solving from t = 0"
                )));
            }
        }
    }
    Ok(())
}

/// Integrate the memory formulation self-consistently: each particle's
/// history both receives and drives the kernel.
pub(crate) fn integrate_self_consistent(
    setup: &EngineSetup,
    init: &[f64],
) -> CoreResult<Vec<Trajectory>> {
    integrate(setup, init, None)
}

/// Integrate against a frozen driver family (one Picard sweep): particle `k`
/// feels `K(w_kl, Y^k, gamma^l)` with `gamma` fixed. At the corrector stage
/// the frozen family is advanced by its own predictor (Euler step with its
/// stage-one slopes), mirroring the self-consistent scheme so that the
/// self-consistent solution is an exact fixed point of the sweep.
pub(crate) fn integrate_frozen(
    setup: &EngineSetup,
    frozen: &[Trajectory],
) -> CoreResult<Vec<Trajectory>> {
    let init: Vec<f64> = frozen
        .iter()
        .flat_map(|tr| tr.node_values(0).to_vec())
        .collect();
    integrate(setup, &init, Some(frozen))
}

fn integrate(
    setup: &EngineSetup,
    init: &[f64],
    frozen: Option<&[Trajectory]>,
) -> CoreResult<Vec<Trajectory>> {
    let m = validate_setup(setup, init.len())?;
    if let Some(fr) = frozen {
        if fr.len() != m {
            return Err(CoreError::Shape(format!(
                "frozen driver family has {} members, weights expect {m}",
                fr.len()
            )));
        }
        for tr in fr {
            if tr.grid() != setup.grid || tr.dim() != setup.dim {
                return Err(CoreError::Shape(
                    "frozen drivers must share the integration grid and dimension".into(),
                ));
            }
        }
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Domain("initial states must be finite".into()));
    }
    let dim = setup.dim;
    let grid = setup.grid;
    let steps = grid.steps();
    let h = grid.h();
    let kernel = setup.kernel;
    let eh = match kernel.rule() {
        KernelRule::Duhamel { decay, .. } => duhamel_step_factor(*decay, h),
        _ => 0.0,
    };

    let mut hist: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let mut v = Vec::with_capacity((steps + 1) * dim);
            v.extend_from_slice(&init[k * dim..(k + 1) * dim]);
            v
        })
        .collect();
    // Pair states of the evolving family against its drivers.
    let mut states = init_pair_states(kernel, setup.weights);
    // In frozen mode the driver family needs its own pair states to compute
    // its stage-one slopes (driver-vs-driver).
    let mut drv_states = if frozen.is_some() {
        init_pair_states(kernel, setup.weights)
    } else {
        Vec::new()
    };

    let mut now: Vec<f64> = init.to_vec();
    let mut pred = vec![0.0; m * dim];
    let mut next = vec![0.0; m * dim];
    let mut drv_pred = vec![0.0; m * dim];

    for i in 0..steps {
        let t_next = grid.node(i + 1);
        let drivers_now = match frozen {
            Some(fr) => Snapshot::Paths { paths: fr, node: i },
            None => Snapshot::Flat { data: &now, dim },
        };

        // Frozen drivers: predictor endpoints from their own stage-one slopes.
        if let Some(fr) = frozen {
            let slopes: Vec<Result<f64, (usize, usize)>> = (0..m)
                .into_par_iter()
                .map(|l| {
                    stage1_row(
                        kernel,
                        &setup.weights[l * m..(l + 1) * m],
                        &drv_states[l * m..(l + 1) * m],
                        setup.masses,
                        fr[l].node_values(i),
                        Snapshot::Paths { paths: fr, node: i },
                    )
                    .map_err(|c| (l, c))
                })
                .collect();
            for (l, r) in slopes.iter().enumerate() {
                match r {
                    Ok(s) => {
                        let base = fr[l].node_values(i);
                        for c in 0..dim {
                            drv_pred[l * dim + c] = base[c] + h * s;
                        }
                    }
                    Err((row, col)) => {
                        return Err(CoreError::KernelValue {
                            step: i,
                            row: *row,
                            col: *col,
                        });
                    }
                }
            }
        }

        // Stage 1: rates at t_i from cached states.
        let r1: Vec<Result<f64, usize>> = (0..m)
            .into_par_iter()
            .map(|k| {
                stage1_row(
                    kernel,
                    &setup.weights[k * m..(k + 1) * m],
                    &states[k * m..(k + 1) * m],
                    setup.masses,
                    &now[k * dim..(k + 1) * dim],
                    drivers_now,
                )
            })
            .collect();
        let mut r1v = vec![0.0; m];
        for (k, r) in r1.iter().enumerate() {
            match r {
                Ok(v) => r1v[k] = *v,
                Err(l) => {
                    return Err(CoreError::KernelValue {
                        step: i,
                        row: k,
                        col: *l,
                    })
                }
            }
        }

        // Predictor (the scalar rate broadcasts to every coordinate).
        for k in 0..m {
            for c in 0..dim {
                let v = now[k * dim + c] + h * r1v[k];
                if !v.is_finite() {
                    return Err(CoreError::Divergence {
                        step: i + 1,
                        t: t_next,
                        detail: format!(
                            "predictor for particle {k} became non-finite (rate {})",
                            r1v[k]
                        ),
                    });
                }
                pred[k * dim + c] = v;
            }
        }

        // Stage 2: rates at t_{i+1} along provisionally advanced states.
        let drivers_pred = match frozen {
            Some(_) => Snapshot::Flat {
                data: &drv_pred,
                dim,
            },
            None => Snapshot::Flat { data: &pred, dim },
        };
        let r2: Vec<Result<f64, usize>> = (0..m)
            .into_par_iter()
            .map(|k| {
                stage2_row(
                    kernel,
                    &setup.weights[k * m..(k + 1) * m],
                    &states[k * m..(k + 1) * m],
                    setup.masses,
                    h,
                    eh,
                    &now[k * dim..(k + 1) * dim],
                    &pred[k * dim..(k + 1) * dim],
                    drivers_now,
                    drivers_pred,
                )
            })
            .collect();
        for (k, r) in r2.iter().enumerate() {
            match r {
                Ok(v) => {
                    for c in 0..dim {
                        let x = now[k * dim + c] + 0.5 * h * (r1v[k] + v);
                        if !x.is_finite() {
                            return Err(CoreError::Divergence {
                                step: i + 1,
                                t: t_next,
                                detail: format!(
                                    "particle {k} state became non-finite ({x}) after the corrector"
                                ),
                            });
                        }
                        next[k * dim + c] = x;
                    }
                }
                Err(l) => {
                    return Err(CoreError::KernelValue {
                        step: i,
                        row: k,
                        col: *l,
                    })
                }
            }
        }

        // Accept: extend histories, advance pair states with accepted values.
        let drivers_next = match frozen {
            Some(fr) => Snapshot::Paths {
                paths: fr,
                node: i + 1,
            },
            None => Snapshot::Flat { data: &next, dim },
        };
        states
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(k, st_row)| {
                advance_row(
                    kernel,
                    st_row,
                    h,
                    eh,
                    &now[k * dim..(k + 1) * dim],
                    &next[k * dim..(k + 1) * dim],
                    drivers_now,
                    drivers_next,
                );
            });
        if let Some(fr) = frozen {
            drv_states
                .par_chunks_mut(m)
                .enumerate()
                .for_each(|(l, st_row)| {
                    advance_row(
                        kernel,
                        st_row,
                        h,
                        eh,
                        fr[l].node_values(i),
                        fr[l].node_values(i + 1),
                        drivers_now,
                        drivers_next,
                    );
                });
        }
        for k in 0..m {
            hist[k].extend_from_slice(&next[k * dim..(k + 1) * dim]);
        }
        std::mem::swap(&mut now, &mut next);

        if setup.paranoid && frozen.is_none() {
            paranoid_check(
                kernel,
                setup.weights,
                &states,
                &hist,
                None,
                dim,
                grid,
                i + 1,
            )?;
        }
    }

    finish_histories(grid, dim, hist)
}

// ---------------------------------------------------------------------------
// Public simulators
// ---------------------------------------------------------------------------

/// Joint solution of the coupled formulation.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub particles: Ensemble,
    /// Scalar weight trajectories, row-major `N x N`, when requested.
    pub weights: Option<Vec<Trajectory>>,
}

fn validate_particle_inputs(
    w_in: &WeightMatrix,
    phi_in: &[f64],
    dim: usize,
) -> CoreResult<usize> {
    if dim == 0 {
        return Err(CoreError::Domain("state dimension must be >= 1".into()));
    }
    let n = w_in.n();
    if phi_in.len() != n * dim {
        return Err(CoreError::Shape(format!(
            "weight matrix is {n} x {n} but initial states hold {} values (dim {dim})",
            phi_in.len()
        )));
    }
    if phi_in.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Domain("initial states must be finite".into()));
    }
    Ok(n)
}

/// Integrate the coupled formulation (states and weights jointly) with Heun's
/// method. `store_weights` retains all `N^2` weight trajectories.
pub fn simulate_coupled(
    coupling: &PairCoupling,
    weight_dyn: &WeightDynamics,
    w_in: &WeightMatrix,
    phi_in: &[f64],
    dim: usize,
    grid: TimeGrid,
    store_weights: bool,
) -> CoreResult<CoupledSolution> {
    let n = validate_particle_inputs(w_in, phi_in, dim)?;
    let steps = grid.steps();
    let h = grid.h();
    let masses = 1.0 / n as f64;

    let mut phi: Vec<f64> = phi_in.to_vec();
    let mut w: Vec<f64> = w_in.entries().to_vec();
    let mut hist: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut v = Vec::with_capacity((steps + 1) * dim);
            v.extend_from_slice(&phi[k * dim..(k + 1) * dim]);
            v
        })
        .collect();
    let mut w_hist: Vec<Vec<f64>> = if store_weights {
        w.iter()
            .map(|&x| {
                let mut v = Vec::with_capacity(steps + 1);
                v.push(x);
                v
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut phi_pred = vec![0.0; n * dim];
    let mut w_pred = vec![0.0; n * n];
    let mut r1 = vec![0.0; n];
    let mut f1 = vec![0.0; n * n];

    for i in 0..steps {
        let t_next = grid.node(i + 1);

        // Stage 1.
        let rows: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let pk = &phi[k * dim..(k + 1) * dim];
                let mut acc = 0.0;
                let mut frow = vec![0.0; n];
                for l in 0..n {
                    let pl = &phi[l * dim..(l + 1) * dim];
                    acc += masses * w[k * n + l] * coupling.eval(pk, pl);
                    frow[l] = weight_dyn.eval(w[k * n + l], pk, pl);
                }
                (acc, frow)
            })
            .collect();
        for (k, (acc, frow)) in rows.into_iter().enumerate() {
            r1[k] = acc;
            f1[k * n..(k + 1) * n].copy_from_slice(&frow);
        }

        // Predictor.
        for k in 0..n {
            for c in 0..dim {
                phi_pred[k * dim + c] = phi[k * dim + c] + h * r1[k];
            }
            for l in 0..n {
                w_pred[k * n + l] = w[k * n + l] + h * f1[k * n + l];
            }
        }
        if phi_pred.iter().chain(w_pred.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::Divergence {
                step: i + 1,
                t: t_next,
                detail: "predictor state became non-finite".into(),
            });
        }

        // Stage 2 and corrector.
        let rows2: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let pk = &phi_pred[k * dim..(k + 1) * dim];
                let mut acc = 0.0;
                let mut frow = vec![0.0; n];
                for l in 0..n {
                    let pl = &phi_pred[l * dim..(l + 1) * dim];
                    acc += masses * w_pred[k * n + l] * coupling.eval(pk, pl);
                    frow[l] = weight_dyn.eval(w_pred[k * n + l], pk, pl);
                }
                (acc, frow)
            })
            .collect();
        for (k, (acc, frow)) in rows2.into_iter().enumerate() {
            for c in 0..dim {
                let v = phi[k * dim + c] + 0.5 * h * (r1[k] + acc);
                if !v.is_finite() {
                    return Err(CoreError::Divergence {
                        step: i + 1,
                        t: t_next,
                        detail: format!("particle {k} state became non-finite"),
                    });
                }
                phi[k * dim + c] = v;
            }
            for l in 0..n {
                let v = w[k * n + l] + 0.5 * h * (f1[k * n + l] + frow[l]);
                if !v.is_finite() {
                    return Err(CoreError::Divergence {
                        step: i + 1,
                        t: t_next,
                        detail: format!("weight ({k}, {l}) became non-finite"),
                    });
                }
                w[k * n + l] = v;
            }
        }

        for k in 0..n {
            hist[k].extend_from_slice(&phi[k * dim..(k + 1) * dim]);
        }
        if store_weights {
            for (buf, &val) in w_hist.iter_mut().zip(w.iter()) {
                buf.push(val);
            }
        }
    }

    let particles = Ensemble::new(finish_histories(grid, dim, hist)?, w_in.nodes().to_vec())?;
    let weights = if store_weights {
        Some(
            w_hist
                .into_iter()
                .map(|v| Trajectory::new(grid, 1, v))
                .collect::<CoreResult<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(CoupledSolution { particles, weights })
}

/// Options for [`simulate_memory_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    /// Cross-validate incremental kernel states against re-solving from
    /// `t = 0` after every step (expensive; bitwise comparison).
    pub paranoid: bool,
}

/// Integrate the memory formulation with Heun's method.
pub fn simulate_memory(
    kernel: &MemoryKernel,
    w_in: &WeightMatrix,
    phi_in: &[f64],
    dim: usize,
    grid: TimeGrid,
) -> CoreResult<Ensemble> {
    simulate_memory_with(kernel, w_in, phi_in, dim, grid, SimulateOptions::default())
}

/// [`simulate_memory`] with explicit [`SimulateOptions`].
pub fn simulate_memory_with(
    kernel: &MemoryKernel,
    w_in: &WeightMatrix,
    phi_in: &[f64],
    dim: usize,
    grid: TimeGrid,
    opts: SimulateOptions,
) -> CoreResult<Ensemble> {
    let n = validate_particle_inputs(w_in, phi_in, dim)?;
    let masses = vec![1.0 / n as f64; n];
    let setup = EngineSetup {
        kernel,
        weights: w_in.entries(),
        masses: &masses,
        dim,
        grid,
        paranoid: opts.paranoid,
    };
    let trajectories = integrate_self_consistent(&setup, phi_in)?;
    Ensemble::new(trajectories, w_in.nodes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::{sample_pointwise, uniform_nodes, Graphon};
    use crate::trajectory::sup_distance;

    fn grid(t_end: f64, steps: usize) -> TimeGrid {
        TimeGrid::new(t_end, steps).unwrap()
    }

    fn const_traj(g: TimeGrid, v: f64) -> Trajectory {
        Trajectory::constant(g, &[v]).unwrap()
    }

    fn ones_matrix(n: usize) -> WeightMatrix {
        WeightMatrix::new(n, vec![1.0; n * n], uniform_nodes(n).unwrap()).unwrap()
    }

    // -- standalone weight solvers ------------------------------------------

    #[test]
    fn weight_ode_pure_decay_matches_closed_form() {
        // F = -w, w0 = 2: w(1) = 2/e.
        let g = grid(1.0, 1000);
        let f = WeightDynamics::linear(1.0, PairFunction::Constant(0.0)).unwrap();
        let w = solve_weight_ode(&f, 2.0, &const_traj(g, 0.0), &const_traj(g, 0.0)).unwrap();
        assert!((w.scalar_at(1000) - 0.7357588823428847).abs() < 1e-5);
        assert_eq!(w.scalar_at(0), 2.0);
    }

    #[test]
    fn weight_ode_relaxation_matches_closed_form() {
        // F = -w + 1, w0 = 0: w(1) = 1 - 1/e.
        let g = grid(1.0, 1000);
        let f = WeightDynamics::linear(1.0, PairFunction::Constant(1.0)).unwrap();
        let w = solve_weight_ode(&f, 0.0, &const_traj(g, 0.0), &const_traj(g, 0.0)).unwrap();
        assert!((w.scalar_at(1000) - 0.6321205588285577).abs() < 1e-5);
    }

    #[test]
    fn weight_ode_requires_shared_grid() {
        let f = WeightDynamics::Constant(0.0);
        let a = const_traj(grid(1.0, 10), 0.0);
        let b = const_traj(grid(1.0, 20), 0.0);
        assert!(matches!(
            solve_weight_ode(&f, 0.0, &a, &b),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn weight_ode_divergence_names_the_step() {
        // Saturating dynamics from w0 = -5 blows down in finite time.
        let g = grid(1.0, 1000);
        let f = WeightDynamics::Saturating {
            forcing: PairFunction::Constant(1.0),
        };
        match solve_weight_ode(&f, -5.0, &const_traj(g, 0.0), &const_traj(g, 0.0)) {
            Err(CoreError::Divergence { step, .. }) => assert!(step > 0 && step <= 1000),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn flow_map_decay_over_two_time_units() {
        let g = grid(2.0, 2000);
        let f = WeightDynamics::linear(1.0, PairFunction::Constant(0.0)).unwrap();
        let z = const_traj(g, 0.0);
        let v = flow_map(&f, 1.0, &z, &z, 0.0, 2.0).unwrap();
        assert!((v - 0.1353352832366127).abs() < 1e-5);
    }

    #[test]
    fn flow_map_composes_exactly_over_adjacent_windows() {
        let g = grid(1.0, 1000);
        let f = WeightDynamics::linear(0.7, PairFunction::Cos).unwrap();
        let a = Trajectory::from_scalar_fn(g, |t| (2.0 * t).sin());
        let b = Trajectory::from_scalar_fn(g, |t| t * t);
        let w_mid = flow_map(&f, 1.5, &a, &b, 0.0, 0.5).unwrap();
        let w_full = flow_map(&f, 1.5, &a, &b, 0.0, 1.0).unwrap();
        let w_comp = flow_map(&f, w_mid, &a, &b, 0.5, 1.0).unwrap();
        assert!((w_full - w_comp).abs() <= 1e-12);
    }

    #[test]
    fn duhamel_weight_matches_closed_forms() {
        let g = grid(1.0, 1000);
        let z = const_traj(g, 0.0);
        // Pure decay is exact up to the power recurrence.
        let w = duhamel_weight(1.0, &PairFunction::Constant(0.0), 2.0, &z, &z).unwrap();
        assert!((w.scalar_at(1000) - 0.7357588823428847).abs() < 1e-6);
        // Relaxation toward 1 via the convolution.
        let w = duhamel_weight(1.0, &PairFunction::Constant(1.0), 0.0, &z, &z).unwrap();
        assert!((w.scalar_at(1000) - 0.6321205588285577).abs() < 1e-5);
        assert!(duhamel_weight(0.0, &PairFunction::Cos, 0.0, &z, &z).is_err());
    }

    #[test]
    fn duhamel_weight_agrees_with_heun_on_the_same_linear_ode() {
        let g = grid(1.0, 1000);
        let a = Trajectory::from_scalar_fn(g, |t| t.sin());
        let b = Trajectory::from_scalar_fn(g, |t| (1.3 * t).cos());
        let closed = duhamel_weight(0.8, &PairFunction::Cos, 0.5, &a, &b).unwrap();
        let f = WeightDynamics::linear(0.8, PairFunction::Cos).unwrap();
        let heun = solve_weight_ode(&f, 0.5, &a, &b).unwrap();
        let d = sup_distance(&closed, &heun, 1.0).unwrap();
        assert!(d < 1e-6, "closed vs Heun differ by {d}");
    }

    // -- kernels -------------------------------------------------------------

    #[test]
    fn static_flow_kernel_is_weight_times_coupling() {
        let g = grid(1.0, 100);
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, WeightDynamics::Constant(0.0));
        let f = Trajectory::from_scalar_fn(g, |t| t);
        let p = Trajectory::from_scalar_fn(g, |t| 2.0 * t);
        for node in [0, 37, 100] {
            let v = k.evaluate(0.7, &f, &p, node).unwrap();
            let t = g.node(node);
            assert!((v - 0.7 * (2.0 * t - t).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn duhamel_kernel_decays_fast_for_large_decay_rate() {
        let g = grid(1.0, 200);
        let k = MemoryKernel::duhamel(
            PairCoupling::Constant(1.0),
            20.0,
            PairFunction::Constant(0.0),
        )
        .unwrap();
        let f = const_traj(g, 0.3);
        let v = k.evaluate(1.0, &f, &f, 200).unwrap();
        assert!(v.abs() < 1e-8, "got {v}");
    }

    #[test]
    fn kernel_evaluate_matches_flow_map_weight() {
        let g = grid(1.0, 500);
        let wd = WeightDynamics::linear(1.0, PairFunction::Cos).unwrap();
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, wd);
        let a = Trajectory::from_scalar_fn(g, |t| t.sin());
        let b = Trajectory::from_scalar_fn(g, |t| (0.5 * t).cos());
        let node = 350;
        let t = g.node(node);
        let w = flow_map(&wd, 0.4, &a, &b, 0.0, t).unwrap();
        let expect = w
            * PairCoupling::Kuramoto.eval(a.node_values(node), b.node_values(node));
        let got = k.evaluate(0.4, &a, &b, node).unwrap();
        assert_eq!(got.to_bits(), expect.to_bits());
    }

    #[test]
    fn kernel_constants_for_the_catalog() {
        // flow(kuramoto, linear:1:cos): e^{L_F T} (L_C + sup|C| L_F T) = 2e.
        let k = MemoryKernel::from_flow(
            PairCoupling::Kuramoto,
            WeightDynamics::linear(1.0, PairFunction::Cos).unwrap(),
        );
        assert!((k.lipschitz_bound(1.0, 1.0) - 2.0 * std::f64::consts::E).abs() < 1e-12);
        assert!((k.sup_bound(1.0, 1.0) - 1.0).abs() < 1e-12);
        // Static expansive kernel: L_F = 0 so the bound reduces to L_C.
        let k2 = MemoryKernel::from_flow(
            PairCoupling::SumDrive(2.0),
            WeightDynamics::Constant(0.0),
        );
        assert_eq!(k2.lipschitz_bound(1.0, 1.0), 2.0);
        assert_eq!(k2.sup_bound(1.0, 1.0), f64::INFINITY);
        // Instantaneous kernels inherit the coupling constants.
        let k3 = MemoryKernel::instantaneous(PairCoupling::Kuramoto);
        assert_eq!(k3.lipschitz_bound(5.0, 2.0), 1.0);
        assert_eq!(k3.sup_bound(5.0, 2.0), 1.0);
        assert_eq!(MemoryKernel::constant(3.0).unwrap().lipschitz_bound(1.0, 1.0), 0.0);
    }

    #[test]
    fn kernel_id_strings() {
        let cases = [
            ("constant:2", None),
            ("instantaneous:kuramoto", None),
            ("flow:kuramoto:linear:1:cos", None),
            ("flow:sum_drive:2:constant:0", None),
            ("duhamel:1:cos", Some(PairCoupling::Kuramoto)),
        ];
        for (id, c) in cases {
            let k = MemoryKernel::parse(id, c).unwrap();
            let k2 = MemoryKernel::parse(&k.id_string(), c).unwrap();
            assert_eq!(k.rule(), k2.rule(), "roundtrip failed for {id}");
        }
        assert!(MemoryKernel::parse("duhamel:1:cos", None).is_err());
        assert!(MemoryKernel::parse("instantaneous", None).is_err());
        assert!(MemoryKernel::parse("flow:kuramoto", None).is_err());
        assert!(MemoryKernel::parse("constant:1:2", None).is_err());
        assert!(MemoryKernel::parse("duhamel:-1:cos", None).is_err());
    }

    // -- coupled simulator ---------------------------------------------------

    #[test]
    fn coupled_zero_coupling_leaves_states_fixed_and_weights_autonomous() {
        let n = 3;
        let w_in = ones_matrix(n);
        let phi0 = vec![0.1, 0.2, 0.3];
        let g = grid(1.0, 1000);
        let f = WeightDynamics::linear(1.0, PairFunction::Constant(0.0)).unwrap();
        let sol = simulate_coupled(
            &PairCoupling::Constant(0.0),
            &f,
            &w_in,
            &phi0,
            1,
            g,
            true,
        )
        .unwrap();
        for (k, tr) in sol.particles.members().iter().enumerate() {
            for i in 0..=1000 {
                assert_eq!(tr.scalar_at(i), phi0[k]);
            }
        }
        // Weights decay autonomously: w(1) = 1/e for every pair.
        let w = sol.weights.unwrap();
        for tr in &w {
            assert!((tr.scalar_at(1000) - (-1.0f64).exp()).abs() < 1e-5);
        }
    }

    #[test]
    fn coupled_two_particle_linear_attraction() {
        // Static unit weights, C = psi - phi, phi0 = (0, 2):
        // phi1(t) = 1 - e^{-t}.
        let w_in = ones_matrix(2);
        let g = grid(1.0, 1000);
        let sol = simulate_coupled(
            &PairCoupling::LinearAttraction,
            &WeightDynamics::Constant(0.0),
            &w_in,
            &[0.0, 2.0],
            1,
            g,
            false,
        )
        .unwrap();
        let v = sol.particles.member(0).scalar_at(1000);
        assert!((v - 0.6321205588285577).abs() < 1e-5, "got {v}");
    }

    // -- memory simulator ----------------------------------------------------

    #[test]
    fn memory_constant_kernel_single_particle_integrates_time() {
        let w_in = WeightMatrix::new(1, vec![0.0], vec![0.5]).unwrap();
        let k = MemoryKernel::constant(1.0).unwrap();
        // Power-of-two grid: node values are bit-exactly t_i.
        let g = grid(1.0, 1024);
        let e = simulate_memory(&k, &w_in, &[0.0], 1, g).unwrap();
        for i in 0..=1024 {
            assert_eq!(e.member(0).scalar_at(i), g.node(i));
        }
        // General grid: agreement to rounding accumulation.
        let g = grid(1.0, 1000);
        let e = simulate_memory(&k, &w_in, &[0.0], 1, g).unwrap();
        for i in (0..=1000).step_by(111) {
            assert!((e.member(0).scalar_at(i) - g.node(i)).abs() <= 1e-12);
        }
    }

    #[test]
    fn memory_instantaneous_attraction_matches_closed_form() {
        let w_in = ones_matrix(2);
        let k = MemoryKernel::instantaneous(PairCoupling::LinearAttraction);
        let g = grid(1.0, 1000);
        let e = simulate_memory(&k, &w_in, &[0.0, 2.0], 1, g).unwrap();
        assert!((e.member(0).scalar_at(1000) - 0.6321205588285577).abs() < 1e-5);
    }

    #[test]
    fn memory_static_flow_kernel_is_bit_identical_to_coupled_run() {
        // F = 0 freezes the weights, so both formulations perform literally
        // the same arithmetic.
        let nodes = uniform_nodes(4).unwrap();
        let w_in = sample_pointwise(&Graphon::product(), &nodes).unwrap();
        let phi0: Vec<f64> = nodes.iter().map(|x| (2.0 * x).sin()).collect();
        let g = grid(1.0, 500);
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, WeightDynamics::Constant(0.0));
        let mem = simulate_memory(&k, &w_in, &phi0, 1, g).unwrap();
        let joint = simulate_coupled(
            &PairCoupling::Kuramoto,
            &WeightDynamics::Constant(0.0),
            &w_in,
            &phi0,
            1,
            g,
            false,
        )
        .unwrap();
        for (a, b) in mem.members().iter().zip(joint.particles.members()) {
            for i in 0..=500 {
                assert_eq!(a.scalar_at(i).to_bits(), b.scalar_at(i).to_bits());
            }
        }
    }

    #[test]
    fn memory_flow_kernel_tracks_coupled_run_at_second_order() {
        // Co-evolving weights: the two formulations are distinct second-order
        // schemes for the same dynamics, so their gap shrinks like h^2.
        let nodes = uniform_nodes(4).unwrap();
        let w_in = sample_pointwise(&Graphon::product(), &nodes).unwrap();
        let phi0: Vec<f64> = nodes.iter().map(|x| (6.28 * x).sin()).collect();
        let wd = WeightDynamics::linear(1.0, PairFunction::Cos).unwrap();
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, wd);
        let mut gaps = Vec::new();
        for steps in [250usize, 500] {
            let g = grid(1.0, steps);
            let mem = simulate_memory(&k, &w_in, &phi0, 1, g).unwrap();
            let joint = simulate_coupled(
                &PairCoupling::Kuramoto,
                &wd,
                &w_in,
                &phi0,
                1,
                g,
                false,
            )
            .unwrap();
            let gap = mem
                .members()
                .iter()
                .zip(joint.particles.members())
                .map(|(a, b)| sup_distance(a, b, 1.0).unwrap())
                .fold(0.0f64, f64::max);
            gaps.push(gap);
        }
        let ratio = gaps[0] / gaps[1];
        assert!(
            (3.5..=4.5).contains(&ratio),
            "gap ratio {ratio} (gaps {gaps:?})"
        );
    }

    #[test]
    fn memory_duhamel_kernel_static_decay_case() {
        // Single particle, w0 = 1, a = 1, g = 0, C = 1:
        // phi(t) = phi0 + 1 - e^{-t}.
        let w_in = WeightMatrix::new(1, vec![1.0], vec![0.5]).unwrap();
        let k = MemoryKernel::duhamel(
            PairCoupling::Constant(1.0),
            1.0,
            PairFunction::Constant(0.0),
        )
        .unwrap();
        let g = grid(1.0, 1000);
        let e = simulate_memory(&k, &w_in, &[0.5], 1, g).unwrap();
        assert!((e.member(0).scalar_at(1000) - (0.5 + 0.6321205588285577)).abs() < 1e-5);
    }

    #[test]
    fn memory_permutation_equivariance() {
        let n = 5;
        let nodes = uniform_nodes(n).unwrap();
        let w_in = sample_pointwise(&Graphon::cosine(), &nodes).unwrap();
        let phi0: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).sin()).collect();
        let wd = WeightDynamics::linear(1.0, PairFunction::Cos).unwrap();
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, wd);
        let g = grid(1.0, 400);
        let base = simulate_memory(&k, &w_in, &phi0, 1, g).unwrap();

        // Permutation sigma and the conjugated inputs.
        let sigma = [2usize, 0, 4, 1, 3];
        let phi_p: Vec<f64> = (0..n).map(|k| phi0[sigma[k]]).collect();
        let mut w_p = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                w_p[k * n + l] = w_in.entry(sigma[k], sigma[l]);
            }
        }
        let w_in_p = WeightMatrix::new(n, w_p, nodes.clone()).unwrap();
        let perm = simulate_memory(&k, &w_in_p, &phi_p, 1, g).unwrap();
        for k in 0..n {
            let d = sup_distance(perm.member(k), base.member(sigma[k]), 1.0).unwrap();
            assert!(d <= 1e-12, "particle {k} deviates by {d}");
        }
    }

    #[test]
    fn memory_boundedness_respects_recorded_sup() {
        let n = 8;
        let nodes = uniform_nodes(n).unwrap();
        let w_in = sample_pointwise(&Graphon::product(), &nodes).unwrap();
        let phi0: Vec<f64> = nodes.iter().map(|x| (6.283 * x).sin()).collect();
        let wd = WeightDynamics::linear(1.0, PairFunction::Cos).unwrap();
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, wd);
        let g = grid(1.0, 500);
        let sup = k.sup_bound(w_in.max_abs(), 1.0);
        let e = simulate_memory(&k, &w_in, &phi0, 1, g).unwrap();
        for (kk, tr) in e.members().iter().enumerate() {
            for i in 0..=500 {
                let drift = (tr.scalar_at(i) - phi0[kk]).abs();
                assert!(
                    drift <= sup * g.node(i) * (1.0 + 1e-9) + 1e-15,
                    "particle {kk} drifted {drift} at t = {}",
                    g.node(i)
                );
            }
        }
    }

    #[test]
    fn memory_zero_coupling_is_exactly_stationary() {
        let w_in = ones_matrix(3);
        let k = MemoryKernel::from_flow(
            PairCoupling::Constant(0.0),
            WeightDynamics::linear(1.0, PairFunction::Cos).unwrap(),
        );
        let g = grid(1.0, 200);
        let e = simulate_memory(&k, &w_in, &[0.3, -0.1, 0.9], 1, g).unwrap();
        for (k, &v0) in [0.3, -0.1, 0.9].iter().enumerate() {
            for i in 0..=200 {
                assert_eq!(e.member(k).scalar_at(i), v0);
            }
        }
    }

    #[test]
    fn memory_paranoid_mode_agrees_with_incremental_caches() {
        let nodes = uniform_nodes(3).unwrap();
        let w_in = sample_pointwise(&Graphon::min(), &nodes).unwrap();
        let phi0 = vec![0.1, 0.5, -0.4];
        let wd = WeightDynamics::linear(0.9, PairFunction::Cos).unwrap();
        let k = MemoryKernel::from_flow(PairCoupling::Kuramoto, wd);
        let g = grid(0.5, 50);
        let opts = SimulateOptions { paranoid: true };
        let a = simulate_memory_with(&k, &w_in, &phi0, 1, g, opts).unwrap();
        let b = simulate_memory(&k, &w_in, &phi0, 1, g).unwrap();
        for (x, y) in a.members().iter().zip(b.members()) {
            assert_eq!(x.values(), y.values());
        }
        // Duhamel caches too.
        let kd =
            MemoryKernel::duhamel(PairCoupling::Kuramoto, 1.0, PairFunction::Cos).unwrap();
        let a = simulate_memory_with(&kd, &w_in, &phi0, 1, g, opts).unwrap();
        let b = simulate_memory(&kd, &w_in, &phi0, 1, g).unwrap();
        for (x, y) in a.members().iter().zip(b.members()) {
            assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn memory_kernel_blowup_reports_the_pair() {
        // Saturating weight dynamics from a negative weight blows down; the
        // kernel value turns non-finite while the states are still sane.
        let n = 2;
        let w_in = WeightMatrix::new(
            n,
            vec![0.5, -5.0, -5.0, 0.5],
            uniform_nodes(n).unwrap(),
        )
        .unwrap();
        let k = MemoryKernel::from_flow(
            PairCoupling::Constant(1.0),
            WeightDynamics::Saturating {
                forcing: PairFunction::Constant(1.0),
            },
        );
        let g = grid(1.0, 1000);
        match simulate_memory(&k, &w_in, &[0.0, 0.0], 1, g) {
            Err(CoreError::KernelValue { row, col, step }) => {
                assert!(step > 0);
                assert!((row, col) == (0, 1) || (row, col) == (1, 0));
            }
            other => panic!("expected kernel error, got {other:?}"),
        }
    }

    #[test]
    fn memory_shape_validation() {
        let w_in = ones_matrix(2);
        let k = MemoryKernel::constant(1.0).unwrap();
        let g = grid(1.0, 10);
        assert!(matches!(
            simulate_memory(&k, &w_in, &[0.0, 1.0, 2.0], 1, g),
            Err(CoreError::Shape(_))
        ));
        assert!(matches!(
            simulate_memory(&k, &w_in, &[0.0, f64::NAN], 1, g),
            Err(CoreError::Domain(_))
        ));
    }
}
