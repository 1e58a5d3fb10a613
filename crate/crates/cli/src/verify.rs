//! Quantitative verification of the stability bounds on a fixed trial suite.
//!
//! The suite holds 24 trials in three groups:
//!
//! 1. `lipschitz-kuramoto` (9): the Kuramoto catalog system with adaptive
//!    weights on the product graphon, N = 16, with seeded initial jitter of
//!    size ε ∈ {1e-3, 1e-2, 1e-1}. The measured path Wasserstein-1 distance
//!    between base and perturbed runs up to t ∈ {0.25, 0.5, 1} must stay
//!    under the recorded-constant stability bound.
//!
//! 2. `growth-control` (9): an expansive linear drive (`sum_drive:2`, static
//!    complete coupling) whose coherent-shift perturbation grows at exactly
//!    the rate the bound's exponent models. The honest bound passes with a
//!    modest fixed margin; halving the recorded constant `L_K` (via
//!    `--override L_K=0.5`) makes these trials overtake their bound — the
//!    falsification control that proves the harness can detect a wrong
//!    constant.
//!
//! 3. `step-graphon` (6): a discontinuous (non-Lipschitz) connectivity
//!    profile against its block average, same Duhamel memory system on both
//!    sides, compared in the block-fibered distance with the exact L¹
//!    connectivity mismatch term; three trials start identical, three with
//!    seeded jitter.
//!
//! Every trial records `measured`, `bound`, and `margin = bound - measured`.
//! Bounds carry the discretization slack factor `(1 + 10h)`. The report is
//! written as JSON; any violation makes the command exit with code 4.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use coevolve_core::catalog::{PairCoupling, PairFunction, WeightDynamics};
use coevolve_core::dynamics::{simulate_memory, MemoryKernel};
use coevolve_core::graphon::{
    sample_averaged, sample_pointwise, step_graphon, uniform_nodes, Graphon, WeightMatrix,
};
use coevolve_core::meanfield::{local_empirical_measure, LabeledPathMeasure, LabeledPointMeasure};
use coevolve_core::transport::{
    dist_fibered, dobrushin_bound, dobrushin_bound_nonlip, path_wasserstein1, wasserstein1_exact,
    ProductMetric,
};
use coevolve_core::trajectory::{Ensemble, TimeGrid};

use crate::config::Experiment;
use crate::manifest::{artifact_record, config_hash, Manifest};
use crate::{CliError, CliResult};

const TIMES: [f64; 3] = [0.25, 0.5, 1.0];
const EPSILONS: [f64; 3] = [1e-3, 1e-2, 1e-1];
const JITTER_EPS: f64 = 0.05;

/// Multiplicative factors applied to the recorded constants before bound
/// evaluation. `1.0` means "use the recorded constant".
#[derive(Debug, Clone, Copy)]
pub struct Overrides {
    pub l_k: f64,
    pub l_w: f64,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides { l_k: 1.0, l_w: 1.0 }
    }
}

/// Parse `--override NAME=FACTOR` arguments (`L_K` and `L_W`).
pub fn parse_overrides(items: &[String]) -> CliResult<Overrides> {
    let mut ov = Overrides::default();
    for item in items {
        let Some((name, value)) = item.split_once('=') else {
            return Err(CliError::Config(format!(
                "override '{item}' must have the form NAME=FACTOR"
            )));
        };
        let factor: f64 = value.parse().map_err(|_| {
            CliError::Config(format!("override '{item}': '{value}' is not a number"))
        })?;
        if !factor.is_finite() || factor <= 0.0 {
            return Err(CliError::Config(format!(
                "override '{item}': factor must be finite and positive"
            )));
        }
        match name {
            "L_K" => ov.l_k = factor,
            "L_W" => ov.l_w = factor,
            other => {
                return Err(CliError::Config(format!(
                    "unknown override '{other}' (expected L_K or L_W)"
                )));
            }
        }
    }
    Ok(ov)
}

/// One verified inequality.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub id: String,
    pub suite: String,
    pub epsilon: f64,
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

/// The full suite report.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub l_k_factor: f64,
    pub l_w_factor: f64,
    pub trials: Vec<TrialResult>,
    pub violations: usize,
    pub min_margin: f64,
}

fn record(
    trials: &mut Vec<TrialResult>,
    id: String,
    suite: &str,
    epsilon: f64,
    t: f64,
    measured: f64,
    bound: f64,
) {
    trials.push(TrialResult {
        id,
        suite: suite.into(),
        epsilon,
        t,
        measured,
        bound,
        margin: bound - measured,
        pass: measured <= bound,
    });
}

/// Trial grids put nodes at every quarter unit so the suite's observation
/// times are exact grid nodes.
fn suite_grid(h: f64) -> CliResult<TimeGrid> {
    if !(h.is_finite() && h > 0.0) {
        return Err(CliError::Config(format!("step size {h} must be positive")));
    }
    let steps = ((1.0 / h).round() as usize).max(4);
    let steps = steps.div_ceil(4) * 4;
    Ok(TimeGrid::new(1.0, steps)?)
}

fn restricted_measure(ens: &Ensemble, t: f64) -> CliResult<LabeledPathMeasure> {
    let atoms = ens
        .members()
        .iter()
        .map(|tr| tr.restrict(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledPathMeasure::uniform(atoms, ens.labels().to_vec())?)
}

fn initial_distance(u0: &[f64], v0: &[f64], labels: &[f64]) -> CliResult<f64> {
    let a = LabeledPointMeasure::uniform(1, u0.to_vec(), labels.to_vec())?;
    let b = LabeledPointMeasure::uniform(1, v0.to_vec(), labels.to_vec())?;
    Ok(wasserstein1_exact(&a, &b, ProductMetric::EuclideanProduct)?.0)
}

enum Perturbation {
    /// Seeded per-particle jitter, uniform in `eps * [-1, 1)`.
    Jitter,
    /// Every particle shifted by `+eps`.
    Shift,
}

struct LipschitzSuite {
    name: &'static str,
    kernel: MemoryKernel,
    graphon: Graphon,
    n: usize,
    profile: fn(f64) -> f64,
    perturbation: Perturbation,
    seed_offset: u64,
}

fn run_lipschitz_suite(
    suite: &LipschitzSuite,
    grid: TimeGrid,
    seed: u64,
    ov: &Overrides,
    trials: &mut Vec<TrialResult>,
) -> CliResult<()> {
    let nodes = uniform_nodes(suite.n)?;
    let u0: Vec<f64> = nodes.iter().map(|&x| (suite.profile)(x)).collect();
    let w = sample_pointwise(&suite.graphon, &nodes)?;
    let l_k = suite.kernel.lipschitz_bound(w.max_abs(), grid.t_end()) * ov.l_k;
    let l_w = suite
        .graphon
        .lipschitz_constant()
        .expect("suite graphons are Lipschitz families")
        * ov.l_w;
    let slack = 1.0 + 10.0 * grid.h();

    let base = simulate_memory(&suite.kernel, &w, &u0, 1, grid)?;
    for (ei, &eps) in EPSILONS.iter().enumerate() {
        let mut v0 = u0.clone();
        match suite.perturbation {
            Perturbation::Jitter => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ suite.seed_offset ^ (ei as u64 + 1));
                for v in &mut v0 {
                    *v += eps * rng.gen_range(-1.0..1.0);
                }
            }
            Perturbation::Shift => {
                for v in &mut v0 {
                    *v += eps;
                }
            }
        }
        let perturbed = simulate_memory(&suite.kernel, &w, &v0, 1, grid)?;
        let d0 = initial_distance(&u0, &v0, &nodes)?;
        for &t in &TIMES {
            let a = restricted_measure(&base, t)?;
            let b = restricted_measure(&perturbed, t)?;
            let measured = path_wasserstein1(&a, &b, ProductMetric::EuclideanProduct)?;
            let bound = dobrushin_bound(l_k, l_w, d0, t) * slack;
            record(
                trials,
                format!("{}-eps{:e}-t{}", suite.name, eps, t),
                suite.name,
                eps,
                t,
                measured,
                bound,
            );
        }
    }
    Ok(())
}

fn run_step_graphon_suite(
    grid: TimeGrid,
    seed: u64,
    ov: &Overrides,
    trials: &mut Vec<TrialResult>,
) -> CliResult<()> {
    const BLOCKS: usize = 8;
    const PER_BLOCK: usize = 4;
    const N: usize = BLOCKS * PER_BLOCK;
    let kernel = MemoryKernel::duhamel(PairCoupling::Kuramoto, 1.0, PairFunction::Cos)?;

    // The "true" connectivity: a discontinuous threshold profile frozen as a
    // step graphon on the fine partition; its comparison partner is the exact
    // block average on the coarse partition.
    let fine = uniform_nodes(N)?;
    let w_fine = sample_pointwise(&Graphon::threshold(0.3)?, &fine)?;
    let w_step = step_graphon(w_fine.clone())?;
    let coarse = sample_averaged(&w_step, BLOCKS)?;
    let mut expanded = vec![0.0; N * N];
    for k in 0..N {
        for l in 0..N {
            expanded[k * N + l] = coarse.entry(k / PER_BLOCK, l / PER_BLOCK);
        }
    }
    let w_coarse = WeightMatrix::new(N, expanded, fine.clone())?;
    // Both graphons are constant on the cells of the fine partition, so the
    // cellwise average of |difference| is the exact L1 distance.
    let wl1 = w_fine
        .entries()
        .iter()
        .zip(w_coarse.entries())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (N * N) as f64;

    let w0_max = w_fine.max_abs().max(w_coarse.max_abs());
    let l_k = kernel.lipschitz_bound(w0_max, grid.t_end()) * ov.l_k;
    let slack = 1.0 + 10.0 * grid.h();

    let u0: Vec<f64> = fine
        .iter()
        .map(|&x| (2.0 * std::f64::consts::PI * x).sin())
        .collect();
    let ens_a = simulate_memory(&kernel, &w_fine, &u0, 1, grid)?;
    let emp_a = local_empirical_measure(&ens_a, BLOCKS, PER_BLOCK)?;

    for (label, jitter) in [("clean", 0.0), ("jitter", JITTER_EPS)] {
        let mut v0 = u0.clone();
        if jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e7_0000);
            for v in &mut v0 {
                *v += jitter * rng.gen_range(-1.0..1.0);
            }
        }
        let ens_b = simulate_memory(&kernel, &w_coarse, &v0, 1, grid)?;
        let emp_b = local_empirical_measure(&ens_b, BLOCKS, PER_BLOCK)?;
        let di0 = dist_fibered(&emp_a.slice(0)?, &emp_b.slice(0)?)?;
        for &t in &TIMES {
            let node = (t * grid.steps() as f64).round() as usize;
            let measured = dist_fibered(&emp_a.slice(node)?, &emp_b.slice(node)?)?;
            let bound = dobrushin_bound_nonlip(l_k, di0, wl1, t) * slack;
            record(
                trials,
                format!("step-graphon-{label}-t{t}"),
                "step-graphon",
                jitter,
                t,
                measured,
                bound,
            );
        }
    }
    Ok(())
}

/// Run the 24-trial suite at base step `h` with the given seed and override
/// factors.
pub fn run_suite(h: f64, seed: u64, ov: &Overrides) -> CliResult<VerifyReport> {
    let grid = suite_grid(h)?;
    let mut trials = Vec::with_capacity(24);

    let kuramoto = LipschitzSuite {
        name: "lipschitz-kuramoto",
        kernel: MemoryKernel::from_flow(
            PairCoupling::Kuramoto,
            WeightDynamics::linear(1.0, PairFunction::Cos)?,
        ),
        graphon: Graphon::product(),
        n: 16,
        profile: |x| (2.0 * std::f64::consts::PI * x).sin(),
        perturbation: Perturbation::Jitter,
        seed_offset: 0x10,
    };
    run_lipschitz_suite(&kuramoto, grid, seed, ov, &mut trials)?;

    let growth = LipschitzSuite {
        name: "growth-control",
        kernel: MemoryKernel::from_flow(
            PairCoupling::SumDrive(2.0),
            WeightDynamics::Constant(0.0),
        ),
        graphon: Graphon::constant(1.0)?,
        n: 8,
        profile: |x| x,
        perturbation: Perturbation::Shift,
        seed_offset: 0x20,
    };
    run_lipschitz_suite(&growth, grid, seed, ov, &mut trials)?;

    run_step_graphon_suite(grid, seed, ov, &mut trials)?;

    let violations = trials.iter().filter(|t| !t.pass).count();
    let min_margin = trials
        .iter()
        .map(|t| t.margin)
        .fold(f64::INFINITY, f64::min);
    Ok(VerifyReport {
        l_k_factor: ov.l_k,
        l_w_factor: ov.l_w,
        trials,
        violations,
        min_margin,
    })
}

/// Result of a `verify` invocation (the report is also written to disk).
pub struct VerifyOutcome {
    pub report: VerifyReport,
    pub report_path: PathBuf,
    pub manifest: Manifest,
}

/// Run the suite at the config's step size and seed, writing
/// `verify_report.json` and `manifest.json` into the output directory.
pub fn run_verify(exp: &Experiment, ov: &Overrides) -> CliResult<VerifyOutcome> {
    let total = Instant::now();
    let report = run_suite(exp.grid.h(), exp.seed, ov)?;

    std::fs::create_dir_all(&exp.out_dir)?;
    let report_path = exp.out_dir.join("verify_report.json");
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Config(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, format!("{text}\n"))?;

    let artifacts = vec![artifact_record(&exp.out_dir, "verify_report.json")?];
    let mut wall = BTreeMap::new();
    wall.insert("total".into(), total.elapsed().as_millis() as u64);
    let manifest = Manifest::build(
        "verify",
        config_hash(&exp.raw),
        exp.seed,
        exp.grid,
        artifacts,
        wall,
    );
    manifest.write(&exp.out_dir)?;
    Ok(VerifyOutcome {
        report,
        report_path,
        manifest,
    })
}
