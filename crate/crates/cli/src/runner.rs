//! The `run` pipeline: simulate every configured system size, write CSV/SVG
//! artifacts, and record a hashed manifest.
//!
//! Determinism contract: the same config and seed produce byte-identical CSV
//! and SVG artifacts (and therefore the same manifest `content_hash`)
//! regardless of thread count, because the integrator accumulates in fixed
//! order and all floats are written through one shortest-roundtrip formatter.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use coevolve_core::dynamics::simulate_memory;
use coevolve_core::graphon::{sample_pointwise, uniform_nodes};
use coevolve_core::meanfield::sample_block_system;
use coevolve_core::trajectory::{fmt_f64, Ensemble};

use crate::config::{Experiment, InitialSpec, ProfileId, RunMode};
use crate::manifest::{artifact_record, config_hash, ArtifactRecord, Manifest};
use crate::svg::{render_csv_plot, PlotKind};
use crate::{CliError, CliResult};

/// Result of a `run` invocation.
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// Simulate one deterministic-profile system of size `n`.
pub fn simulate_profile_system(exp: &Experiment, profile: &ProfileId, n: usize) -> CliResult<Ensemble> {
    let nodes = uniform_nodes(n)?;
    let u0: Vec<f64> = nodes.iter().map(|&x| profile.eval(x)).collect();
    let w = sample_pointwise(&exp.graphon, &nodes)?;
    Ok(simulate_memory(&exp.kernel, &w, &u0, 1, exp.grid)?)
}

/// Wide per-time summary of an ensemble: mean, min, and max over particles
/// for every state component. This is the plot-ready companion table to the
/// long-format trajectory CSV.
pub fn envelope_csv(ens: &Ensemble) -> String {
    let dim = ens.dim();
    let grid = ens.grid();
    let n = ens.len();
    let mut out = String::from("t");
    for c in 0..dim {
        out.push_str(&format!(",mean_v{c},min_v{c},max_v{c}"));
    }
    out.push('\n');
    for i in 0..=grid.steps() {
        out.push_str(&fmt_f64(grid.node(i)));
        for c in 0..dim {
            let mut acc = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..n {
                let v = ens.member(k).node_values(i)[c];
                acc += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let mean = acc / n as f64;
            out.push_str(&format!(",{},{},{}", fmt_f64(mean), fmt_f64(lo), fmt_f64(hi)));
        }
        out.push('\n');
    }
    out
}

fn ensemble_csv(ens: &Ensemble) -> CliResult<String> {
    let mut buf = Vec::new();
    ens.write_csv(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CliError::Config(format!("csv encoding: {e}")))
}

/// Run every configured system and write artifacts plus `manifest.json`.
pub fn run(exp: &Experiment) -> CliResult<RunOutcome> {
    let total = Instant::now();
    std::fs::create_dir_all(&exp.out_dir)?;
    let mut artifacts: Vec<ArtifactRecord> = Vec::new();
    let mut wall: BTreeMap<String, u64> = BTreeMap::new();

    let systems: Vec<(String, Ensemble)> = match (&exp.init, &exp.mode) {
        (InitialSpec::Profile(p), RunMode::Sizes(sizes)) => {
            let mut out = Vec::new();
            for &n in sizes {
                let started = Instant::now();
                let ens = simulate_profile_system(exp, p, n)?;
                wall.insert(format!("simulate_N{n}"), started.elapsed().as_millis() as u64);
                out.push((format!("N{n}"), ens));
            }
            out
        }
        (InitialSpec::Law(law), RunMode::Pairs(pairs)) => {
            let mut out = Vec::new();
            for &(n, m) in pairs {
                let started = Instant::now();
                let ens =
                    sample_block_system(law, n, m, exp.seed, &exp.graphon, &exp.kernel, exp.grid)?;
                wall.insert(
                    format!("simulate_n{n}_m{m}"),
                    started.elapsed().as_millis() as u64,
                );
                out.push((format!("n{n}_m{m}"), ens));
            }
            out
        }
        // Config validation forbids the other two combinations.
        _ => unreachable!("validated config pairs init mode with run mode"),
    };

    for (tag, ens) in &systems {
        if exp.formats.csv {
            let name = format!("trajectories_{tag}.csv");
            std::fs::write(exp.out_dir.join(&name), ensemble_csv(ens)?)?;
            artifacts.push(artifact_record(&exp.out_dir, &name)?);
        }
        if exp.formats.csv || exp.formats.svg {
            let table = envelope_csv(ens);
            if exp.formats.csv {
                let name = format!("envelope_{tag}.csv");
                std::fs::write(exp.out_dir.join(&name), &table)?;
                artifacts.push(artifact_record(&exp.out_dir, &name)?);
            }
            if exp.formats.svg {
                let name = format!("envelope_{tag}.svg");
                let svg = render_csv_plot(&table, PlotKind::Series)?;
                std::fs::write(exp.out_dir.join(&name), svg)?;
                artifacts.push(artifact_record(&exp.out_dir, &name)?);
            }
        }
    }

    wall.insert("total".into(), total.elapsed().as_millis() as u64);
    let manifest = Manifest::build(
        "run",
        config_hash(&exp.raw),
        exp.seed,
        exp.grid,
        artifacts,
        wall,
    );
    let manifest_path = manifest.write(&exp.out_dir)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
    })
}
