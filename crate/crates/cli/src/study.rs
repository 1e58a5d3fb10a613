//! Convergence studies: how fast finite systems approach their mean-field
//! reference.
//!
//! Deterministic mode (`[run] sizes`, ≥ 3 strictly increasing): every size is
//! integrated from the same grid profile; each row reports the exact path
//! Wasserstein-1 distance (state sup-norm combined with the label through the
//! Euclidean product metric) to the finest-size reference, plus the distance
//! to the next size. The finest deterministic-grid run coincides bit-for-bit
//! with the continuum collocation solution at `n_x` equal to that size, so
//! the reference is simultaneously the self-convergence target and the
//! continuum solution.
//!
//! Sampled mode (`[run] pairs`, Dirac law): each (blocks, per-block) system
//! is sampled at the configured seed and compared in the block-fibered path
//! distance against the one-Dirac-per-block measure of the continuum solve at
//! `n_x = blocks`.
//!
//! Artifacts: `study.csv` and a log-log `study.svg`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use coevolve_core::meanfield::{
    continuum_to_measure, local_empirical_measure, sample_block_system, sample_profile,
    solve_continuum, InitialLaw, LabeledPathMeasure,
};
use coevolve_core::transport::{path_wasserstein1, ProductMetric, ATOM_CAP};
use coevolve_core::trajectory::fmt_f64;

use crate::config::{Experiment, InitialSpec, RunMode};
use crate::manifest::{artifact_record, config_hash, ArtifactRecord, Manifest};
use crate::runner::simulate_profile_system;
use crate::svg::{render_csv_plot, PlotKind};
use crate::{CliError, CliResult};

/// One row of the convergence table.
#[derive(Debug, Clone)]
pub struct StudyRow {
    /// Total particle count of this row's system.
    pub n: usize,
    /// Distance to the study's reference (finest size / continuum).
    pub dist_to_limit: f64,
    /// Distance to the next-larger system (deterministic mode only).
    pub dist_successive: Option<f64>,
}

/// Result of a `study` invocation.
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn repeat_atoms(mu: &LabeledPathMeasure, copies: usize) -> CliResult<LabeledPathMeasure> {
    if copies == 1 {
        return Ok(mu.clone());
    }
    let mut atoms = Vec::with_capacity(mu.len() * copies);
    let mut labels = Vec::with_capacity(mu.len() * copies);
    for j in 0..mu.len() {
        for _ in 0..copies {
            atoms.push(mu.atom(j).clone());
            labels.push(mu.label(j));
        }
    }
    Ok(LabeledPathMeasure::uniform(atoms, labels)?)
}

/// Exact path Wasserstein-1 between two uniform path measures. Splitting
/// every atom into equal copies leaves the optimal transport cost unchanged,
/// so when the common multiple of the sizes is small enough both sides are
/// expanded to equal counts and solved by the assignment path; otherwise the
/// general solver runs directly.
pub fn path_distance_uniform(
    a: &LabeledPathMeasure,
    b: &LabeledPathMeasure,
) -> CliResult<f64> {
    let (na, nb) = (a.len(), b.len());
    let lcm = na / gcd(na, nb) * nb;
    if lcm <= ATOM_CAP {
        let ea = repeat_atoms(a, lcm / na)?;
        let eb = repeat_atoms(b, lcm / nb)?;
        Ok(path_wasserstein1(&ea, &eb, ProductMetric::EuclideanProduct)?)
    } else {
        Ok(path_wasserstein1(a, b, ProductMetric::EuclideanProduct)?)
    }
}

fn ensemble_measure(
    ens: &coevolve_core::trajectory::Ensemble,
) -> CliResult<LabeledPathMeasure> {
    let labels = ens.labels().to_vec();
    Ok(LabeledPathMeasure::uniform(ens.members().to_vec(), labels)?)
}

fn check_strictly_increasing(ns: &[usize], what: &str) -> CliResult<()> {
    if ns.len() < 3 {
        return Err(CliError::Config(format!(
            "a convergence study needs at least 3 {what}, got {}",
            ns.len()
        )));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(format!(
            "study {what} must be strictly increasing, got {ns:?}"
        )));
    }
    Ok(())
}

/// Deterministic-mode convergence rows: one per size except the finest,
/// which serves as the reference.
pub fn deterministic_rows(exp: &Experiment, sizes: &[usize]) -> CliResult<Vec<StudyRow>> {
    check_strictly_increasing(sizes, "sizes")?;
    let InitialSpec::Profile(profile) = &exp.init else {
        return Err(CliError::Config(
            "deterministic study rows need an [initial] profile".into(),
        ));
    };
    let mut measures = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let ens = simulate_profile_system(exp, profile, n)?;
        measures.push(ensemble_measure(&ens)?);
    }
    let reference = measures.last().expect("at least 3 sizes");
    let mut rows = Vec::new();
    for i in 0..sizes.len() - 1 {
        let dist_to_limit = path_distance_uniform(&measures[i], reference)?;
        let dist_successive = path_distance_uniform(&measures[i], &measures[i + 1])?;
        rows.push(StudyRow {
            n: sizes[i],
            dist_to_limit,
            dist_successive: Some(dist_successive),
        });
    }
    Ok(rows)
}

/// Sampled-mode convergence rows: block empirical measures of seeded runs
/// against the continuum Dirac fibers at matching block resolution.
pub fn sampled_rows(exp: &Experiment, pairs: &[(usize, usize)]) -> CliResult<Vec<StudyRow>> {
    let totals: Vec<usize> = pairs.iter().map(|&(n, m)| n * m).collect();
    check_strictly_increasing(&totals, "system sizes (blocks x per-block)")?;
    let InitialSpec::Law(law) = &exp.init else {
        return Err(CliError::Config(
            "sampled study rows need an [initial.law]".into(),
        ));
    };
    let InitialLaw::Dirac { value } = law else {
        return Err(CliError::Config(
            "the sampled study compares against the continuum solution, which needs a \
             deterministic initial field: use an [initial.law] with family = \"dirac\""
                .into(),
        ));
    };
    let mut rows = Vec::new();
    for &(n, m) in pairs {
        let ens = sample_block_system(law, n, m, exp.seed, &exp.graphon, &exp.kernel, exp.grid)?;
        let empirical = local_empirical_measure(&ens, n, m)?;
        let u0 = sample_profile(|x| value.eval(x), n)?;
        let field = solve_continuum(&exp.kernel, &exp.graphon, &u0, 1, exp.grid)?;
        let (dirac_fibers, _) = continuum_to_measure(&field)?;
        let dist = coevolve_core::transport::dist_fibered_paths(&dirac_fibers, &empirical)?;
        rows.push(StudyRow {
            n: n * m,
            dist_to_limit: dist,
            dist_successive: None,
        });
    }
    Ok(rows)
}

fn rows_csv(rows: &[StudyRow]) -> String {
    let successive = rows.iter().any(|r| r.dist_successive.is_some());
    let mut out = String::from(if successive {
        "N,dist_to_limit,dist_successive\n"
    } else {
        "N,dist_to_limit\n"
    });
    for row in rows {
        out.push_str(&row.n.to_string());
        out.push(',');
        out.push_str(&fmt_f64(row.dist_to_limit));
        if successive {
            out.push(',');
            out.push_str(&fmt_f64(row.dist_successive.expect("uniform row shape")));
        }
        out.push('\n');
    }
    out
}

/// Run the configured convergence study and write `study.csv`, `study.svg`,
/// and the manifest.
pub fn run_study(exp: &Experiment) -> CliResult<StudyOutcome> {
    let total = Instant::now();
    let rows = match &exp.mode {
        RunMode::Sizes(sizes) => deterministic_rows(exp, sizes)?,
        RunMode::Pairs(pairs) => sampled_rows(exp, pairs)?,
    };

    std::fs::create_dir_all(&exp.out_dir)?;
    let mut artifacts: Vec<ArtifactRecord> = Vec::new();
    let table = rows_csv(&rows);
    if exp.formats.csv {
        std::fs::write(exp.out_dir.join("study.csv"), &table)?;
        artifacts.push(artifact_record(&exp.out_dir, "study.csv")?);
    }
    if exp.formats.svg {
        let svg = render_csv_plot(&table, PlotKind::LogLog)?;
        std::fs::write(exp.out_dir.join("study.svg"), svg)?;
        artifacts.push(artifact_record(&exp.out_dir, "study.svg")?);
    }

    let mut wall = BTreeMap::new();
    wall.insert("total".into(), total.elapsed().as_millis() as u64);
    let manifest = Manifest::build(
        "study",
        config_hash(&exp.raw),
        exp.seed,
        exp.grid,
        artifacts,
        wall,
    );
    let manifest_path = manifest.write(&exp.out_dir)?;
    Ok(StudyOutcome {
        rows,
        manifest,
        manifest_path,
    })
}
