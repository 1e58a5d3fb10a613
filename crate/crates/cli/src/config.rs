//! TOML experiment configuration: schema, validation, and resolution into
//! core objects.
//!
//! A config has five required tables — `[system]`, `[graphon]`, `[initial]`,
//! `[grid]`, `[run]` — and an optional `[output]` table:
//!
//! ```toml
//! [system]
//! kernel = "flow:kuramoto:linear:1:cos"   # kernel id
//! # coupling = "kuramoto"                 # required by duhamel / bare instantaneous ids
//!
//! [graphon]
//! family = "product"          # constant:<c> | product | min | cosine | threshold:<r>
//! # step_csv = "matrix.csv"   # or: step graphon from a weight-matrix CSV
//!
//! [initial]
//! profile = "sin_2pi"         # deterministic grid data (use with run.sizes)
//! # [initial.law]             # or: sampled block laws (use with run.pairs)
//! # family = "gaussian"; mean = [0.0, 1.0]; sd = [0.1]
//!
//! [grid]
//! t_end = 1.0
//! steps = 1000
//!
//! [run]
//! sizes = [16]                # particle counts (deterministic mode)
//! # pairs = [[4, 4], [8, 8]]  # (blocks, per-block) sampled mode
//! seed = 42
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "json", "svg"]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use coevolve_core::catalog::PairCoupling;
use coevolve_core::dynamics::MemoryKernel;
use coevolve_core::graphon::{step_graphon, Graphon, WeightMatrix};
use coevolve_core::meanfield::{InitialLaw, Profile};
use coevolve_core::trajectory::TimeGrid;

use crate::{CliError, CliResult};

// ---------------------------------------------------------------------------
// Raw (serde) schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    graphon: RawGraphon,
    initial: RawInitial,
    grid: RawGrid,
    run: RawRun,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kernel: String,
    coupling: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraphon {
    family: Option<String>,
    step_csv: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    profile: Option<String>,
    law: Option<RawLaw>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    family: String,
    mean: Option<Vec<f64>>,
    sd: Option<Vec<f64>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    value: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_end: f64,
    steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    sizes: Option<Vec<usize>>,
    pairs: Option<Vec<[usize; 2]>>,
    seed: u64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    formats: Option<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Resolved experiment
// ---------------------------------------------------------------------------

/// Named deterministic initial profile on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileId {
    /// `sin(2 pi x)`.
    Sin2Pi,
    /// `cos(2 pi x)`.
    Cos2Pi,
    /// `x`.
    Linear,
    /// Constant `c`.
    Constant(f64),
    /// Polynomial with the given coefficients, lowest degree first.
    Poly(Vec<f64>),
}

impl ProfileId {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ProfileId::Sin2Pi => (2.0 * std::f64::consts::PI * x).sin(),
            ProfileId::Cos2Pi => (2.0 * std::f64::consts::PI * x).cos(),
            ProfileId::Linear => x,
            ProfileId::Constant(c) => *c,
            ProfileId::Poly(coeffs) => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        let bad_num = |tok: &str| {
            CliError::Config(format!("initial profile '{s}': expected a number, found '{tok}'"))
        };
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or("");
        let id = match head {
            "sin_2pi" => ProfileId::Sin2Pi,
            "cos_2pi" => ProfileId::Cos2Pi,
            "linear" => ProfileId::Linear,
            "constant" => {
                let tok = parts
                    .next()
                    .ok_or_else(|| CliError::Config(format!("initial profile '{s}' ends early")))?;
                ProfileId::Constant(tok.parse::<f64>().map_err(|_| bad_num(tok))?)
            }
            "poly" => {
                let coeffs = parts
                    .by_ref()
                    .map(|tok| tok.parse::<f64>().map_err(|_| bad_num(tok)))
                    .collect::<CliResult<Vec<f64>>>()?;
                if coeffs.is_empty() {
                    return Err(CliError::Config(format!(
                        "initial profile '{s}' needs at least one coefficient"
                    )));
                }
                return Ok(ProfileId::Poly(coeffs));
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown initial profile '{other}' (expected sin_2pi, cos_2pi, linear, \
                     constant:<c>, or poly:<c0>:<c1>:...)"
                )));
            }
        };
        if let Some(extra) = parts.next() {
            return Err(CliError::Config(format!(
                "initial profile '{s}' has trailing token '{extra}'"
            )));
        }
        Ok(id)
    }
}

/// Initial data: a deterministic grid profile or a sampled block-law family.
#[derive(Debug, Clone)]
pub enum InitialSpec {
    Profile(ProfileId),
    Law(InitialLaw),
}

/// System sizes to run: plain particle counts, or (blocks, per-block) pairs
/// for the sampled block mode.
#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    Sizes(Vec<usize>),
    Pairs(Vec<(usize, usize)>),
}

/// Which artifact formats to emit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            csv: true,
            json: true,
            svg: true,
        }
    }
}

/// A fully validated experiment: every id resolved into its core object.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub kernel: MemoryKernel,
    pub graphon: Graphon,
    pub init: InitialSpec,
    pub grid: TimeGrid,
    pub mode: RunMode,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub formats: Formats,
    /// The parsed TOML document, kept for content hashing.
    pub raw: toml::Value,
}

impl Experiment {
    /// Load and validate a config file.
    pub fn load(path: &Path) -> CliResult<Experiment> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Experiment::from_toml(&text, base)
            .map_err(|e| CliError::Config(format!("config '{}': {e}", path.display())))
    }

    /// Parse and validate config text. Relative data paths (`step_csv`)
    /// resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Experiment> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let value: toml::Value =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;

        let coupling = match &raw.system.coupling {
            Some(s) => Some(
                s.parse::<PairCoupling>()
                    .map_err(|e| CliError::Config(format!("[system] coupling: {e}")))?,
            ),
            None => None,
        };
        let kernel = MemoryKernel::parse(&raw.system.kernel, coupling)
            .map_err(|e| CliError::Config(format!("[system] kernel: {e}")))?;

        let graphon = resolve_graphon(&raw.graphon, base_dir)?;
        let init = resolve_initial(&raw.initial)?;
        let grid = TimeGrid::new(raw.grid.t_end, raw.grid.steps)
            .map_err(|e| CliError::Config(format!("[grid]: {e}")))?;
        let mode = resolve_mode(&raw.run)?;

        match (&init, &mode) {
            (InitialSpec::Profile(_), RunMode::Sizes(_)) => {}
            (InitialSpec::Law(_), RunMode::Pairs(_)) => {}
            (InitialSpec::Profile(_), RunMode::Pairs(_)) => {
                return Err(CliError::Config(
                    "[run] pairs requires a sampled [initial.law]; deterministic profiles \
                     use [run] sizes"
                        .into(),
                ));
            }
            (InitialSpec::Law(_), RunMode::Sizes(_)) => {
                return Err(CliError::Config(
                    "[initial.law] requires [run] pairs = [[blocks, per_block], ...]; \
                     plain sizes need an [initial] profile"
                        .into(),
                ));
            }
        }

        let out_dir = PathBuf::from(raw.output.dir.clone().unwrap_or_else(|| "out".into()));
        let formats = resolve_formats(raw.output.formats.as_deref())?;

        Ok(Experiment {
            kernel,
            graphon,
            init,
            grid,
            mode,
            seed: raw.run.seed,
            out_dir,
            formats,
            raw: value,
        })
    }
}

fn resolve_graphon(raw: &RawGraphon, base_dir: &Path) -> CliResult<Graphon> {
    match (&raw.family, &raw.step_csv) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "[graphon] needs exactly one of 'family' and 'step_csv', got both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "[graphon] needs exactly one of 'family' and 'step_csv'".into(),
        )),
        (Some(id), None) => parse_graphon_id(id),
        (None, Some(rel)) => {
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::Config(format!(
                    "[graphon] cannot read step_csv '{}': {e}",
                    path.display()
                ))
            })?;
            let w = WeightMatrix::read_csv(&text)
                .map_err(|e| CliError::Config(format!("[graphon] step_csv: {e}")))?;
            step_graphon(w).map_err(|e| CliError::Config(format!("[graphon] step_csv: {e}")))
        }
    }
}

/// Parse a graphon family id: `constant:<c>`, `product`, `min`, `cosine`, or
/// `threshold:<r>`.
pub fn parse_graphon_id(s: &str) -> CliResult<Graphon> {
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or("");
    let mut want_number = |what: &str| -> CliResult<f64> {
        let tok = parts
            .next()
            .ok_or_else(|| CliError::Config(format!("graphon '{s}' needs {what}")))?;
        tok.parse::<f64>().map_err(|_| {
            CliError::Config(format!("graphon '{s}': expected a number, found '{tok}'"))
        })
    };
    let g = match head {
        "constant" => {
            let c = want_number("a constant value")?;
            Graphon::constant(c).map_err(|e| CliError::Config(format!("graphon '{s}': {e}")))?
        }
        "product" => Graphon::product(),
        "min" => Graphon::min(),
        "cosine" => Graphon::cosine(),
        "threshold" => {
            let r = want_number("a radius")?;
            Graphon::threshold(r).map_err(|e| CliError::Config(format!("graphon '{s}': {e}")))?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown graphon family '{other}' (expected constant:<c>, product, min, \
                 cosine, or threshold:<r>)"
            )));
        }
    };
    if let Some(extra) = parts.next() {
        return Err(CliError::Config(format!(
            "graphon '{s}' has trailing token '{extra}'"
        )));
    }
    Ok(g)
}

fn resolve_initial(raw: &RawInitial) -> CliResult<InitialSpec> {
    match (&raw.profile, &raw.law) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "[initial] needs exactly one of 'profile' and 'law', got both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "[initial] needs exactly one of 'profile' and 'law'".into(),
        )),
        (Some(id), None) => Ok(InitialSpec::Profile(ProfileId::parse(id)?)),
        (None, Some(law)) => Ok(InitialSpec::Law(resolve_law(law)?)),
    }
}

fn profile_field(name: &str, coeffs: &Option<Vec<f64>>, family: &str) -> CliResult<Profile> {
    let c = coeffs.as_ref().ok_or_else(|| {
        CliError::Config(format!("[initial.law] family '{family}' needs '{name}'"))
    })?;
    Profile::new(c.clone())
        .map_err(|e| CliError::Config(format!("[initial.law] {name}: {e}")))
}

fn forbid_fields(family: &str, fields: &[(&str, bool)]) -> CliResult<()> {
    for (name, present) in fields {
        if *present {
            return Err(CliError::Config(format!(
                "[initial.law] family '{family}' does not take '{name}'"
            )));
        }
    }
    Ok(())
}

fn resolve_law(raw: &RawLaw) -> CliResult<InitialLaw> {
    match raw.family.as_str() {
        "gaussian" => {
            forbid_fields(
                "gaussian",
                &[
                    ("lo", raw.lo.is_some()),
                    ("hi", raw.hi.is_some()),
                    ("value", raw.value.is_some()),
                ],
            )?;
            Ok(InitialLaw::Gaussian {
                mean: profile_field("mean", &raw.mean, "gaussian")?,
                sd: profile_field("sd", &raw.sd, "gaussian")?,
            })
        }
        "uniform" => {
            forbid_fields(
                "uniform",
                &[
                    ("mean", raw.mean.is_some()),
                    ("sd", raw.sd.is_some()),
                    ("value", raw.value.is_some()),
                ],
            )?;
            Ok(InitialLaw::Uniform {
                lo: profile_field("lo", &raw.lo, "uniform")?,
                hi: profile_field("hi", &raw.hi, "uniform")?,
            })
        }
        "dirac" => {
            forbid_fields(
                "dirac",
                &[
                    ("mean", raw.mean.is_some()),
                    ("sd", raw.sd.is_some()),
                    ("lo", raw.lo.is_some()),
                    ("hi", raw.hi.is_some()),
                ],
            )?;
            Ok(InitialLaw::Dirac {
                value: profile_field("value", &raw.value, "dirac")?,
            })
        }
        other => Err(CliError::Config(format!(
            "unknown initial law family '{other}' (expected gaussian, uniform, or dirac)"
        ))),
    }
}

fn resolve_mode(raw: &RawRun) -> CliResult<RunMode> {
    match (&raw.sizes, &raw.pairs) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "[run] needs exactly one of 'sizes' and 'pairs', got both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "[run] needs exactly one of 'sizes' and 'pairs'".into(),
        )),
        (Some(sizes), None) => {
            if sizes.is_empty() {
                return Err(CliError::Config("[run] sizes must be non-empty".into()));
            }
            if sizes.iter().any(|&n| n == 0) {
                return Err(CliError::Config("[run] sizes must all be >= 1".into()));
            }
            Ok(RunMode::Sizes(sizes.clone()))
        }
        (None, Some(pairs)) => {
            if pairs.is_empty() {
                return Err(CliError::Config("[run] pairs must be non-empty".into()));
            }
            if pairs.iter().any(|&[n, m]| n == 0 || m == 0) {
                return Err(CliError::Config(
                    "[run] pairs entries must all be >= 1".into(),
                ));
            }
            Ok(RunMode::Pairs(pairs.iter().map(|&[n, m]| (n, m)).collect()))
        }
    }
}

fn resolve_formats(list: Option<&[String]>) -> CliResult<Formats> {
    let Some(list) = list else {
        return Ok(Formats::default());
    };
    let mut f = Formats {
        csv: false,
        json: false,
        svg: false,
    };
    for item in list {
        match item.as_str() {
            "csv" => f.csv = true,
            "json" => f.json = true,
            "svg" => f.svg = true,
            other => {
                return Err(CliError::Config(format!(
                    "unknown output format '{other}' (expected csv, json, svg)"
                )));
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[system]
kernel = "flow:kuramoto:linear:1:cos"

[graphon]
family = "product"

[initial]
profile = "sin_2pi"

[grid]
t_end = 1.0
steps = 100

[run]
sizes = [8, 16]
seed = 42
"#;

    fn load(text: &str) -> CliResult<Experiment> {
        Experiment::from_toml(text, Path::new("."))
    }

    #[test]
    fn minimal_config_loads() {
        let exp = load(BASE).unwrap();
        assert_eq!(exp.mode, RunMode::Sizes(vec![8, 16]));
        assert_eq!(exp.seed, 42);
        assert_eq!(exp.grid.steps(), 100);
        assert_eq!(exp.out_dir, PathBuf::from("out"));
        assert_eq!(exp.formats, Formats::default());
        assert!(matches!(exp.init, InitialSpec::Profile(ProfileId::Sin2Pi)));
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = BASE.replace("seed = 42", "seed = 42\nbogus_key = 1");
        let err = load(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "message: {msg}");
        // toml reports the offending line.
        assert!(msg.contains("line"), "message: {msg}");
    }

    #[test]
    fn profile_ids_parse() {
        assert_eq!(ProfileId::parse("linear").unwrap().eval(0.3), 0.3);
        assert_eq!(ProfileId::parse("constant:2.5").unwrap().eval(0.9), 2.5);
        let p = ProfileId::parse("poly:1:0:2").unwrap();
        assert_eq!(p.eval(2.0), 9.0);
        let s = ProfileId::parse("sin_2pi").unwrap();
        assert!((s.eval(0.25) - 1.0).abs() < 1e-15);
        assert!(ProfileId::parse("sin").is_err());
        assert!(ProfileId::parse("constant").is_err());
        assert!(ProfileId::parse("linear:3").is_err());
        assert!(ProfileId::parse("poly").is_err());
    }

    #[test]
    fn graphon_ids_parse() {
        assert!(matches!(
            parse_graphon_id("product").unwrap(),
            Graphon::Family(_)
        ));
        assert!(parse_graphon_id("constant:0.5").is_ok());
        assert!(parse_graphon_id("threshold:0.3").is_ok());
        assert!(parse_graphon_id("min").is_ok());
        assert!(parse_graphon_id("cosine").is_ok());
        assert!(parse_graphon_id("blob").is_err());
        assert!(parse_graphon_id("constant").is_err());
        assert!(parse_graphon_id("product:1").is_err());
        assert!(parse_graphon_id("threshold:nope").is_err());
    }

    #[test]
    fn law_mode_requires_pairs() {
        let text = BASE
            .replace(
                "[initial]\nprofile = \"sin_2pi\"",
                "[initial]\n[initial.law]\nfamily = \"dirac\"\nvalue = [0.0, 1.0]",
            )
            .replace("sizes = [8, 16]", "sizes = [8]");
        let err = load(&text).unwrap_err().to_string();
        assert!(err.contains("pairs"), "message: {err}");

        let ok = text.replace("sizes = [8]", "pairs = [[2, 4], [4, 4]]");
        let exp = load(&ok).unwrap();
        assert_eq!(exp.mode, RunMode::Pairs(vec![(2, 4), (4, 4)]));
        assert!(matches!(exp.init, InitialSpec::Law(InitialLaw::Dirac { .. })));
    }

    #[test]
    fn law_field_mismatch_is_rejected() {
        let gauss = BASE.replace(
            "[initial]\nprofile = \"sin_2pi\"",
            "[initial]\n[initial.law]\nfamily = \"gaussian\"\nmean = [0.0]\nsd = [0.1]\nvalue = [1.0]",
        );
        let gauss = gauss.replace("sizes = [8, 16]", "pairs = [[2, 2]]");
        let err = load(&gauss).unwrap_err().to_string();
        assert!(err.contains("does not take 'value'"), "message: {err}");

        let missing = BASE.replace(
            "[initial]\nprofile = \"sin_2pi\"",
            "[initial]\n[initial.law]\nfamily = \"uniform\"\nlo = [0.0]",
        );
        let missing = missing.replace("sizes = [8, 16]", "pairs = [[2, 2]]");
        let err = load(&missing).unwrap_err().to_string();
        assert!(err.contains("needs 'hi'"), "message: {err}");
    }

    #[test]
    fn exclusive_sections_are_enforced() {
        let both = BASE.replace(
            "[graphon]\nfamily = \"product\"",
            "[graphon]\nfamily = \"product\"\nstep_csv = \"w.csv\"",
        );
        assert!(load(&both).is_err());

        let neither = BASE.replace("family = \"product\"", "");
        assert!(load(&neither).is_err());

        let both_modes = BASE.replace("sizes = [8, 16]", "sizes = [8]\npairs = [[2, 2]]");
        assert!(load(&both_modes).is_err());

        let empty = BASE.replace("sizes = [8, 16]", "sizes = []");
        assert!(load(&empty).is_err());

        let zero = BASE.replace("sizes = [8, 16]", "sizes = [0, 8]");
        assert!(load(&zero).is_err());
    }

    #[test]
    fn kernel_and_coupling_resolve() {
        let duhamel = BASE.replace(
            "kernel = \"flow:kuramoto:linear:1:cos\"",
            "kernel = \"duhamel:1:cos\"\ncoupling = \"kuramoto\"",
        );
        assert!(load(&duhamel).is_ok());

        // duhamel without a coupling is invalid.
        let missing = BASE.replace(
            "kernel = \"flow:kuramoto:linear:1:cos\"",
            "kernel = \"duhamel:1:cos\"",
        );
        let err = load(&missing).unwrap_err().to_string();
        assert!(err.contains("coupling"), "message: {err}");
    }

    #[test]
    fn formats_parse_and_reject() {
        let only_csv = BASE.replace(
            "[run]",
            "[output]\nformats = [\"csv\"]\n\n[run]",
        );
        let exp = load(&only_csv).unwrap();
        assert!(exp.formats.csv && !exp.formats.json && !exp.formats.svg);

        let bad = BASE.replace("[run]", "[output]\nformats = [\"png\"]\n\n[run]");
        assert!(load(&bad).is_err());
    }

    #[test]
    fn grid_validation_propagates() {
        let bad = BASE.replace("t_end = 1.0", "t_end = -1.0");
        assert!(load(&bad).is_err());
        let bad = BASE.replace("steps = 100", "steps = 0");
        assert!(load(&bad).is_err());
    }

    #[test]
    fn step_csv_loads_from_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Vec::new();
        let nodes = coevolve_core::graphon::uniform_nodes(2).unwrap();
        let m = coevolve_core::graphon::WeightMatrix::new(
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            nodes,
        )
        .unwrap();
        m.write_csv(&mut w).unwrap();
        std::fs::write(dir.path().join("w.csv"), &w).unwrap();

        let text = BASE.replace(
            "family = \"product\"",
            "step_csv = \"w.csv\"",
        );
        let exp = Experiment::from_toml(&text, dir.path()).unwrap();
        assert!(matches!(exp.graphon, Graphon::Step(_)));
    }
}
