//! `coevolve`: experiment harness for particle systems on co-evolving
//! networks.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 solver
//! divergence, 4 stability-bound violation.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use coevolve::config::Experiment;
use coevolve::svg::PlotKind;
use coevolve::verify::parse_overrides;
use coevolve::{CliError, CliResult, EXIT_CONFIG};
use coevolve_core::meanfield::lipschitz_flow_bound;
use coevolve_core::trajectory::fmt_f64;
use coevolve_core::transport::{dobrushin_bound, dobrushin_bound_nonlip};

#[derive(Parser)]
#[command(
    name = "coevolve",
    version,
    about = "Simulate, study, and verify particle systems on co-evolving networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured systems and write trajectory artifacts.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
    },
    /// Run a convergence study against the mean-field reference.
    Study {
        /// Experiment config (TOML).
        config: PathBuf,
    },
    /// Check the stability bounds on the built-in 24-trial suite.
    Verify {
        /// Experiment config (TOML); supplies step size, seed, and output dir.
        config: PathBuf,
        /// Multiply a recorded constant before bound evaluation, e.g.
        /// `--override L_K=0.5`.
        #[arg(long = "override", value_name = "NAME=FACTOR")]
        overrides: Vec<String>,
    },
    /// Render a numeric CSV table (x column + series columns) to SVG.
    Plot {
        /// Input CSV file.
        csv: PathBuf,
        /// Plot kind: `loglog` or `series`.
        #[arg(long)]
        kind: String,
        /// Output SVG path (default: the CSV path with extension `.svg`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stability bound and print the single number.
    Bound {
        #[command(subcommand)]
        which: BoundCmd,
    },
}

#[derive(Subcommand)]
enum BoundCmd {
    /// Initial-distance stability: sqrt(2) * max(1, L_W) * d0 * 2 e^{2 L_K t}.
    Dobrushin {
        #[arg(long)]
        lk: f64,
        #[arg(long)]
        lw: f64,
        #[arg(long)]
        d0: f64,
        #[arg(long)]
        t: f64,
    },
    /// Fibered-distance stability with a connectivity mismatch term:
    /// 2 dI0 e^{2 L_K t} + (1/2) wl1 (e^{2 L_K t} - 1).
    DobrushinNonlip {
        #[arg(long)]
        lk: f64,
        #[arg(long)]
        di0: f64,
        #[arg(long)]
        wl1: f64,
        #[arg(long)]
        t: f64,
    },
    /// Characteristic-flow sensitivity: e^{L_K t} dzeta + L_W (e^{L_K t} - 1) dx.
    Flow {
        #[arg(long)]
        lk: f64,
        #[arg(long)]
        lw: f64,
        #[arg(long)]
        dzeta: f64,
        #[arg(long)]
        dx: f64,
        #[arg(long)]
        t: f64,
    },
}

fn init_thread_pool() -> CliResult<()> {
    let Ok(raw) = std::env::var("COEVOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| {
        CliError::Config(format!(
            "COEVOLVE_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    if n == 0 {
        return Err(CliError::Config(
            "COEVOLVE_THREADS must be a positive integer, got '0'".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run { config } => {
            let exp = Experiment::load(&config)?;
            let outcome = coevolve::runner::run(&exp)?;
            println!(
                "wrote {} artifacts to {} (content hash {})",
                outcome.manifest.artifacts.len(),
                exp.out_dir.display(),
                outcome.manifest.content_hash
            );
            println!("manifest: {}", outcome.manifest_path.display());
            Ok(())
        }
        Cmd::Study { config } => {
            let exp = Experiment::load(&config)?;
            let outcome = coevolve::study::run_study(&exp)?;
            for row in &outcome.rows {
                match row.dist_successive {
                    Some(s) => println!(
                        "N={:<6} dist_to_limit={}  dist_successive={}",
                        row.n,
                        fmt_f64(row.dist_to_limit),
                        fmt_f64(s)
                    ),
                    None => println!(
                        "N={:<6} dist_to_limit={}",
                        row.n,
                        fmt_f64(row.dist_to_limit)
                    ),
                }
            }
            println!("manifest: {}", outcome.manifest_path.display());
            Ok(())
        }
        Cmd::Verify { config, overrides } => {
            let exp = Experiment::load(&config)?;
            let ov = parse_overrides(&overrides)?;
            let outcome = coevolve::verify::run_verify(&exp, &ov)?;
            let report = &outcome.report;
            println!(
                "{} trials, {} violations, min margin {}",
                report.trials.len(),
                report.violations,
                fmt_f64(report.min_margin)
            );
            println!("report: {}", outcome.report_path.display());
            if report.violations > 0 {
                return Err(CliError::BoundViolation(format!(
                    "{} of {} trials exceeded their bound",
                    report.violations,
                    report.trials.len()
                )));
            }
            Ok(())
        }
        Cmd::Plot { csv, kind, out } => {
            let kind = PlotKind::parse(&kind)?;
            let out = out.unwrap_or_else(|| csv.with_extension("svg"));
            coevolve::svg::plot_file(&csv, kind, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Bound { which } => {
            let value = match which {
                BoundCmd::Dobrushin { lk, lw, d0, t } => dobrushin_bound(lk, lw, d0, t),
                BoundCmd::DobrushinNonlip { lk, di0, wl1, t } => {
                    dobrushin_bound_nonlip(lk, di0, wl1, t)
                }
                BoundCmd::Flow {
                    lk,
                    lw,
                    dzeta,
                    dx,
                    t,
                } => lipschitz_flow_bound(lk, lw, dzeta, dx, t),
            };
            println!("{}", fmt_f64(value));
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        std::process::exit(EXIT_CONFIG);
    }
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
