use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipc_cli::commands::{self, Common, RenderArgs, VerifyArgs};
use ipc_cli::config::{default_grid, default_resolution, default_samples, parse_json, read_text, RenderConfig, TransformConfig, VerifyConfig};
use ipc_cli::CliError;

/// Polynomial constraints on nonlinearities and SOS region-of-attraction
/// certificates.
///
/// Exit codes: 0 success, 1 verification failure or non-invertible h1,
/// 2 usage/schema/config error, 3 synthesis or certification failure.
/// Solver tolerances can be overridden through IPC_SOLVER_TOL, e.g.
/// `feas=1e-9,residual=1e-6`.
#[derive(Parser)]
#[command(name = "ipc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Override the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Validate and describe the run without solving or writing anything.
    #[arg(long)]
    dry_run: bool,
}

impl CommonArgs {
    fn common(&self) -> Common {
        Common { out_dir: self.out_dir.clone(), seed: self.seed, dry_run: self.dry_run }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a polynomial constraint from a JSON config.
    SynthConstraint {
        /// Synthesis config.
        #[arg(required_unless_present = "config", conflicts_with = "config")]
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a constraint file against the true operator on an interval.
    VerifyConstraint {
        /// Constraint JSON.
        #[arg(required_unless_present = "config")]
        constraint: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        delta: Option<String>,
        /// Defaults to the interval recorded in the constraint.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        interval: Option<Vec<f64>>,
        #[arg(long, default_value_t = default_grid())]
        grid: usize,
        #[arg(long, conflicts_with_all = ["constraint", "delta", "interval"])]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample a constraint on a grid and along the operator's graph.
    RenderConstraint {
        #[arg(required_unless_present = "config")]
        constraint: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        delta: Option<String>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, required_unless_present = "config")]
        v_range: Option<Vec<f64>>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, required_unless_present = "config")]
        w_range: Option<Vec<f64>>,
        #[arg(long, default_value_t = default_resolution())]
        resolution: usize,
        #[arg(long, conflicts_with_all = ["constraint", "delta", "v_range", "w_range"])]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compose a constraint with a graph map h = (h1, h2).
    Transform {
        /// Linear map as `a,b,c,d` (row-major).
        #[arg(long, allow_hyphen_values = true)]
        h: Option<String>,
        /// Quadratic form as `a,b,c,d` (row-major, symmetric).
        #[arg(long, allow_hyphen_values = true)]
        m: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        h1: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        h2: Option<String>,
        /// Constraint text in v, w.
        #[arg(long, allow_hyphen_values = true)]
        psi: Option<String>,
        /// Constraint file, alternative to --psi.
        #[arg(long)]
        constraint: Option<PathBuf>,
        #[arg(long)]
        delta: Option<String>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        interval: Option<Vec<f64>>,
        #[arg(long, default_value_t = default_samples())]
        samples: usize,
        #[arg(long, conflicts_with_all = ["h", "m", "h1", "h2", "psi", "constraint", "delta", "interval"])]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Certify a region-of-attraction inner estimate.
    Roa {
        #[arg(required_unless_present = "config", conflicts_with = "config")]
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn pair(v: Option<Vec<f64>>) -> Option<(f64, f64)> {
    v.map(|v| (v[0], v[1]))
}

fn matrix(text: Option<String>, name: &str) -> Result<Option<[[f64; 2]; 2]>, CliError> {
    let Some(text) = text else { return Ok(None) };
    let xs = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("--{name}: {e}")))?;
    match xs[..] {
        [a, b, c, d] => Ok(Some([[a, b], [c, d]])),
        _ => Err(CliError::Config(format!("--{name} needs four comma-separated numbers"))),
    }
}

fn with_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String), CliError> {
    let text = read_text(path)?;
    Ok((parse_json(&text, path)?, text))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthConstraint { path, config, common } => {
            commands::synth(&path.or(config).expect("clap requires one"), &common.common())
        }
        Command::Roa { path, config, common } => commands::roa(&path.or(config).expect("clap requires one"), &common.common()),
        Command::VerifyConstraint { constraint, delta, interval, grid, config, common } => match config {
            Some(p) => {
                let (cfg, text): (VerifyConfig, String) = with_config(&p)?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                let args = VerifyArgs { constraint: dir.join(cfg.constraint), delta: cfg.delta, interval: cfg.interval, grid: cfg.grid };
                commands::verify(&args, Some((&p, &text)), &common.common())
            }
            None => {
                let args = VerifyArgs {
                    constraint: constraint.expect("clap requires it"),
                    delta: delta.expect("clap requires it"),
                    interval: pair(interval),
                    grid,
                };
                commands::verify(&args, None, &common.common())
            }
        },
        Command::RenderConstraint { constraint, delta, v_range, w_range, resolution, config, common } => match config {
            Some(p) => {
                let (cfg, text): (RenderConfig, String) = with_config(&p)?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                let args = RenderArgs {
                    constraint: dir.join(cfg.constraint),
                    delta: cfg.delta,
                    v_range: cfg.v_range,
                    w_range: cfg.w_range,
                    resolution: cfg.resolution,
                };
                commands::render(&args, Some((&p, &text)), &common.common())
            }
            None => {
                let args = RenderArgs {
                    constraint: constraint.expect("clap requires it"),
                    delta: delta.expect("clap requires it"),
                    v_range: pair(v_range).expect("clap requires it"),
                    w_range: pair(w_range).expect("clap requires it"),
                    resolution,
                };
                commands::render(&args, None, &common.common())
            }
        },
        Command::Transform { h, m, h1, h2, psi, constraint, delta, interval, samples, config, common } => match config {
            Some(p) => {
                let (cfg, text): (TransformConfig, String) = with_config(&p)?;
                commands::transform(&cfg, Some((&p, &text)), &common.common())
            }
            None => {
                let cfg = TransformConfig {
                    h: matrix(h, "h")?,
                    m: matrix(m, "m")?,
                    h1,
                    h2,
                    psi,
                    constraint,
                    delta,
                    interval: pair(interval),
                    samples,
                };
                commands::transform(&cfg, None, &common.common())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
