//! JSON schemas read by the commands. Relative paths inside a config resolve
//! against the directory of the file that names them.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use ipc_core::constraints::{
    box_validity, pade_approximant, sector_constraint, DeltaOperator, PolynomialConstraint, Provenance, VW,
};
use ipc_core::poly::{parse, Polynomial};
use ipc_core::roa::{initial_lyapunov, FalsifyOptions, ModelSpec, RoaCertificate, RoaConfig, RoaConstraint, SystemModel};
use ipc_core::sos::SolverTolerances;
use ipc_core::synth::SynthConfig;

use crate::CliError;

/// Environment variable holding solver tolerance overrides, e.g.
/// `feas=1e-9,gap=1e-9,residual=1e-6,max_iterations=150,min_margin=0`.
pub const TOL_ENV: &str = "IPC_SOLVER_TOL";

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse JSON, reporting line and column on failure.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    parse_json(&read_text(path)?, path)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn delta(tag: &str) -> Result<DeltaOperator, CliError> {
    DeltaOperator::from_tag(tag).ok_or_else(|| CliError::Config(format!("unknown delta tag `{tag}`")))
}

pub fn vw_poly(text: &str) -> Result<Polynomial<f64>, CliError> {
    parse(text, &VW).map_err(|e| CliError::Config(format!("`{text}`: {e}")))
}

/// Apply `IPC_SOLVER_TOL` on top of `tol`.
pub fn tolerances_from_env(mut tol: SolverTolerances) -> Result<SolverTolerances, CliError> {
    let Ok(spec) = std::env::var(TOL_ENV) else { return Ok(tol) };
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| CliError::Config(format!("{TOL_ENV}: expected key=value, got `{item}`")))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{TOL_ENV}: `{item}`: {e}"));
        match k.trim() {
            "feas" => tol.feas = v.trim().parse().map_err(|e| bad(&e))?,
            "gap" => tol.gap = v.trim().parse().map_err(|e| bad(&e))?,
            "residual" => tol.residual = v.trim().parse().map_err(|e| bad(&e))?,
            "min_margin" => tol.min_margin = v.trim().parse().map_err(|e| bad(&e))?,
            "max_iterations" => tol.max_iterations = v.trim().parse().map_err(|e| bad(&e))?,
            other => return Err(CliError::Config(format!("{TOL_ENV}: unknown key `{other}`"))),
        }
    }
    Ok(tol)
}

/// `verify-constraint --config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub constraint: PathBuf,
    pub delta: String,
    /// Defaults to the interval recorded in the constraint file.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

pub fn default_grid() -> usize {
    10_000
}

/// `render-constraint --config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub constraint: PathBuf,
    pub delta: String,
    pub v_range: (f64, f64),
    pub w_range: (f64, f64),
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

pub fn default_resolution() -> usize {
    101
}

/// `transform --config`. Either a linear map `h` with a quadratic form `m`,
/// or a polynomial map `(h1, h2)` (identity when absent) applied to `psi`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(default)]
    pub h: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub m: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub h1: Option<String>,
    #[serde(default)]
    pub h2: Option<String>,
    /// Constraint text in `v, w`.
    #[serde(default)]
    pub psi: Option<String>,
    /// Constraint file, alternative to `psi`.
    #[serde(default)]
    pub constraint: Option<PathBuf>,
    #[serde(default)]
    pub delta: Option<String>,
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

pub fn default_samples() -> usize {
    401
}

/// Where a constraint of an ROA run comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSource {
    Inline {
        text: String,
        #[serde(default = "hand")]
        provenance: Provenance,
    },
    File {
        path: PathBuf,
    },
    /// Synthesis config, run as part of the ROA command.
    Synth {
        config: PathBuf,
    },
    Pade {
        delta: String,
        m: usize,
        n: usize,
        k: u32,
        eps1: f64,
        eps2: f64,
        /// Interval the tangency conditions are checked on.
        range: (f64, f64),
    },
    Sector {
        alpha: f64,
        beta: f64,
    },
}

fn hand() -> Provenance {
    Provenance::Hand
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub name: String,
    #[serde(default)]
    pub channel: usize,
    #[serde(flatten)]
    pub source: ConstraintSource,
    /// Replaces the input-interval validity.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
    /// Adds an output box `w ∈ [lo, hi]`.
    #[serde(default)]
    pub output_box: Option<(f64, f64)>,
}

/// Initial Lyapunov function of an ROA run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum V0Spec {
    /// `AᵀP + PA = −Q` at the linearization, with `Q = I + KᵀK` when
    /// `q_gain = K` is given, or `Q` as given.
    Lyapunov {
        #[serde(default)]
        q: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        q_gain: Option<Vec<f64>>,
    },
    Polynomial { text: String },
    /// `V / c` of a saved certificate.
    Certificate { path: PathBuf },
    /// `V / c` of the certificate produced by running another ROA config.
    WarmStart { config: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotOptions {
    #[serde(default = "bins")]
    pub contour_bins: usize,
    #[serde(default = "contour_samples")]
    pub contour_samples: usize,
    #[serde(default = "trajectories")]
    pub trajectories: usize,
    #[serde(default = "t_end")]
    pub t_end: f64,
    #[serde(default = "dt")]
    pub dt: f64,
}

fn bins() -> usize {
    180
}
fn contour_samples() -> usize {
    200_000
}
fn trajectories() -> usize {
    8
}
fn t_end() -> f64 {
    20.0
}
fn dt() -> f64 {
    0.01
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions { contour_bins: bins(), contour_samples: contour_samples(), trajectories: trajectories(), t_end: t_end(), dt: dt() }
    }
}

/// Reference for the relative-volume column of the summary table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    Volume { label: String, volume: f64 },
    Certificate { label: String, path: PathBuf },
}

/// `roa --config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaRunConfig {
    pub name: String,
    pub model: ModelSpec,
    pub constraints: Vec<ConstraintEntry>,
    pub v0: V0Spec,
    pub roa: RoaConfig,
    /// Drives the volume estimate, falsification and plot sampling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub falsify: Option<FalsifyOptions>,
    #[serde(default)]
    pub plots: PlotOptions,
    #[serde(default)]
    pub baseline: Option<Baseline>,
}

/// An ROA config with everything it references loaded.
pub struct LoadedRoa {
    pub config: RoaRunConfig,
    pub dir: PathBuf,
    pub model: SystemModel,
    pub constraints: Vec<RoaConstraint>,
}

impl RoaRunConfig {
    pub fn load(path: &Path) -> Result<(RoaRunConfig, PathBuf), CliError> {
        let cfg: RoaRunConfig = load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, dir))
    }

    /// The ROA settings with the run seed and tolerance overrides applied.
    pub fn effective_roa(&self) -> Result<RoaConfig, CliError> {
        let mut roa = self.roa.clone();
        roa.volume = match roa.volume {
            ipc_core::roa::VolumeMethod::Auto { samples, .. } => ipc_core::roa::VolumeMethod::Auto { samples, seed: self.seed },
            ipc_core::roa::VolumeMethod::MonteCarlo { samples, .. } => {
                ipc_core::roa::VolumeMethod::MonteCarlo { samples, seed: self.seed }
            }
        };
        roa.tolerances = tolerances_from_env(roa.tolerances)?;
        roa.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(roa)
    }

    pub fn falsify_options(&self) -> FalsifyOptions {
        let mut f = self.falsify.unwrap_or_default();
        f.seed = self.seed;
        f
    }
}

impl LoadedRoa {
    pub fn new(config: RoaRunConfig, dir: PathBuf) -> Result<Self, CliError> {
        let model = config.model.build().map_err(|e| CliError::Config(e.to_string()))?;
        let constraints =
            config.constraints.iter().map(|e| build_constraint(e, &dir)).collect::<Result<Vec<_>, _>>()?;
        Ok(LoadedRoa { config, dir, model, constraints })
    }

    pub fn open(path: &Path) -> Result<Self, CliError> {
        let (cfg, dir) = RoaRunConfig::load(path)?;
        Self::new(cfg, dir)
    }
}

pub fn build_constraint(e: &ConstraintEntry, dir: &Path) -> Result<RoaConstraint, CliError> {
    let cfg_err = |x: &dyn std::fmt::Display| CliError::Config(format!("constraint `{}`: {x}", e.name));
    let mut c = match &e.source {
        ConstraintSource::Inline { text, provenance } => PolynomialConstraint::new(vw_poly(text)?, *provenance),
        ConstraintSource::File { path } => {
            let p = resolve(dir, path);
            PolynomialConstraint::from_json(&read_text(&p)?)
                .map_err(|x| CliError::Config(format!("{}: line {} column {}: {x}", p.display(), x.line(), x.column())))?
        }
        ConstraintSource::Synth { config } => {
            let sc: SynthConfig = load(&resolve(dir, config))?;
            let out = sc.run().map_err(|x| CliError::Failure(format!("constraint `{}`: {x}", e.name)))?;
            if !out.report.verify.ok {
                return Err(CliError::Rejected(format!(
                    "constraint `{}`: synthesized constraint fails verification (min {:.3e} at v = {})",
                    e.name, out.report.verify.min_value, out.report.verify.argmin
                )));
            }
            out.constraint
        }
        ConstraintSource::Pade { delta: tag, m, n, k, eps1, eps2, range } => {
            let d = delta(tag)?;
            let series = d.taylor(m + n).ok_or_else(|| cfg_err(&"delta has no built-in series"))?;
            let (num, den) = pade_approximant(&series, *m, *n).map_err(|x| cfg_err(&x))?;
            ipc_core::constraints::pade_constraint(&num.to_f64(), &den.to_f64(), *k, *eps1, *eps2, *range)
                .map_err(|x| cfg_err(&x))?
        }
        ConstraintSource::Sector { alpha, beta } => sector_constraint(*alpha, *beta).map_err(|x| cfg_err(&x))?,
    };
    if let Some((lo, hi)) = e.interval {
        c = c.with_interval(lo, hi);
    }
    if let Some((lo, hi)) = e.output_box {
        c = c.with_validity(box_validity(lo, hi).map_err(|x| cfg_err(&x))?);
    }
    Ok(RoaConstraint { name: e.name.clone(), channel: e.channel, constraint: c })
}

fn square(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("v0.q must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Resolve the initial `V`. A warm start runs the referenced config in full.
pub fn initial_v(spec: &V0Spec, model: &SystemModel, dir: &Path) -> Result<Polynomial<f64>, CliError> {
    let n = model.n();
    let scaled = |cert: RoaCertificate| cert.v.scale(&(1.0 / cert.c));
    match spec {
        V0Spec::Lyapunov { q, q_gain } => {
            let q = match (q, q_gain) {
                (Some(_), Some(_)) => return Err(CliError::Config("v0: give q or q_gain, not both".into())),
                (Some(rows), None) => square(rows, n)?,
                (None, Some(k)) if k.len() == n => {
                    let k = DMatrix::from_row_slice(1, n, k);
                    DMatrix::identity(n, n) + k.transpose() * k
                }
                (None, Some(_)) => return Err(CliError::Config(format!("v0.q_gain must have {n} entries"))),
                (None, None) => DMatrix::identity(n, n),
            };
            initial_lyapunov(&model.linearization(), &q, &model.states).map_err(|e| CliError::Config(format!("v0: {e}")))
        }
        V0Spec::Polynomial { text } => {
            parse(text, &model.states).map_err(|e| CliError::Config(format!("v0 `{text}`: {e}")))
        }
        V0Spec::Certificate { path } => {
            let cert: RoaCertificate = load(&resolve(dir, path))?;
            Ok(scaled(cert))
        }
        V0Spec::WarmStart { config } => {
            let inner = LoadedRoa::open(&resolve(dir, config))?;
            let cert = crate::commands::certify(&inner, &mut |_, _| {})?;
            Ok(scaled(cert))
        }
    }
}

/// [`initial_v`] without solving: a warm start resolves to the referenced
/// config's own initial `V`.
pub fn initial_v_unsolved(spec: &V0Spec, model: &SystemModel, dir: &Path) -> Result<Polynomial<f64>, CliError> {
    match spec {
        V0Spec::WarmStart { config } => {
            let path = resolve(dir, config);
            let (inner, inner_dir) = RoaRunConfig::load(&path)?;
            initial_v_unsolved(&inner.v0, model, &inner_dir)
        }
        other => initial_v(other, model, dir),
    }
}
