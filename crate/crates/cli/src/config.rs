//! Experiment configuration (TOML).
//!
//! Every stage section is optional and falls back to the defaults below. Each
//! stage draws its seed from the global seed (see [`derive_seed`]); the
//! `seed` field inside a stage only acts as a salt, so changing it gives an
//! independent stream without touching other stages.

use std::fs;
use std::path::{Path, PathBuf};

use homog_core::coefficients::ValidationOptions;
use homog_core::corrector::MixingEstimate;
use homog_core::feynman_kac::GrowthBound;
use homog_core::{BuiltinOptions, DomainSpec, Region, ScalarForm, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Run size. `smoke` divides path counts by 16 (at least 16 remain) and halves
/// corrector grids (at least 4 nodes per axis); `full` multiplies path counts
/// by 4 and doubles corrector grids. Histogram bins, horizons and steps are
/// never scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Smoke,
    #[default]
    Desk,
    Full,
}

impl Budget {
    pub fn paths(&self, n: usize) -> usize {
        match self {
            Budget::Smoke => (n / 16).max(16).min(n),
            Budget::Desk => n,
            Budget::Full => n * 4,
        }
    }

    pub fn grid(&self, n: usize) -> usize {
        match self {
            Budget::Smoke => (n / 2).max(4).min(n),
            Budget::Desk => n,
            Budget::Full => n * 2,
        }
    }
}

/// Stage seed: the first 8 bytes (little-endian) of
/// `SHA-256("homog/v1" || global_le || stage || salt_le)`.
pub fn derive_seed(global: u64, stage: &str, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"homog/v1");
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(salt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub budget: Option<Budget>,
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub validate: ValidateStage,
    #[serde(default)]
    pub simulate: SimulateStage,
    #[serde(default)]
    pub hitting: HittingStage,
    #[serde(default)]
    pub mixing: MixingStage,
    #[serde(default)]
    pub invariant: InvariantStage,
    #[serde(default)]
    pub corrector: CorrectorStage,
    #[serde(default)]
    pub effective: EffectiveStage,
    #[serde(default)]
    pub clt: CltStage,
    #[serde(default)]
    pub elliptic: Option<EllipticStage>,
    #[serde(default)]
    pub parabolic: Option<ParabolicStage>,
    #[serde(default)]
    pub study: Option<StudyStage>,
    /// Directory that relative file paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml(&text, &base).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Either a catalog entry or coefficient fields read from grid files.
///
/// * `builtin = "label"` with optional `[coefficients.options]` overrides.
/// * `sigma = "file"` (n*m components, `noise_dim` = m, default n) with either
///   `b = "file"` (n components) or `b_bar = "file"` plus `divergence_step`,
///   which builds `b = 1/2 div a + b_bar`. `options` then supplies `c`, `d`, `e`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSpec {
    pub builtin: Option<String>,
    pub options: BuiltinOptions,
    pub label: Option<String>,
    pub sigma: Option<PathBuf>,
    pub noise_dim: Option<usize>,
    pub b: Option<PathBuf>,
    pub b_bar: Option<PathBuf>,
    pub divergence_step: Option<f64>,
}

/// Initial points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Starts {
    Points { points: Vec<Vec<f64>> },
    /// `per_axis^n` cell-centred grid points.
    Grid { per_axis: usize },
    /// Uniform points drawn from the stage seed.
    Uniform { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateStage {
    /// Sampling grid spacing; defaults to the smallest period over 64.
    pub grid_step: Option<f64>,
    /// Region declared elliptic.
    pub region: Region,
    pub options: ValidationOptions,
}

impl Default for ValidateStage {
    fn default() -> Self {
        Self {
            grid_step: None,
            region: Region::WholeTorus,
            options: ValidationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// `Y^eps`, the process in the time units of the homogenization scaling.
    #[default]
    Scaled,
    /// `X^eps`, in original time.
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateStage {
    pub sim: SimConfig,
    pub starts: Starts,
    pub time: TimeScale,
}

impl Default for SimulateStage {
    fn default() -> Self {
        Self {
            sim: SimConfig {
                n_paths: 16,
                horizon: 1.0,
                step: 1e-3,
                store_stride: 10,
                ..SimConfig::default()
            },
            starts: Starts::Grid { per_axis: 1 },
            time: TimeScale::Scaled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingStage {
    /// Target region; defaults to the validation region.
    pub region: Option<Region>,
    pub starts: Starts,
    pub sim: SimConfig,
}

impl Default for HittingStage {
    fn default() -> Self {
        Self {
            region: None,
            starts: Starts::Grid { per_axis: 8 },
            sim: SimConfig {
                n_paths: 100,
                horizon: 50.0,
                step: 1e-2,
                ..SimConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingStage {
    /// Fourier dictionary order (wavevectors with `|k_i| <= order`).
    pub order: u32,
    /// A single test function instead of the dictionary.
    pub function: Option<ScalarForm>,
    /// Sup norm of `function` when it cannot be inferred.
    pub sup: Option<f64>,
    /// The two starting points; default the origin and the cell centre.
    pub starts: Option<[Vec<f64>; 2]>,
    pub sim: SimConfig,
}

impl Default for MixingStage {
    fn default() -> Self {
        Self {
            order: 1,
            function: None,
            sup: None,
            starts: None,
            sim: SimConfig {
                n_paths: 2000,
                horizon: 10.0,
                step: 1e-2,
                store_stride: 10,
                ..SimConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantStage {
    /// Bins per axis; default 32.
    pub bins: Option<Vec<usize>>,
    pub starts: Starts,
    /// Default `10 / gamma` from the mixing stage.
    pub burn_in: Option<f64>,
    pub sim: SimConfig,
}

impl Default for InvariantStage {
    fn default() -> Self {
        Self {
            bins: None,
            starts: Starts::Uniform { n: 64 },
            burn_in: None,
            sim: SimConfig {
                n_paths: 64,
                horizon: 100.0,
                step: 1e-2,
                store_stride: 10,
                ..SimConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorStage {
    /// Nodes per axis; default 16.
    pub shape: Option<Vec<usize>>,
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
    pub noise_refinement: u32,
    pub tail_tolerance: f64,
    pub max_horizon: f64,
    pub batches: usize,
    pub stderr_tolerance: Option<f64>,
    /// Finite-difference stencil step, rounded up to a multiple of the grid
    /// spacing; default the grid spacing.
    pub stencil_step: Option<f64>,
    /// `pi(b)` to subtract; default the invariant-stage estimate.
    pub centering: Option<Vec<f64>>,
    /// Mixing constants; default the mixing-stage fit.
    pub mixing: Option<MixingEstimate>,
    /// Also solve the scalar corrector for `d` (default: when `d` is nonzero).
    pub potential: Option<bool>,
}

impl Default for CorrectorStage {
    fn default() -> Self {
        Self {
            shape: None,
            n_paths: 64,
            step: 1e-2,
            seed: 0,
            noise_refinement: 0,
            tail_tolerance: 1e-3,
            max_horizon: 50.0,
            batches: 8,
            stderr_tolerance: None,
            stencil_step: None,
            centering: None,
            mixing: None,
            potential: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Corrector,
    DbetaForm,
    LongTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectiveStage {
    /// Routes to evaluate; the first one feeds downstream stages.
    pub routes: Vec<Route>,
    /// Also compute the parabolic drift and potential (needs `d`'s corrector).
    pub parabolic: bool,
    /// Sigma level for comparing routes.
    pub cross_check_sigmas: f64,
    pub long_time: LongTimeStage,
}

impl Default for EffectiveStage {
    fn default() -> Self {
        Self {
            routes: vec![Route::Corrector],
            parabolic: false,
            cross_check_sigmas: 3.0,
            long_time: LongTimeStage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongTimeStage {
    pub t_grid: Vec<f64>,
    /// Starting points drawn from the estimated invariant measure.
    pub n_starts: usize,
    pub r2_threshold: f64,
    pub sim: SimConfig,
}

impl Default for LongTimeStage {
    fn default() -> Self {
        Self {
            t_grid: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            n_starts: 1000,
            r2_threshold: 0.99,
            sim: SimConfig {
                n_paths: 10000,
                horizon: 5.0,
                step: 1e-3,
                ..SimConfig::default()
            },
        }
    }
}

/// Where the effective model comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// The effective stage of this run.
    #[default]
    Pipeline,
    /// Given coefficients; `pi_b` defaults to zero.
    Analytic {
        cov_a: Vec<f64>,
        drift_b: Vec<f64>,
        #[serde(default)]
        pi_b: Option<Vec<f64>>,
        #[serde(default)]
        parabolic_drift: Option<Vec<f64>>,
        #[serde(default)]
        potential: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltStage {
    /// Descending.
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub starts: Starts,
    pub model: ModelSource,
    /// `step` is in original time.
    pub sim: SimConfig,
}

impl Default for CltStage {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1],
            times: vec![0.25, 0.5, 0.75, 1.0],
            starts: Starts::Grid { per_axis: 1 },
            model: ModelSource::Pipeline,
            sim: SimConfig {
                n_paths: 10000,
                step: 1e-4,
                ..SimConfig::default()
            },
        }
    }
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_f() -> ScalarForm {
    ScalarForm::zero()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticStage {
    pub domain: DomainSpec,
    #[serde(default = "default_f")]
    pub f: ScalarForm,
    pub g: ScalarForm,
    pub points: Vec<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Solve the homogenized problem instead.
    #[serde(default)]
    pub homogenized: bool,
    #[serde(default)]
    pub model: ModelSource,
    /// `pi(e)` for the homogenized problem; default the invariant-stage
    /// average (required with an analytic model).
    #[serde(default)]
    pub pi_e: Option<f64>,
    /// Step-halving extrapolation.
    #[serde(default)]
    pub extrapolate: bool,
    /// `step` is in original time; `horizon` is unused.
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicStage {
    #[serde(default = "default_f")]
    pub f: ScalarForm,
    pub g: ScalarForm,
    #[serde(default)]
    pub growth: Option<GrowthBound>,
    pub points: Vec<Vec<f64>>,
    pub t: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub homogenized: bool,
    #[serde(default)]
    pub model: ModelSource,
    /// Accumulate `d` through its corrector (from the corrector stage).
    #[serde(default)]
    pub use_delta: bool,
    /// Run a step ladder with this many levels instead of a single solve.
    #[serde(default)]
    pub ladder_levels: Option<usize>,
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Elliptic,
    Parabolic,
}

/// Compares `u^eps` with `u^0`; problem data come from the `elliptic` or
/// `parabolic` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyStage {
    pub problem: StudyKind,
    pub epsilons: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub extrapolate: bool,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub sim: SimConfig,
}

/// Catalog for built-in example configurations.
pub fn builtin_config(name: &str) -> Option<&'static str> {
    match name {
        "example2d" => Some(include_str!("../configs/example2d.toml")),
        "sine_1d" => Some(include_str!("../configs/sine_1d.toml")),
        "constant_identity" => Some(include_str!("../configs/constant_identity.toml")),
        _ => None,
    }
}
