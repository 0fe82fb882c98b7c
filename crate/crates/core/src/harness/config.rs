//! Experiment configuration, read from TOML.
//!
//! ```toml
//! output_dir = "out"
//! snapshot_every = 1
//!
//! [instance]
//! source = "phantom"
//! sigma = 8.0
//! noise = { mode = "noiseless" }
//!
//! [instance.phantom]
//! pixels = 64
//! rails = [[24], [40]]
//! rail_height = 1.0
//! background = 0.1
//!
//! [theta0]
//! rule = "uniform_positive"
//!
//! [reference]
//! multiplier = 4
//! tol_divisor = 100.0
//!
//! [[solvers]]
//! name = "em"
//! algorithm = "em"
//!
//! [[solvers]]
//! name = "kpp"
//! algorithm = "kpp"
//! solver = { schedule = { kind = "geometric", beta0 = 1.0, ratio = 0.5 } }
//!
//! [[solvers]]
//! name = "tr"
//! algorithm = "trust_region"
//! mode = "beta_driven"
//! ```
//!
//! An instance can also come from a JSON file (`source = "file"`,
//! `path = "instance.json"`) holding `system` (row-major rows), `counts`,
//! and optionally `theta_true` and `floor`. Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, ProblemModel, RelaxationSchedule};
use crate::poisson::{
    gaussian_blur_matrix, synthesize_data, two_rail_phantom, NoiseMode, PhantomSpec, PoissonDeblurModel,
};
use crate::proximal::SolverConfig;
use crate::trust_region::{TrMode, TrustRegionState};

/// Pixel count above which snapshots are thinned to every 10th iteration.
pub const DENSE_SNAPSHOT_LIMIT: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub solvers: Vec<SolverSpec>,
    #[serde(default)]
    pub theta0: Theta0Rule,
    #[serde(default)]
    pub reference: ReferenceRule,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Iteration stride between stored `θ_k`; default depends on the pixel count.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    /// Domain floor; default `1e-10 · mean(θ⁰)`.
    #[serde(default)]
    pub floor: Option<f64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Phantom {
        #[serde(default)]
        phantom: PhantomSpec,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_noise")]
        noise: NoiseMode,
    },
    File {
        path: PathBuf,
    },
}

fn default_sigma() -> f64 {
    8.0
}

fn default_noise() -> NoiseMode {
    NoiseMode::Noiseless
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec::Phantom {
            phantom: PhantomSpec::default(),
            sigma: default_sigma(),
            noise: default_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Theta0Rule {
    /// Flat start; `value` defaults to the mean count level `Σy / ΣP`.
    UniformPositive {
        #[serde(default)]
        value: Option<f64>,
    },
    /// JSON array of pixel values.
    FromFile { path: PathBuf },
}

impl Default for Theta0Rule {
    fn default() -> Self {
        Theta0Rule::UniformPositive { value: None }
    }
}

/// How `θ*` is obtained for each solver: the same solver rerun with
/// `multiplier ×` the iteration limit and the gradient tolerance divided by
/// `tol_divisor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceRule {
    pub multiplier: usize,
    pub tol_divisor: f64,
}

impl Default for ReferenceRule {
    fn default() -> Self {
        Self {
            multiplier: 4,
            tol_divisor: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Em,
    Kpp,
    TrustRegion,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Em => "em",
            Algorithm::Kpp => "kpp",
            Algorithm::TrustRegion => "trust_region",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// File stem for this solver's outputs; defaults to the algorithm name.
    #[serde(default)]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    /// Trust-region control mode.
    #[serde(default = "default_mode")]
    pub mode: TrMode,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub trust_region: TrustRegionState,
}

fn default_mode() -> TrMode {
    TrMode::BetaDriven
}

impl SolverSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            name: None,
            algorithm,
            mode: default_mode(),
            solver: SolverConfig::default(),
            trust_region: TrustRegionState::default(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.algorithm.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        match self.algorithm {
            Algorithm::Em => {
                if self.solver.schedule != (RelaxationSchedule::Constant { beta0: 1.0 }) {
                    return Err(Error::Config(format!(
                        "solver '{}': em requires the constant schedule with beta0 = 1",
                        self.label()
                    )));
                }
            }
            Algorithm::Kpp => {
                if self.solver.schedule == RelaxationSchedule::TrustRegionDriven {
                    return Err(Error::Config(format!(
                        "solver '{}': kpp needs a constant or geometric schedule",
                        self.label()
                    )));
                }
            }
            Algorithm::TrustRegion => self.trust_region.validate()?,
        }
        Ok(())
    }
}

/// Instance file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub system: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl InstanceFile {
    pub fn system_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = self.system.len();
        let cols = self.system.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidModel("empty system matrix".into()));
        }
        if let Some(row) = self.system.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: row.len(),
            });
        }
        Ok(DMatrix::from_fn(rows, cols, |j, i| self.system[j][i]))
    }
}

/// A fully materialized instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: PoissonDeblurModel,
    pub theta0: ParameterVector,
    pub theta_true: Option<ParameterVector>,
}

impl Instance {
    pub fn to_file(&self) -> InstanceFile {
        let system = self.model.system();
        InstanceFile {
            system: system.row_iter().map(|r| r.iter().copied().collect()).collect(),
            counts: self.model.counts().iter().copied().collect(),
            theta_true: self.theta_true.as_ref().map(ParameterVector::to_vec),
            floor: Some(self.model.floor()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths inside it against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InstanceSpec::File { path } = &mut cfg.instance {
            resolve(path);
        }
        if let Theta0Rule::FromFile { path } = &mut cfg.theta0 {
            resolve(path);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::Config("at least one solver is required".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.solvers {
            s.validate()?;
            let name = s.label();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!(
                    "solver name '{name}' must be non-empty and use only [A-Za-z0-9_-]"
                )));
            }
            if !names.insert(name) {
                return Err(Error::Config(format!("duplicate solver name '{name}'")));
            }
        }
        if let InstanceSpec::Phantom { phantom, sigma, .. } = &self.instance {
            phantom.validate()?;
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
            }
        }
        if let Theta0Rule::UniformPositive { value: Some(v) } = self.theta0 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("theta0 value must be positive, got {v}")));
            }
        }
        if self.reference.multiplier == 0 || self.reference.tol_divisor.is_nan() || self.reference.tol_divisor < 1.0 {
            return Err(Error::Config(
                "reference needs multiplier >= 1 and tol_divisor >= 1".into(),
            ));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        if let Some(f) = self.floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("floor must be positive, got {f}")));
            }
        }
        Ok(())
    }

    /// Replaces the noise seed of a phantom instance with Poisson noise.
    pub fn override_seed(&mut self, seed: u64) {
        if let InstanceSpec::Phantom {
            noise: NoiseMode::Poisson { seed: s },
            ..
        } = &mut self.instance
        {
            *s = seed;
        }
    }

    pub fn snapshot_stride(&self, pixels: usize) -> usize {
        self.snapshot_every
            .unwrap_or(if pixels <= DENSE_SNAPSHOT_LIMIT { 1 } else { 10 })
    }

    pub fn build_instance(&self) -> Result<Instance> {
        let (system, counts, theta_true, file_floor) = match &self.instance {
            InstanceSpec::Phantom { phantom, sigma, noise } => {
                let system = gaussian_blur_matrix(phantom.pixels, *sigma)?;
                let truth = two_rail_phantom(phantom, self.floor)?;
                let counts = synthesize_data(&system, &truth, *noise)?;
                (system, counts, Some(truth), None)
            }
            InstanceSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read instance {}: {e}", path.display())))?;
                let file: InstanceFile = serde_json::from_str(&text)?;
                let truth = file
                    .theta_true
                    .as_deref()
                    .map(ParameterVector::from_slice)
                    .transpose()?;
                (file.system_matrix()?, DVector::from_vec(file.counts), truth, file.floor)
            }
        };
        // Placeholder floor until θ⁰ is known.
        let model = PoissonDeblurModel::new(system, counts, f64::MIN_POSITIVE)?;
        let theta0 = match &self.theta0 {
            Theta0Rule::UniformPositive { value } => {
                let level = value.unwrap_or_else(|| model.mean_count_level());
                if !(level > 0.0 && level.is_finite()) {
                    return Err(Error::Config(format!(
                        "uniform start level must be positive, got {level}"
                    )));
                }
                ParameterVector::uniform(model.dim(), level)?
            }
            Theta0Rule::FromFile { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read theta0 {}: {e}", path.display())))?;
                let values: Vec<f64> = serde_json::from_str(&text)?;
                ParameterVector::try_from(values)?
            }
        };
        if theta0.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: theta0.len(),
            });
        }
        let floor = self
            .floor
            .or(file_floor)
            .unwrap_or_else(|| PoissonDeblurModel::default_floor(&theta0));
        let model = model.with_floor(floor)?;
        Ok(Instance {
            model,
            theta0,
            theta_true,
        })
    }
}
