//! Experiment configuration.
//!
//! A config file is TOML with dotted sections. Every key is optional and has
//! the default shown below; unknown keys are rejected.
//!
//! ```toml
//! command = "spectrum"          # optional when given on the command line
//! seed = 0
//! out = "ouflow-out"
//!
//! [model]
//! family = "mixture"            # potential | solenoidal | mixture
//! alpha = 0.0                   # weight of the potential part (mixture only)
//! length_scale = 1.0
//! dim = 2
//! drift = 0.5
//!
//! [numerics]
//! dt = 0.0                      # 0 selects the stability guard value
//! horizon = 50.0
//! n = 10000                     # cloud size (pullback-dim)
//! replicas = 20
//! stride = 10                   # re-orthonormalization stride (spectrum)
//! scheme = "euler_maruyama"     # or exponential_euler
//! sampler = "exact"             # or spectral
//! spectral_modes = 32
//!
//! [validate]
//! points = 50
//! extent = 3.0                  # points drawn uniformly in [-extent, extent]^d, in length scales
//! tolerance = 1e-10
//!
//! [spectrum]
//! batches = 10
//! random_frame = false
//!
//! [radial]
//! grid = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0]
//! r0 = 1.0
//! paths = 200
//! path_horizon = 100.0
//!
//! [pullback]
//! horizons = [10.0, 20.0]
//! lo_quantile = 0.001
//! hi_quantile = 0.05
//! pointwise_centers = 2000
//!
//! [attractor]
//! radii = [5.0, 10.0, 20.0]
//! times = [0.0, 2.0, 5.0, 10.0, 20.0]
//! regularity_radii = [5.0, 10.0, 20.0, 50.0]
//! regularity_time = 1.0
//! shell_density = 8.0           # shell points per length scale of radius
//! t0 = 2.0
//! iterations = 3
//!
//! [squeeze]
//! r = 1.0
//! epsilons = [0.05, 0.1, 0.2]
//! times = [1.0, 2.0, 5.0]
//! shell_points = 64
//! ```
//!
//! Radii and lengths are in units of `model.length_scale`.

use std::path::PathBuf;

use clap::ValueEnum;
use ouflow::{CorrelationModel, SamplerKind, Scheme, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ValidateModel,
    Spectrum,
    Radial,
    PullbackDim,
    Attractor,
    Squeeze,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ValidateModel => "validate-model",
            Command::Spectrum => "spectrum",
            Command::Radial => "radial",
            Command::PullbackDim => "pullback-dim",
            Command::Attractor => "attractor",
            Command::Squeeze => "squeeze",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Potential,
    Solenoidal,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerName {
    Exact,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: FamilyName,
    pub alpha: f64,
    pub length_scale: f64,
    pub dim: usize,
    pub drift: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { family: FamilyName::Mixture, alpha: 0.0, length_scale: 1.0, dim: 2, drift: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub dt: f64,
    pub horizon: f64,
    pub n: usize,
    pub replicas: usize,
    pub stride: usize,
    pub scheme: Scheme,
    pub sampler: SamplerName,
    pub spectral_modes: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            dt: 0.0,
            horizon: 50.0,
            n: 10_000,
            replicas: 20,
            stride: 10,
            scheme: Scheme::EulerMaruyama,
            sampler: SamplerName::Exact,
            spectral_modes: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub points: usize,
    pub extent: f64,
    pub tolerance: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { points: 50, extent: 3.0, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub batches: usize,
    pub random_frame: bool,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection { batches: 10, random_frame: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadialSection {
    pub grid: Vec<f64>,
    pub r0: f64,
    pub paths: usize,
    pub path_horizon: f64,
}

impl Default for RadialSection {
    fn default() -> Self {
        RadialSection {
            grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            r0: 1.0,
            paths: 200,
            path_horizon: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PullbackSection {
    pub horizons: Vec<f64>,
    pub lo_quantile: f64,
    pub hi_quantile: f64,
    pub pointwise_centers: usize,
}

impl Default for PullbackSection {
    fn default() -> Self {
        PullbackSection {
            horizons: vec![10.0, 20.0],
            lo_quantile: 0.001,
            hi_quantile: 0.05,
            pointwise_centers: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractorSection {
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    pub regularity_radii: Vec<f64>,
    pub regularity_time: f64,
    pub shell_density: f64,
    pub t0: f64,
    pub iterations: usize,
}

impl Default for AttractorSection {
    fn default() -> Self {
        AttractorSection {
            radii: vec![5.0, 10.0, 20.0],
            times: vec![0.0, 2.0, 5.0, 10.0, 20.0],
            regularity_radii: vec![5.0, 10.0, 20.0, 50.0],
            regularity_time: 1.0,
            shell_density: 8.0,
            t0: 2.0,
            iterations: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqueezeSection {
    pub r: f64,
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub shell_points: usize,
}

impl Default for SqueezeSection {
    fn default() -> Self {
        SqueezeSection { r: 1.0, epsilons: vec![0.05, 0.1, 0.2], times: vec![1.0, 2.0, 5.0], shell_points: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelSection,
    pub numerics: NumericsSection,
    pub validate: ValidateSection,
    pub spectrum: SpectrumSection,
    pub radial: RadialSection,
    pub pullback: PullbackSection,
    pub attractor: AttractorSection,
    pub squeeze: SqueezeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            seed: 0,
            out: PathBuf::from("ouflow-out"),
            model: ModelSection::default(),
            numerics: NumericsSection::default(),
            validate: ValidateSection::default(),
            spectrum: SpectrumSection::default(),
            radial: RadialSection::default(),
            pullback: PullbackSection::default(),
            attractor: AttractorSection::default(),
            squeeze: SqueezeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Ok(toml::from_str(text)?)
    }

    pub fn build_model(&self) -> ouflow::Result<CorrelationModel> {
        let m = &self.model;
        match m.family {
            FamilyName::Potential => CorrelationModel::gaussian_potential(m.length_scale, m.dim, m.drift),
            FamilyName::Solenoidal => CorrelationModel::gaussian_solenoidal(m.length_scale, m.dim, m.drift),
            FamilyName::Mixture => CorrelationModel::gaussian_mixture(m.alpha, m.length_scale, m.dim, m.drift),
        }
    }

    pub fn sim_config(&self, model: CorrelationModel) -> SimConfig {
        let n = &self.numerics;
        let mut cfg = SimConfig::new(model).with_horizon(n.horizon).with_scheme(n.scheme).with_seed(self.seed, 0);
        if n.dt > 0.0 {
            cfg = cfg.with_dt(n.dt);
        }
        if n.sampler == SamplerName::Spectral {
            cfg = cfg.with_sampler(SamplerKind::Spectral { modes: n.spectral_modes });
        }
        cfg
    }
}
