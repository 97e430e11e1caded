//! Run configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use g2flow::flows::{FlowKind, FlowSpec, SpectralFilter, Stepper};
use g2flow::lattice::{Grid, Scheme};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub grid: GridConfig,
    pub initial: InitialCondition,
    pub flow: FlowConfig,
    /// Final time.
    pub t_end: f64,
    /// Steps between CSV rows.
    pub sample_every: u64,
    /// Steps between checkpoints; a multiple of `sample_every`.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub output: OutputConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub extents: [usize; 7],
    pub spacings: [f64; 7],
    pub scheme: SchemeName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Spectral,
    Central,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    UniformStandard,
    ClosedPerturbation {
        epsilon: f64,
        #[serde(default = "default_shells")]
        shells: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Band-limited random `k`-form, for the heat flows.
    RandomField {
        degree: usize,
        #[serde(default = "default_shells")]
        shells: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        mean: f64,
    },
    FromSnapshot {
        path: PathBuf,
    },
}

fn default_shells() -> usize {
    3
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: KindName,
    #[serde(default = "default_stepper")]
    pub stepper: StepperName,
    pub dt: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// First nonzero eigenvalue for `heat_modified`; computed from the grid when absent.
    #[serde(default)]
    pub lambda1: Option<f64>,
    /// Constant of the modified coflow.
    #[serde(default)]
    pub c: Option<f64>,
    /// Torsion weights of the energy for `dirichlet_gradient`.
    #[serde(default)]
    pub nu: Option<[f64; 4]>,
    /// Exponential filter applied after every step (spectral grids only).
    #[serde(default)]
    pub filter: Option<FilterConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_filter_order")]
    pub order: u32,
    #[serde(default = "default_filter_strength")]
    pub strength: f64,
}

fn default_filter_order() -> u32 {
    SpectralFilter::default().order
}

fn default_filter_strength() -> f64 {
    SpectralFilter::default().strength
}

fn default_stepper() -> StepperName {
    StepperName::Rk4
}

fn default_safety() -> f64 {
    0.9
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Heat,
    HeatModified,
    Laplacian,
    LaplacianDeturck,
    Coflow,
    ModifiedCoflow,
    DirichletGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepperName {
    Rk4,
    Euler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("g2flow-out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Schema checks that serde cannot express.
    pub fn check(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(config_err(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.sample_every == 0 {
            return Err(config_err("sample_every must be at least 1"));
        }
        if let Some(c) = self.checkpoint_every {
            if c == 0 || c % self.sample_every != 0 {
                return Err(config_err(
                    "checkpoint_every must be a positive multiple of sample_every",
                ));
            }
        }
        let f = &self.flow;
        let needs = |present: bool, wanted: bool, name: &str| -> Result<(), CliError> {
            match (present, wanted) {
                (true, false) => Err(config_err(format!(
                    "flow parameter `{name}` does not apply to {:?}",
                    f.kind
                ))),
                (false, true) => Err(config_err(format!("flow kind {:?} requires `{name}`", f.kind))),
                _ => Ok(()),
            }
        };
        if f.lambda1.is_some() && f.kind != KindName::HeatModified {
            return Err(config_err(format!(
                "flow parameter `lambda1` does not apply to {:?}",
                f.kind
            )));
        }
        needs(f.c.is_some(), f.kind == KindName::ModifiedCoflow, "c")?;
        needs(f.nu.is_some(), f.kind == KindName::DirichletGradient, "nu")?;
        let structure = !matches!(f.kind, KindName::Heat | KindName::HeatModified);
        match (&self.initial, structure) {
            (InitialCondition::RandomField { .. }, true) => {
                return Err(config_err("G2 flows start from a 3-form, not random_field"));
            }
            (InitialCondition::UniformStandard | InitialCondition::ClosedPerturbation { .. }, false) => {
                return Err(config_err("heat flows start from random_field or from_snapshot"));
            }
            (InitialCondition::RandomField { degree, .. }, false) if *degree > 7 => {
                return Err(config_err(format!("form degree {degree} exceeds 7")));
            }
            (InitialCondition::RandomField { degree, mean, .. }, false)
                if f.kind == KindName::HeatModified && (*degree != 0 || *mean != 0.0) =>
            {
                return Err(config_err(
                    "heat_modified evolves mean-free functions (degree 0, mean 0)",
                ));
            }
            (InitialCondition::FromSnapshot { path }, _) if !path.exists() => {
                return Err(config_err(format!("snapshot {} does not exist", path.display())));
            }
            _ => {}
        }
        self.grid()?;
        self.flow_spec_unchecked()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let scheme = match self.grid.scheme {
            SchemeName::Spectral => Scheme::Spectral,
            SchemeName::Central => Scheme::Central,
        };
        Grid::new(self.grid.extents, self.grid.spacings, scheme).map_err(|e| config_err(e.to_string()))
    }

    fn flow_spec_unchecked(&self) -> Result<FlowSpec, CliError> {
        let f = &self.flow;
        let kind = match f.kind {
            KindName::Heat => FlowKind::Heat,
            KindName::HeatModified => match f.lambda1 {
                Some(lambda1) => FlowKind::HeatModified { lambda1 },
                None => FlowKind::heat_modified_for(&self.grid()?).map_err(|e| config_err(e.to_string()))?,
            },
            KindName::Laplacian => FlowKind::Laplacian,
            KindName::LaplacianDeturck => FlowKind::LaplacianDeturck,
            KindName::Coflow => FlowKind::Coflow,
            KindName::ModifiedCoflow => FlowKind::ModifiedCoflow {
                c: f.c.expect("checked"),
            },
            KindName::DirichletGradient => FlowKind::DirichletGradient {
                nu: f.nu.expect("checked"),
            },
        };
        let stepper = match f.stepper {
            StepperName::Rk4 => Stepper::Rk4,
            StepperName::Euler => Stepper::Euler,
        };
        let spec = FlowSpec::new(kind, stepper, f.dt, f.safety).map_err(|e| config_err(e.to_string()))?;
        match f.filter {
            Some(_) if self.grid.scheme != SchemeName::Spectral => {
                Err(config_err("the spectral filter needs the spectral scheme"))
            }
            Some(fc) => spec
                .with_filter(SpectralFilter {
                    order: fc.order,
                    strength: fc.strength,
                })
                .map_err(|e| config_err(e.to_string())),
            None => Ok(spec),
        }
    }

    pub fn flow_spec(&self) -> Result<FlowSpec, CliError> {
        self.flow_spec_unchecked()
    }
}
