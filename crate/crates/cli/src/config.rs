//! Run configuration, read from a sectioned TOML file.

use std::path::{Path, PathBuf};

use fbpt_core::{FeedbackConfig, IntegratorConfig, StabilityProbe, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("fbpt-out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Relative band around the target `nL` used for settling times.
    #[serde(default = "default_band")]
    pub settling_band: f64,
    #[serde(default)]
    pub probe: StabilityProbe,
}

fn default_band() -> f64 {
    0.01
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            settling_band: default_band(),
            probe: StabilityProbe::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    /// Probe every branch for stability, using `K = F / feedback.tau`.
    #[serde(default = "yes")]
    pub classify: bool,
    #[serde(default)]
    pub with_approx: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_ppp")]
    pub points_per_period: usize,
    /// Recorded samples between written frames.
    #[serde(default = "default_frame_stride")]
    pub frame_stride: usize,
}

fn default_periods() -> usize {
    3
}

fn default_ppp() -> usize {
    256
}

fn default_frame_stride() -> usize {
    1
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            periods: default_periods(),
            points_per_period: default_ppp(),
            frame_stride: default_frame_stride(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StudyVariable {
    Tau,
    Kd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub variable: StudyVariable,
    pub values: Vec<f64>,
    /// Gains paired with each τ value. Without it the configured gain is kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Lattice period.
    pub d: f64,
    pub lambda_probe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        if let Some(fb) = &self.feedback {
            fb.validate()?;
        }
        if let Some(ic) = &self.integrator {
            ic.validate()?;
        }
        if !(self.analysis.settling_band > 0.0 && self.analysis.settling_band < 1.0) {
            return Err(CliError::Config("analysis.settling_band must lie in (0, 1)".into()));
        }
        let d = &self.density;
        if d.periods == 0 || d.points_per_period == 0 || d.frame_stride == 0 {
            return Err(CliError::Config(
                "density.periods, density.points_per_period and density.frame_stride must be >= 1".into(),
            ));
        }
        if let Some(s) = &self.study {
            if s.values.is_empty() {
                return Err(CliError::Config("study.values must not be empty".into()));
            }
            if let Some(g) = &s.gains {
                if g.len() != s.values.len() {
                    return Err(CliError::Config("study.gains must have one entry per value".into()));
                }
            }
        }
        Ok(())
    }

    pub fn feedback(&self) -> Result<FeedbackConfig, CliError> {
        self.feedback
            .ok_or_else(|| CliError::Config("missing section [feedback]".into()))
    }

    pub fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        self.integrator
            .ok_or_else(|| CliError::Config("missing section [integrator]".into()))
    }
}
