//! Campaign configuration: file (TOML or JSON) overlaid with command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wgfi::{ClampMode, Engine, Exposure, Granularity, InjectionConfig, Scope};

use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Named exposure conventions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExposureName {
    /// MUL products at twice the model width, ADDs at the model width, aligned to the
    /// requantization point.
    #[default]
    Default,
    /// Model width for every op, at the register LSB.
    Uniform,
}

impl ExposureName {
    pub fn exposure(self) -> Exposure {
        match self {
            ExposureName::Default => Exposure::default(),
            ExposureName::Uniform => Exposure::uniform(),
        }
    }
}

/// Every campaign setting. Absent fields take command defaults; the fully resolved
/// form is recorded in result metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Manifest path, or `builtin:<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Dataset manifest path. Without one, `samples` random inputs are generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Engine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<ExposureName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit_filter_transform: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    /// Range profile (from `profile-ranges`) enabling constrained activations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_profile: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_mode: Option<ClampMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mul_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal_do_while: Option<bool>,
    /// Plan to evaluate (`eval-tmr`) or to write (`plan-tmr`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
    /// Where `profile-ranges` writes the profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_out: Option<PathBuf>,
    /// Directory receiving one fault trace per BER point, used by `replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

pub const DEFAULT_SAMPLES: usize = 32;
pub const DEFAULT_TRIALS: u32 = 100;

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl CampaignConfig {
    /// Reads a TOML file (by `.toml` extension) or JSON.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &CampaignConfig) -> Self {
        overlay_fields!(self, top;
            model, dataset, samples, dataset_seed, engine, exposure, emit_filter_transform,
            granularity, ber, seed, trials, scope, clamp_profile, clamp_mode, segment_size,
            target_acc, mul_weight, add_weight, literal_do_while, plan, profile_out,
            trace_dir, format, output);
        self
    }

    /// Fill defaults that do not depend on the model.
    pub fn with_defaults(mut self) -> Self {
        if self.dataset.is_none() {
            self.samples.get_or_insert(DEFAULT_SAMPLES);
            self.dataset_seed.get_or_insert(0);
        }
        self.exposure.get_or_insert_default();
        self.emit_filter_transform.get_or_insert(false);
        self.granularity.get_or_insert_default();
        self.seed.get_or_insert(0);
        self.trials.get_or_insert(DEFAULT_TRIALS);
        self.scope.get_or_insert_with(|| Scope::all().to_string());
        if self.clamp_profile.is_some() {
            self.clamp_mode.get_or_insert_default();
        }
        self.format.get_or_insert_default();
        self
    }

    /// Schema checks that need no computation.
    pub fn validate(&self) -> CliResult<()> {
        if self.model.is_none() {
            return Err(CliError::config("no model given (use --model or a config file)"));
        }
        for path in [&self.dataset, &self.clamp_profile].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::config(format!("{} does not exist", path.display())));
            }
        }
        if let Some(m) = self.model.as_deref().filter(|m| !m.starts_with(BUILTIN_PREFIX)) {
            if !Path::new(m).exists() {
                return Err(CliError::config(format!("{m} does not exist")));
            }
        }
        if let Some(bers) = &self.ber {
            if bers.is_empty() {
                return Err(CliError::config("ber list is empty"));
            }
            if let Some(b) = bers.iter().find(|b| !(0.0..=1.0).contains(*b)) {
                return Err(CliError::config(format!("ber {b} is outside [0, 1]")));
            }
        }
        if self.trials == Some(0) {
            return Err(CliError::config("trials must be at least 1"));
        }
        if self.samples == Some(0) {
            return Err(CliError::config("samples must be at least 1"));
        }
        if let Some(s) = &self.scope {
            s.parse::<Scope>()?;
        }
        Ok(())
    }

    pub fn bers(&self) -> CliResult<&[f64]> {
        self.ber.as_deref().ok_or_else(|| CliError::config("no ber given"))
    }

    /// Injection settings for one BER point.
    pub fn injection(&self, ber: f64) -> CliResult<InjectionConfig> {
        let scope: Scope = self.scope.as_deref().unwrap_or("all").parse()?;
        let inj = InjectionConfig {
            granularity: self.granularity.unwrap_or_default(),
            ber,
            seed: self.seed.unwrap_or(0),
            scope,
            trials: self.trials.unwrap_or(DEFAULT_TRIALS),
        };
        inj.validate()?;
        Ok(inj)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub const BUILTIN_PREFIX: &str = "builtin:";

/// Subcommands that run campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sweep,
    LayerVuln,
    OptypeVuln,
    PlanTmr,
    EvalTmr,
    ProfileRanges,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::LayerVuln => "layer-vuln",
            Command::OptypeVuln => "optype-vuln",
            Command::PlanTmr => "plan-tmr",
            Command::EvalTmr => "eval-tmr",
            Command::ProfileRanges => "profile-ranges",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| CliError::config(format!("unknown command '{s}'")))
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
