//! Run configuration in TOML with three sections:
//!
//! ```toml
//! [model]
//! lags = 5
//!
//! [prior]
//! snr = 5.0
//! diagonalSigmaX = true
//!
//! [sampler]
//! components = 25
//! selectionMode = "global"
//! gammaInit = "allOff"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagselect::SelectionMode;
use crate::priors::{pi_gamma_defaults, PriorOptions};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ModelSection {
    /// Lag horizon `L`.
    pub lags: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { lags: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub prior: PriorOptions,
    pub sampler: SamplerConfig,
}

impl RunConfig {
    /// Check every section and fill the inclusion probabilities with their
    /// defaults, so the echoed configuration is complete.
    pub fn resolve(mut self) -> Result<Self> {
        let l = self.model.lags;
        if l == 0 {
            return Err(Error::Config("model.lags must be at least 1".into()));
        }
        self.prior
            .validate()
            .map_err(|e| Error::Config(format!("prior: {e}")))?;
        self.sampler.validate(l)?;
        if self.sampler.selection_mode != SelectionMode::None && self.sampler.pi_gamma.is_none() {
            self.sampler.pi_gamma = Some(pi_gamma_defaults(l));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }
}

/// Parse and resolve configuration text. Syntax and key errors carry the
/// 1-based line they occur on.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        msg: e.message().trim().to_string(),
    })?;
    cfg.resolve()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
