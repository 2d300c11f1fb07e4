//! JSON model configuration.
//!
//! ```json
//! { "mu1": 1.0, "mu2": -1.0, "sigma": 1.0, "T": 1.0, "g0": 0.0, "rho": 1.0 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{DisorderModel, UniformPrior};

/// Raw config file contents; validation happens in [`ModelConfig::build`]
/// so that every error names the offending key.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub g0: f64,
    pub rho: f64,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<(DisorderModel, UniformPrior)> {
        let model = DisorderModel::new(self.mu1, self.mu2, self.sigma, self.horizon)?;
        let prior = UniformPrior::new(self.g0, self.rho, self.horizon)?;
        Ok((model, prior))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE: &str =
        r#"{ "mu1": 1.0, "mu2": -1.0, "sigma": 1.0, "T": 1.0, "g0": 0.0, "rho": 1.0 }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ModelConfig::from_json(FIGURE).unwrap();
        let (model, prior) = cfg.build().unwrap();
        assert_eq!(model.snr(), 2.0);
        assert_eq!(prior.rho(), 1.0);
    }

    #[test]
    fn missing_key_is_named() {
        let err = ModelConfig::from_json(r#"{ "mu2": -1.0, "sigma": 1.0, "T": 1.0, "g0": 0.0, "rho": 1.0 }"#)
            .unwrap_err();
        assert!(err.to_string().contains("mu1"), "got: {err}");
    }

    #[test]
    fn invalid_value_is_named() {
        let cfg =
            ModelConfig::from_json(r#"{ "mu1": -1.0, "mu2": -1.0, "sigma": 1.0, "T": 1.0, "g0": 0.0, "rho": 1.0 }"#)
                .unwrap();
        let err = cfg.build().unwrap_err();
        assert!(err.to_string().contains("mu1"), "got: {err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ModelConfig::from_json(
            r#"{ "mu1": 1.0, "mu2": -1.0, "sigma": 1.0, "T": 1.0, "g0": 0.0, "rho": 1.0, "mu3": 4.0 }"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("mu3"), "got: {err}");
    }
}
