use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::NormalizationMode;
use crate::error::{Error, Result};
use crate::policies::PolicySpec;

/// Run configuration loaded from `--config <json>`. Every field is
/// optional; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub prompt_embeddings: Option<PathBuf>,
    pub response_embeddings: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub human_distributions: Option<PathBuf>,
    pub option_scores: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub n_users: Option<usize>,
    pub n_historical: Option<usize>,
    pub history_len: Option<usize>,
    pub k: Option<usize>,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    pub reference_model_id: Option<String>,
    pub normalization: Option<NormalizationMode>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::schema(path, 1, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        let paths = [
            &self.data_dir,
            &self.prompt_embeddings,
            &self.response_embeddings,
            &self.splits,
            &self.features,
            &self.questions,
            &self.human_distributions,
            &self.option_scores,
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by config"),
                ));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}
