//! JSON persistence for fitted models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, LinearModel, LinearSvm, MlpParams, NaiveBayes, Regressor, TraitLinearModels};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Linear(LinearModel),
    TraitLinear(TraitLinearModels),
    Mlp(MlpParams),
    Svm(LinearSvm),
    NaiveBayes(NaiveBayes),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Linear(_) => "linear",
            SavedModel::TraitLinear(_) => "trait_linear",
            SavedModel::Mlp(_) => "mlp",
            SavedModel::Svm(_) => "svm",
            SavedModel::NaiveBayes(_) => "naive_bayes",
        }
    }

    /// Input width the model expects.
    pub fn input_dim(&self) -> usize {
        match self {
            SavedModel::Linear(m) => m.dim,
            SavedModel::TraitLinear(m) => m.models.first().map_or(0, |m| m.dim),
            SavedModel::Mlp(m) => m.input_dim,
            SavedModel::Svm(m) => m.dim(),
            SavedModel::NaiveBayes(m) => m.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SavedModel::Linear(m) => m.validate(),
            SavedModel::TraitLinear(m) => {
                if m.models.len() != 5 {
                    return Err(invalid(format!(
                        "trait model needs 5 regressions, found {}",
                        m.models.len()
                    )));
                }
                let dim = m.models[0].dim;
                for model in &m.models {
                    model.validate()?;
                    if model.dim != dim {
                        return Err(invalid("trait regressions disagree on input width"));
                    }
                }
                Ok(())
            }
            SavedModel::Mlp(m) => m.validate(),
            SavedModel::Svm(m) => m.validate(),
            SavedModel::NaiveBayes(m) => m.validate(),
        }
    }

    pub fn is_regressor(&self) -> bool {
        matches!(
            self,
            SavedModel::Linear(_) | SavedModel::TraitLinear(_) | SavedModel::Mlp(_)
        )
    }

    pub fn as_regressor(&self) -> Option<&dyn Regressor> {
        match self {
            SavedModel::Linear(m) => Some(m),
            SavedModel::TraitLinear(m) => Some(m),
            SavedModel::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_classifier(&self) -> Option<&dyn Classifier> {
        match self {
            SavedModel::Svm(m) => Some(m),
            SavedModel::NaiveBayes(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and shape-checks a saved model.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: SavedModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
