use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset, LearnError, MlpConfig, MlpModel, Standardizer, SvmConfig, SvmModel};
use crate::dsp::SensorMask;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Svm { config: SvmConfig, model: SvmModel },
    Mlp { config: MlpConfig, model: MlpModel },
}

/// A trained classifier together with everything needed to apply it to raw
/// feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub mask: SensorMask,
    pub standardizer: Standardizer,
    /// Hash of the training split the model was fitted on.
    pub dataset_hash: String,
    pub params: ModelParams,
}

impl ModelDoc {
    /// Fit standardization on `train` (already masked), then the classifier.
    pub fn train_svm(train: &Dataset, cfg: &SvmConfig) -> Result<Self, LearnError> {
        let std = Standardizer::fit(&train.x)?;
        let model = SvmModel::train(&train.map_x(|r| std.apply(r)), cfg)?;
        Ok(Self::wrap(train, std, ModelParams::Svm { config: cfg.clone(), model }))
    }

    pub fn train_mlp(train: &Dataset, cfg: &MlpConfig) -> Result<Self, LearnError> {
        let std = Standardizer::fit(&train.x)?;
        let model = MlpModel::train(&train.map_x(|r| std.apply(r)), cfg)?;
        Ok(Self::wrap(train, std, ModelParams::Mlp { config: cfg.clone(), model }))
    }

    fn wrap(train: &Dataset, standardizer: Standardizer, params: ModelParams) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            class_names: train.class_names.clone(),
            mask: train.mask,
            standardizer,
            dataset_hash: train.hash(),
            params,
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match &self.params {
            ModelParams::Svm { model, .. } => model,
            ModelParams::Mlp { model, .. } => model,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.params {
            ModelParams::Svm { .. } => "svm",
            ModelParams::Mlp { .. } => "mlp",
        }
    }

    /// Probabilities for full-width (27-column) feature rows.
    pub fn predict_proba_full(&self, full: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LearnError> {
        let rows: Vec<Vec<f64>> = full.iter().map(|r| self.mask.select(r)).collect();
        self.predict_proba(&rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LearnError> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let probe: Probe = serde_json::from_str(s).map_err(|e| LearnError::Invalid(e.to_string()))?;
        if probe.format_version != MODEL_FORMAT_VERSION {
            return Err(LearnError::Version(probe.format_version));
        }
        let doc: Self = serde_json::from_str(s).map_err(|e| LearnError::Invalid(e.to_string()))?;
        if doc.standardizer.dim() != doc.mask.dim() || doc.inner().input_dim() != doc.mask.dim() {
            return Err(LearnError::Invalid("dimension does not match sensor mask".into()));
        }
        Ok(doc)
    }
}

impl Classifier for ModelDoc {
    fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        self.inner().predict_proba_row(&self.standardizer.apply(x))
    }
}
