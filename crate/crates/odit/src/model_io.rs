//! Trained-model persistence. JSON with an explicit schema version;
//! floats round-trip exactly (serde_json emits shortest-exact decimal).

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::detector::{DetectorConfig, NormalizationMap, ObservationVector, OditModel};
use crate::detector::LegacyGemConfig;
use crate::dynamic::{ApplicationProfile, BaselineRegressor};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Optional dynamic-environment extension carried next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicModel {
    pub applications: ApplicationProfile,
    pub regressor: BaselineRegressor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    d: usize,
    baseline_stat: f64,
    normalization: Vec<f64>,
    config: DetectorConfig,
    legacy: Option<LegacyGemConfig>,
    /// Row-major reference points, each of length `d`.
    reference_set: Vec<Vec<f64>>,
    dynamic: Option<DynamicModel>,
}

pub fn model_to_json(model: &OditModel, dynamic: Option<&DynamicModel>) -> Result<String> {
    let file = ModelFile {
        version: SCHEMA_VERSION,
        d: model.d,
        baseline_stat: model.baseline_stat,
        normalization: model.normalization.0.clone(),
        config: model.config.clone(),
        legacy: model.legacy.clone(),
        reference_set: model
            .reference_set
            .iter()
            .map(|o| o.values.clone())
            .collect(),
        dynamic: dynamic.cloned(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(json: &str) -> Result<(OditModel, Option<DynamicModel>)> {
    let file: ModelFile = serde_json::from_str(json)?;
    if file.version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            got: file.version,
            expected: SCHEMA_VERSION,
        });
    }
    for (i, row) in file.reference_set.iter().enumerate() {
        if row.len() != file.d {
            return Err(Error::DimensionMismatch {
                expected: file.d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite value in reference point {i}"
            )));
        }
    }
    if file.normalization.len() != file.d {
        return Err(Error::DimensionMismatch {
            expected: file.d,
            got: file.normalization.len(),
        });
    }
    file.config.validate()?;
    if let Some(gem) = &file.legacy {
        gem.validate()?;
    }
    let model = OditModel {
        reference_set: file
            .reference_set
            .into_iter()
            .enumerate()
            .map(|(i, values)| ObservationVector {
                values,
                time_index: i as u64,
            })
            .collect(),
        baseline_stat: file.baseline_stat,
        normalization: NormalizationMap(file.normalization),
        config: file.config,
        legacy: file.legacy,
        d: file.d,
    };
    Ok((model, file.dynamic))
}

pub fn save_model(
    model: &OditModel,
    dynamic: Option<&DynamicModel>,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, model_to_json(model, dynamic)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(OditModel, Option<DynamicModel>)> {
    model_from_json(&fs::read_to_string(path)?)
}
