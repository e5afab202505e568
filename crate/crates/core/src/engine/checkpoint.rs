use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::GnnModel;
use super::{EngineError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model: GnnModel,
}

pub fn save_checkpoint(model: &GnnModel, path: &Path) -> Result<()> {
    let env = Envelope { format_version: CHECKPOINT_VERSION, model: model.clone() };
    let text = serde_json::to_string(&env).map_err(|e| EngineError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| EngineError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel> {
    let text = fs::read_to_string(path).map_err(|e| EngineError::Checkpoint(format!("{}: {e}", path.display())))?;
    let env: Envelope = serde_json::from_str(&text).map_err(|e| EngineError::Checkpoint(e.to_string()))?;
    if env.format_version != CHECKPOINT_VERSION {
        return Err(EngineError::Checkpoint(format!(
            "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
            env.format_version
        )));
    }
    // re-validate shapes
    let m = env.model;
    GnnModel::from_params(m.layers.clone(), m.activation, m.dropout, m.params().to_vec())
}
