//! Single-file JSON checkpoints: version tag, config and named parameter arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AimsModel, ModelConfig};
use crate::autograd::Matrix;
use crate::error::{AimsError, Result};

pub const CHECKPOINT_FORMAT: &str = "aims-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    config: ModelConfig,
    #[serde(default)]
    step: usize,
    params: Vec<StoredParam>,
}

/// FNV-1a over parameter names and bit patterns; identifies a set of weights.
pub fn checkpoint_id(model: &AimsModel) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (_, name, value) in model.params().iter() {
        feed(name.as_bytes());
        for v in value.iter() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

pub fn to_json(model: &AimsModel, step: usize) -> Result<String> {
    let params = model
        .params()
        .iter()
        .map(|(_, name, v)| StoredParam {
            name: name.to_string(),
            rows: v.nrows(),
            cols: v.ncols(),
            data: v.iter().copied().collect(),
        })
        .collect();
    let stored = Stored {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        step,
        params,
    };
    serde_json::to_string(&stored).map_err(|e| AimsError::Checkpoint(e.to_string()))
}

/// Rebuilds the model from the stored config and checks every parameter's name and shape.
pub fn from_json(text: &str) -> Result<(AimsModel, usize)> {
    let stored: Stored = serde_json::from_str(text).map_err(|e| AimsError::Checkpoint(e.to_string()))?;
    if stored.format != CHECKPOINT_FORMAT {
        return Err(AimsError::Checkpoint(format!("unknown format tag `{}`", stored.format)));
    }
    if stored.version != CHECKPOINT_VERSION {
        return Err(AimsError::Checkpoint(format!("unsupported version {}", stored.version)));
    }
    let mut model = AimsModel::new(stored.config)?;
    if stored.params.len() != model.params().len() {
        return Err(AimsError::Checkpoint(format!(
            "checkpoint has {} parameters, config implies {}",
            stored.params.len(),
            model.params().len()
        )));
    }
    for p in stored.params {
        let id = model
            .params()
            .id(&p.name)
            .ok_or_else(|| AimsError::Checkpoint(format!("unexpected parameter {}", p.name)))?;
        let slot = model.params_mut().get_mut(id);
        if slot.dim() != (p.rows, p.cols) || p.data.len() != p.rows * p.cols {
            return Err(AimsError::Checkpoint(format!(
                "parameter {} has shape {}x{}, expected {:?}",
                p.name,
                p.rows,
                p.cols,
                slot.dim()
            )));
        }
        *slot = Matrix::from_shape_vec((p.rows, p.cols), p.data).expect("checked length");
    }
    Ok((model, stored.step))
}

pub fn save(model: &AimsModel, step: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| AimsError::io(parent, e))?;
    }
    fs::write(path, to_json(model, step)?).map_err(|e| AimsError::io(path, e))
}

pub fn load(path: &Path) -> Result<(AimsModel, usize)> {
    let text = fs::read_to_string(path).map_err(|e| AimsError::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        AimsError::Checkpoint(m) => AimsError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
