//! Model parameter files.
//!
//! A model file is a JSON document:
//!
//! ```text
//! {
//!   "format": "edgedrive-mlp",
//!   "version": 1,
//!   "layers": [
//!     { "in_dim": 8, "out_dim": 32, "activation": "relu",
//!       "weights": [ ...out_dim*in_dim, row-major... ],
//!       "bias": [ ...out_dim... ],
//!       "mask": [ ...optional, true = trainable... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dense::DenseLayer;
use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "edgedrive-mlp";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layers: Vec<DenseLayer>,
}

pub fn mlp_to_json(model: &Mlp) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_FORMAT_VERSION,
        layers: model.layers().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn mlp_from_json(text: &str) -> Result<Mlp> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unexpected model format '{}'",
            file.format
        )));
    }
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {}",
            file.version
        )));
    }
    Mlp::new(file.layers)
}

pub fn save_mlp(model: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, mlp_to_json(model) + "\n")?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    mlp_from_json(&std::fs::read_to_string(path)?)
}
