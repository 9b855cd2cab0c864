//! Versioned JSON model files.

use super::{Encoder, OrganicParams, TrainedOrganic};
use crate::math::Matrix;
use crate::{Error, Result, FORMAT_VERSION};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk organic model: embeddings, intercept and encoder weights, all as
/// nested row-major arrays with full double precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganicModelFile {
    pub format_version: u32,
    #[serde(default)]
    pub config_hash: String,
    pub p: usize,
    pub k: usize,
    pub psi: Matrix,
    pub rho: Vec<f64>,
    pub encoder: Encoder,
}

pub fn save_organic_model(path: &Path, model: &TrainedOrganic, config_hash: &str) -> Result<()> {
    let file = OrganicModelFile {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        p: model.params.p(),
        k: model.params.k(),
        psi: model.params.psi.clone(),
        rho: model.params.rho.clone(),
        encoder: model.encoder.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_organic_model(path: &Path) -> Result<(OrganicParams, Encoder, String)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let json = std::fs::read_to_string(path)?;
    let file: OrganicModelFile = serde_json::from_str(&json)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion { found: file.format_version, expected: FORMAT_VERSION });
    }
    if file.psi.rows() != file.p || file.psi.cols() != file.k || file.rho.len() != file.p {
        return Err(Error::ShapeMismatch(format!(
            "model file claims P={} K={} but psi is {}x{}",
            file.p,
            file.k,
            file.psi.rows(),
            file.psi.cols()
        )));
    }
    Ok((OrganicParams { psi: file.psi, rho: file.rho }, file.encoder, file.config_hash))
}
