//! On-disk artifacts: model checkpoints, CSV tables and the seed manifest.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttentionModel;

/// Serialized model: `W` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d_x: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub xi: f64,
    pub seed: u64,
    pub steps: usize,
    /// Seed of the pattern basis the model was trained against.
    pub basis_seed: u64,
}

impl Checkpoint {
    pub fn from_model(model: &AttentionModel, k: usize, basis_seed: u64) -> Self {
        let w = model.w();
        let mut flat = Vec::with_capacity(w.len());
        for r in 0..w.nrows() {
            flat.extend(w.row(r).iter());
        }
        Self {
            d_x: model.dim(),
            k,
            w: flat,
            xi: model.xi(),
            seed: model.seed(),
            steps: model.steps(),
            basis_seed,
        }
    }

    pub fn to_model(&self) -> Result<AttentionModel> {
        let n = 2 * self.d_x;
        if self.w.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} weights, expected {}",
                self.w.len(),
                n * n
            )));
        }
        let w = DMatrix::from_row_slice(n, n, &self.w);
        AttentionModel::from_weights(w, self.xi, self.seed, self.steps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    rd.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Every seed an experiment derived, keyed by its role.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master_seed: u64,
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<(String, u64)>,
    /// Sweep cells that could not be generated, with the reason.
    pub skipped: Vec<String>,
}

impl SeedManifest {
    pub fn new(master_seed: u64, config_hash: String) -> Self {
        Self {
            master_seed,
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn record(&mut self, role: impl Into<String>, seed: u64) {
        self.seeds.push((role.into(), seed));
    }
}
