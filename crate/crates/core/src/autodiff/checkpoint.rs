//! Versioned JSON checkpoints.
//!
//! Layout: `{"version": 1, "params": [{"name", "shape": [rows, cols],
//! "data": [row-major f64...]}, ...]}`. Parameter names are prefixed per
//! store (`wm/encoder.0.w`). Values round-trip exactly: serde_json prints
//! f64 with shortest-exact formatting.

use crate::autodiff::nn::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    params: Vec<ParamRecord>,
}

/// Serialize the given stores under their prefixes into one file.
pub fn save(path: &Path, stores: &[(&str, &ParamStore)]) -> Result<()> {
    let mut params = Vec::new();
    for (prefix, store) in stores {
        for (name, tensor) in store.iter() {
            params.push(ParamRecord {
                name: format!("{prefix}/{name}"),
                shape: [tensor.rows(), tensor.cols()],
                data: tensor.data().to_vec(),
            });
        }
    }
    let file = CheckpointFile { version: CHECKPOINT_VERSION, params };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Load parameters for the prefixed stores in place. Every parameter of
/// every store must be present with a matching shape.
pub fn load(path: &Path, stores: &mut [(&str, &mut ParamStore)]) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    for (prefix, store) in stores.iter_mut() {
        let wanted = format!("{prefix}/");
        let mut loaded = 0usize;
        for record in &file.params {
            if let Some(name) = record.name.strip_prefix(&wanted) {
                let tensor = Tensor::from_vec(record.shape[0], record.shape[1], record.data.clone())
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", record.name)))?;
                if !tensor.is_finite() {
                    return Err(Error::Checkpoint(format!("{}: non-finite values", record.name)));
                }
                store.set_values(name, tensor)?;
                loaded += 1;
            }
        }
        if loaded != store.len() {
            return Err(Error::Checkpoint(format!(
                "store {prefix} expects {} parameters, checkpoint provides {loaded}",
                store.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut store = ParamStore::new();
        store.register("a", Tensor::xavier_uniform(3, 4, &mut rng));
        store.register("b", Tensor::xavier_uniform(1, 7, &mut rng));

        let dir = std::env::temp_dir().join("roam_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        save(&path, &[("net", &store)]).unwrap();

        let mut rng2 = StdRng::seed_from_u64(99);
        let mut other = ParamStore::new();
        other.register("a", Tensor::xavier_uniform(3, 4, &mut rng2));
        other.register("b", Tensor::xavier_uniform(1, 7, &mut rng2));
        load(&path, &mut [("net", &mut other)]).unwrap();

        assert_eq!(store.tensors(), other.tensors());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn missing_parameter_is_error() {
        let mut store = ParamStore::new();
        store.register("a", Tensor::zeros(1, 2));
        let dir = std::env::temp_dir().join("roam_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.json");
        save(&path, &[("net", &store)]).unwrap();

        let mut bigger = ParamStore::new();
        bigger.register("a", Tensor::zeros(1, 2));
        bigger.register("extra", Tensor::zeros(1, 2));
        assert!(load(&path, &mut [("net", &mut bigger)]).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn version_is_checked() {
        let dir = std::env::temp_dir().join("roam_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badversion.json");
        std::fs::write(&path, r#"{"version": 99, "params": []}"#).unwrap();
        let mut store = ParamStore::new();
        assert!(load(&path, &mut [("net", &mut store)]).is_err());
        std::fs::remove_file(&path).ok();
    }
}
