//! Checkpoints: a directory with `meta.json` plus one raw little-endian
//! f32 binary per parameter, named by its dotted path. Written to a temp
//! directory and renamed, so a checkpoint on disk is always complete.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::params::ParamStore;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub component: String,
    pub step: u64,
    pub config: serde_json::Value,
    pub params: Vec<ParamMeta>,
}

/// Save atomically: any existing checkpoint at `dir` is replaced only
/// once the new one is fully written.
pub fn save_checkpoint(
    dir: &Path,
    component: &str,
    store: &ParamStore,
    config: &serde_json::Value,
    step: u64,
) -> Result<()> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        dir.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("checkpoint")
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let mut params = Vec::with_capacity(store.len());
    for (name, value) in store.iter() {
        let (r, c) = value.dim();
        params.push(ParamMeta {
            name: name.to_string(),
            shape: [r, c],
        });
        let mut buf = Vec::with_capacity(value.len() * 4);
        for &v in value.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(tmp.join(format!("{name}.bin")))?;
        f.write_all(&buf)?;
    }
    let meta = CheckpointMeta {
        component: component.to_string(),
        step,
        config: config.clone(),
        params,
    };
    fs::write(tmp.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Load a checkpoint. A missing directory or file is a dependency error:
/// the caller asked for an artifact an earlier stage should have made.
pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::Dependency(format!(
            "checkpoint not found at {}",
            dir.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
    let mut store = ParamStore::new();
    for pm in &meta.params {
        let path = dir.join(format!("{}.bin", pm.name));
        let mut f = fs::File::open(&path).map_err(|_| {
            Error::Dependency(format!("missing parameter file {}", path.display()))
        })?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        let n = pm.shape[0] * pm.shape[1];
        if buf.len() != n * 4 {
            return Err(Error::Input(format!(
                "parameter {} has {} bytes, expected {}",
                pm.name,
                buf.len(),
                n * 4
            )));
        }
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let arr = Array2::from_shape_vec((pm.shape[0], pm.shape[1]), data).unwrap();
        store.add(&pm.name, arr);
    }
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::Init;

    fn sample_store() -> ParamStore {
        let mut init = Init::new(42);
        let mut s = ParamStore::new();
        s.add("enc.layer0.w", init.linear(4, 6));
        s.add("enc.layer0.b", init.uniform(1, 6, -1.0, 1.0));
        s.add("dec.pos", init.embedding(8, 4));
        s
    }

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let store = sample_store();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("sep");
        let cfg = serde_json::json!({"d_model": 4});
        save_checkpoint(&ck, "separation", &store, &cfg, 123).unwrap();

        let (loaded, meta) = load_checkpoint(&ck).unwrap();
        assert_eq!(meta.component, "separation");
        assert_eq!(meta.step, 123);
        assert_eq!(meta.config, cfg);
        // Saving the loaded store reproduces identical bytes.
        let ck2 = dir.path().join("sep2");
        save_checkpoint(&ck2, "separation", &loaded, &cfg, 123).unwrap();
        for pm in &meta.params {
            let a = std::fs::read(ck.join(format!("{}.bin", pm.name))).unwrap();
            let b = std::fs::read(ck2.join(format!("{}.bin", pm.name))).unwrap();
            assert_eq!(a, b, "param {} differs", pm.name);
        }
        // And values match the original at f32 precision.
        for (pid, (name, value)) in store.iter().enumerate() {
            let lid = loaded.id_of(name).unwrap();
            assert_eq!(pid, lid, "parameter order preserved");
            for (x, y) in value.iter().zip(loaded.value(lid).iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn missing_checkpoint_is_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(Error::Dependency(_))
        ));
    }

    #[test]
    fn save_replaces_existing_checkpoint() {
        let store = sample_store();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("vq");
        let cfg = serde_json::json!({});
        save_checkpoint(&ck, "vq", &store, &cfg, 1).unwrap();
        save_checkpoint(&ck, "vq", &store, &cfg, 2).unwrap();
        let (_, meta) = load_checkpoint(&ck).unwrap();
        assert_eq!(meta.step, 2);
    }
}
