//! Checkpoint container: a JSON manifest (tensor names, shapes, dtype,
//! model configuration), a flat little-endian f32 blob, and the vocab
//! tables. Save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::nn::params::{Init, ParamStore};

const FORMAT: &str = "tsrl-checkpoint";
const VERSION: u32 = 1;
const DTYPE: &str = "f32";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCABS_FILE: &str = "vocabs.json";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    /// Element offset into the value blob.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<C> {
    format: String,
    version: u32,
    dtype: String,
    config: C,
    tensors: Vec<TensorMeta>,
}

pub fn save<C: Serialize>(
    dir: &Path,
    config: &C,
    store: &ParamStore,
    vocabs: &Vocabs,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut tensors = Vec::with_capacity(store.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0;
    for id in store.ids() {
        let t = store.tensor(id);
        tensors.push(TensorMeta {
            name: store.name(id).to_string(),
            rows: t.rows,
            cols: t.cols,
            trainable: store.is_trainable(id),
            offset,
        });
        for &x in &t.data {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
        offset += t.data.len();
    }

    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        dtype: DTYPE.to_string(),
        config,
        tensors,
    };
    let mut manifest_json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    manifest_json.push('\n');
    let mut vocabs_json =
        serde_json::to_string_pretty(vocabs).map_err(|e| Error::Config(e.to_string()))?;
    vocabs_json.push('\n');

    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(MANIFEST_FILE, manifest_json.as_bytes())?;
    write(PARAMS_FILE, &blob)?;
    write(VOCABS_FILE, vocabs_json.as_bytes())
}

pub fn load<C: DeserializeOwned>(dir: &Path) -> Result<(C, ParamStore, Vocabs)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest<C> = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::parse(&manifest_path.display().to_string(), e.line(), e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::Config(format!(
            "not a checkpoint manifest: format {:?}",
            manifest.format
        )));
    }
    if manifest.version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} (expected {VERSION})",
            manifest.version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Config(format!(
            "unsupported checkpoint dtype {:?}",
            manifest.dtype
        )));
    }

    let blob_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
    if blob.len() != total * 4 {
        return Err(Error::Shape {
            op: "checkpoint",
            detail: format!("value blob holds {} bytes, manifest expects {}", blob.len(), total * 4),
        });
    }

    let mut store = ParamStore::new();
    // Initialization never draws randomness on the Given path; the rng
    // argument is only there to satisfy the constructor signature.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    for meta in &manifest.tensors {
        let len = meta.rows * meta.cols;
        let start = meta.offset * 4;
        let end = start + len * 4;
        if end > blob.len() {
            return Err(Error::Shape {
                op: "checkpoint",
                detail: format!("tensor {:?} overruns the value blob", meta.name),
            });
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        store.add(&meta.name, meta.rows, meta.cols, Init::Given(data), &mut rng, meta.trainable);
    }

    let vocabs_path = dir.join(VOCABS_FILE);
    let vocabs_text = fs::read_to_string(&vocabs_path).map_err(|e| Error::io(&vocabs_path, e))?;
    let vocabs: Vocabs = serde_json::from_str(&vocabs_text)
        .map_err(|e| Error::parse(&vocabs_path.display().to_string(), e.line(), e.to_string()))?;

    Ok((manifest.config, store, vocabs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct DemoConfig {
        hidden: usize,
        label: String,
    }

    fn demo_store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.add("enc.w", 3, 4, Init::Xavier, &mut rng, true);
        store.add("enc.b", 3, 1, Init::Zeros, &mut rng, true);
        store.add("frozen.table", 5, 2, Init::Xavier, &mut rng, false);
        store
    }

    fn demo_vocabs() -> Vocabs {
        let mut v = Vocabs::new();
        v.words.intern("hello");
        v.roles.intern("A0");
        v
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("ck1");
        let second = dir.path().join("ck2");
        let config = DemoConfig { hidden: 7, label: "demo".into() };
        let store = demo_store();
        let vocabs = demo_vocabs();

        save(&first, &config, &store, &vocabs).unwrap();
        let (config2, store2, vocabs2) = load::<DemoConfig>(&first).unwrap();
        assert_eq!(config2, config);
        assert_eq!(vocabs2.words.len(), vocabs.words.len());
        assert!(!store2.is_trainable(store2.lookup("frozen.table").unwrap()));
        save(&second, &config2, &store2, &vocabs2).unwrap();

        for name in [MANIFEST_FILE, PARAMS_FILE, VOCABS_FILE] {
            let a = std::fs::read(first.join(name)).unwrap();
            let b = std::fs::read(second.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn truncated_blob_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let config = DemoConfig { hidden: 1, label: "x".into() };
        save(&path, &config, &demo_store(), &demo_vocabs()).unwrap();
        let blob = std::fs::read(path.join(PARAMS_FILE)).unwrap();
        std::fs::write(path.join(PARAMS_FILE), &blob[..blob.len() - 4]).unwrap();
        let err = load::<DemoConfig>(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("blob"));
    }

    #[test]
    fn foreign_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        std::fs::create_dir_all(&path).unwrap();
        std::fs::write(
            path.join(MANIFEST_FILE),
            r#"{"format": "other", "version": 1, "dtype": "f32", "config": null, "tensors": []}"#,
        )
        .unwrap();
        let err = load::<serde_json::Value>(&path).unwrap_err();
        assert!(err.to_string().contains("format"));
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let err = load::<DemoConfig>(Path::new("/nonexistent/ck")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
