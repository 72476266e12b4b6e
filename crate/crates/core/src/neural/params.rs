//! Named parameter store with seeded initialization and a directory
//! checkpoint format (JSON manifest plus raw little-endian f64 blobs).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::optim::LrSchedule;
use crate::neural::tensor::Tensor;

pub const CKPT_VERSION: &str = "ckpt_v1";

/// All trainable tensors, keyed by dotted name. Iteration order is the
/// lexicographic name order, which keeps every consumer deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Tensor>,
}

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(format!("{seed}:{name}").as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} already defined")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    fn init_tensor(&self, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = init_rng(self.seed, name);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| dist.sample(&mut rng)).collect();
        Tensor::new(shape, data).expect("shape/data consistent").with_grad()
    }

    /// Adds `{name}.w` [in x out] and `{name}.b` [out], both initialized
    /// uniformly in +/- 1/sqrt(fan_in).
    pub fn add_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let w = self.init_tensor(&format!("{name}.w"), vec![fan_in, fan_out], fan_in);
        let b = self.init_tensor(&format!("{name}.b"), vec![fan_out], fan_in);
        self.insert(&format!("{name}.w"), w)?;
        self.insert(&format!("{name}.b"), b)
    }

    /// Adds a bare matrix parameter with fan-in taken from its row count.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        let t = self.init_tensor(name, vec![rows, cols], rows);
        self.insert(name, t)
    }

    /// Adds a single row vector parameter, fan-in 1.
    pub fn add_row_param(&mut self, name: &str, cols: usize) -> Result<()> {
        let t = self.init_tensor(name, vec![cols], 1);
        self.insert(name, t)
    }
}

/// Everything a checkpoint carries besides weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointData {
    pub seed: u64,
    pub schedule: LrSchedule,
    pub step: usize,
    /// Free-form consumer payload (training config, mode, progress).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    seed: u64,
    schedule: LrSchedule,
    step: usize,
    params: Vec<ManifestParam>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes the store and metadata into `dir` (created if absent): a
/// `manifest.json` plus one raw little-endian f64 blob per tensor, numbered
/// in name order. Same store and metadata produce byte-identical output.
pub fn save_checkpoint(dir: &Path, store: &ParamStore, data: &CheckpointData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        version: CKPT_VERSION.to_string(),
        seed: data.seed,
        schedule: data.schedule.clone(),
        step: data.step,
        params: Vec::with_capacity(store.len()),
        extra: data.extra.clone(),
    };
    for (i, (name, tensor)) in store.iter().enumerate() {
        let file = format!("p{i:03}.bin");
        let mut bytes = Vec::with_capacity(tensor.len() * 8);
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(dir.join(&file))?;
        f.write_all(&bytes)?;
        manifest.params.push(ManifestParam {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Loads a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore, CheckpointData)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {:?}, expected {:?}",
            manifest.version, CKPT_VERSION
        )));
    }
    let mut store = ParamStore::new(manifest.seed);
    for p in &manifest.params {
        let len: usize = p.shape.iter().product();
        let path = dir.join(&p.file);
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        if bytes.len() != len * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: expected {} bytes for {:?}, found {}",
                p.file,
                len * 8,
                p.shape,
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint(format!("{}: non-finite value", p.file)));
        }
        let tensor = Tensor::new(p.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.file)))?
            .with_grad();
        store.insert(&p.name, tensor)?;
    }
    let data = CheckpointData {
        seed: manifest.seed,
        schedule: manifest.schedule,
        step: manifest.step,
        extra: manifest.extra,
    };
    Ok((store, data))
}
