//! Named parameters, Adam state and the checkpoint format.

use super::tensor::Tensor;
use super::NnError;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Gradients aligned with a [`ParamStore`]'s parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), index: HashMap::new(), values: Vec::new(), m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<(), NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.m.push(Tensor::zeros(t.shape()));
        self.v.push(Tensor::zeros(t.shape()));
        self.values.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.m[i], &self.v[i])
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Bias-corrected Adam update of every parameter.
    pub fn adam_step(&mut self, grads: &Grads, hp: &AdamParams) -> Result<(), NnError> {
        if grads.tensors.len() != self.values.len() {
            return Err(NnError::Shape(format!("{} gradients for {} parameters", grads.tensors.len(), self.values.len())));
        }
        for (i, g) in grads.tensors.iter().enumerate() {
            if g.shape() != self.values[i].shape() {
                return Err(NnError::Shape(format!("gradient {:?} for `{}` {:?}", g.shape(), self.names[i], self.values[i].shape())));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(self.names[i].clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        for (i, g) in grads.tensors.iter().enumerate() {
            let p = self.values[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
            }
        }
        Ok(())
    }

    /// `self ← τ·source + (1 − τ)·self` for every parameter.
    pub fn polyak_from(&mut self, source: &ParamStore, tau: f64) -> Result<(), NnError> {
        if source.names != self.names {
            return Err(NnError::Shape("polyak: parameter sets differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&source.values) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    /// Copy of the parameter values with fresh optimizer state.
    pub fn clone_values(&self) -> ParamStore {
        let mut out = self.clone();
        for t in out.m.iter_mut().chain(out.v.iter_mut()) {
            t.data_mut().fill(0.0);
        }
        out.step = 0;
        out
    }

    pub fn save(&self, dir: &Path, stem: &str, metadata: serde_json::Value) -> Result<(), NnError> {
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, t)| ParamEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            metadata,
        };
        let mut bytes = Vec::with_capacity(3 * 8 * self.num_values());
        for group in [&self.values, &self.m, &self.v] {
            for t in group.iter() {
                for x in t.data() {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write(&dir.join(format!("{stem}.json")), json.as_bytes())?;
        write(&dir.join(format!("{stem}.bin")), &bytes)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(ParamStore, serde_json::Value), NnError> {
        let mpath = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&mpath).map_err(|e| NnError::Io(format!("{}: {e}", mpath.display())))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", mpath.display())))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unsupported format `{}`", manifest.format)));
        }
        let bpath = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bpath).map_err(|e| NnError::Io(format!("{}: {e}", bpath.display())))?;
        let total: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if bytes.len() != 3 * 8 * total {
            return Err(NnError::Checkpoint(format!("payload has {} bytes, manifest needs {}", bytes.len(), 24 * total)));
        }
        let mut floats = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut read_group = || -> Result<Vec<Tensor>, NnError> {
            manifest
                .params
                .iter()
                .map(|p| {
                    let n = p.shape.iter().product();
                    Tensor::new(p.shape.clone(), floats.by_ref().take(n).collect())
                })
                .collect()
        };
        let values = read_group()?;
        let m = read_group()?;
        let v = read_group()?;
        let mut store = ParamStore::new();
        for (p, t) in manifest.params.iter().zip(values) {
            store.insert(&p.name, t)?;
        }
        store.m = m;
        store.v = v;
        store.step = manifest.step;
        Ok((store, manifest.metadata))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), NnError> {
    std::fs::write(path, bytes).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

const CHECKPOINT_FORMAT: &str = "graspforge-params-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    step: u64,
    params: Vec<ParamEntry>,
    metadata: serde_json::Value,
}

/// Kaiming-uniform values for a weight with the given fan-in.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("sized")
}

/// Kaiming-uniform with leaky-ReLU slope `a`: bound `√(6/((1 + a²)·fan_in))`.
/// `a = √5` gives the `±1/√fan_in` range common as a conv/linear default.
pub fn kaiming_uniform_slope<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, a: f64, rng: &mut R) -> Tensor {
    let bound = (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("sized")
}

/// Uniform `±1/√fan_in` bias values.
pub fn bias_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_vec((0..n).map(|_| rng.random_range(-bound..bound)).collect())
}
