use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors plus Adam moment state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: IndexMap<String, Slot>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let zeros = Tensor::new(value.shape().to_vec(), vec![0.0; value.len()]).expect("shape");
        self.slots.insert(
            name.into(),
            Slot {
                m: zeros.clone(),
                v: zeros,
                value,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// One bias-corrected Adam update. Every parameter must have a gradient.
    pub fn adam_step(&mut self, grads: &IndexMap<String, Tensor>, cfg: &AdamConfig) -> Result<(), DiffError> {
        if !(cfg.lr > 0.0 && cfg.beta1 > 0.0 && cfg.beta2 > 0.0 && cfg.eps > 0.0) {
            return Err(DiffError::BadHyperparameter);
        }
        for (name, slot) in &self.slots {
            let g = grads.get(name).ok_or_else(|| DiffError::MissingGradient(name.clone()))?;
            if g.shape() != slot.value.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    left: slot.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, slot) in self.slots.iter_mut() {
            let g = grads[name].data();
            let Slot { value, m, v } = slot;
            for (((w, mi), vi), &gi) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g)
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            step: self.step,
            params: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        CheckpointEntry {
                            shape: s.value.shape().to_vec(),
                            data: s.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Restores parameter values; Adam moments restart at zero.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, DiffError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DiffError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut store = ParamStore::new();
        for (name, e) in ck.params {
            store.insert(name, Tensor::new(e.shape, e.data)?);
        }
        store.step = ck.step;
        Ok(store)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), DiffError> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())
            .map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| DiffError::Checkpoint(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self, DiffError> {
        let text = std::fs::read_to_string(path).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "rd-sandwich-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter file: `name -> (shape, row-major data)`.
///
/// ```json
/// {"format": "rd-sandwich-params", "version": 1, "step": 1200,
///  "params": {"enc.l0.w": {"shape": [4, 8], "data": [ ... ]}}}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub params: IndexMap<String, CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grads(g: f64) -> IndexMap<String, Tensor> {
        let mut m = IndexMap::new();
        m.insert("w".to_string(), Tensor::scalar(g));
        m
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.7, -0.02, 1e3] {
            let mut s = scalar_store(1.0);
            let cfg = AdamConfig::with_lr(0.01);
            s.adam_step(&grads(g), &cfg).unwrap();
            let delta = s.get("w").unwrap().item() - 1.0;
            // m_hat / sqrt(v_hat) = sign(g); eps shifts it by ~eps/|g|
            let expect = -0.01 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((delta - expect).abs() < 1e-15, "{delta} vs {expect}");
            assert_eq!(s.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.25);
        for _ in 0..50 {
            s.adam_step(&grads(0.0), &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.get("w").unwrap().item(), 0.25);
        assert_eq!(s.step(), 50);
    }

    #[test]
    fn missing_gradient_is_error() {
        let mut s = scalar_store(0.0);
        s.insert("b", Tensor::scalar(0.0));
        let err = s.adam_step(&grads(1.0), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, DiffError::MissingGradient(ref n) if n == "b"));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn checkpoint_json_roundtrip_is_exact() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::matrix(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]).unwrap());
        s.insert("b", Tensor::row(&[std::f64::consts::PI]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        s.save_json(&p).unwrap();
        let back = ParamStore::load_json(&p).unwrap();
        assert_eq!(back.get("a"), s.get("a"));
        assert_eq!(back.get("b"), s.get("b"));
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }
}
