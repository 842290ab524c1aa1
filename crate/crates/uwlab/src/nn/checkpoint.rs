//! Detector checkpoints: named parameter tensors plus architecture and
//! training metadata, serialized as JSON. JSON's shortest-round-trip float
//! printing makes save→load bit-exact for finite values; non-finite values
//! are rejected at save time.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Detector architecture description (shape/preset), detector-specific.
    pub detector: serde_json::Value,
    pub params: Vec<NamedTensor>,
    /// Optimizer state, present when training may resume.
    pub optimizer: Option<Adam>,
    /// Free-form snapshot of the training configuration that produced this.
    pub training: serde_json::Value,
    pub seed: u64,
    pub epochs_completed: usize,
    pub best_val_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(detector: serde_json::Value, names: &[String], params: &[Rc<Tensor>]) -> Self {
        assert_eq!(names.len(), params.len());
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            detector,
            params: names
                .iter()
                .zip(params)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    tensor: (**t).clone(),
                })
                .collect(),
            optimizer: None,
            training: serde_json::Value::Null,
            seed: 0,
            epochs_completed: 0,
            best_val_loss: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        for nt in &self.params {
            if nt.tensor.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Serde(format!(
                    "checkpoint parameter `{}` contains non-finite values",
                    nt.name
                )));
            }
        }
        let json =
            serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "checkpoint format version {} (supported: {})",
                ck.format_version, CHECKPOINT_VERSION
            )));
        }
        Ok(ck)
    }

    /// Parameters in file order as shared tensors.
    pub fn shared_params(&self) -> Vec<Rc<Tensor>> {
        self.params
            .iter()
            .map(|nt| Rc::new(nt.tensor.clone()))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|nt| nt.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = crate::rng::substream(99, crate::rng::StreamDomain::Scratch, 0);
        let params: Vec<Rc<Tensor>> = (0..3)
            .map(|i| {
                Rc::new(Tensor::from_vec(
                    2 + i,
                    3,
                    (0..(2 + i) * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ))
            })
            .collect();
        let names: Vec<String> = (0..3).map(|i| format!("layer{i}.w")).collect();
        let mut ck = Checkpoint::new(serde_json::json!({"kind": "test"}), &names, &params);
        ck.seed = 42;
        ck.epochs_completed = 7;
        ck.best_val_loss = Some(0.012345678901234567);
        let mut adam = Adam::new(&params);
        let grads: Vec<Option<Tensor>> = params
            .iter()
            .map(|p| Some(Tensor::from_vec(p.rows, p.cols, vec![0.25; p.rows * p.cols])))
            .collect();
        let mut ps = params.clone();
        adam.step(&mut ps, &grads, 1e-3);
        ck.optimizer = Some(adam);

        let dir = std::env::temp_dir().join("uwlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params.len(), 3);
        for (a, b) in ck.params.iter().zip(&back.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data, b.tensor.data, "tensor bits changed");
        }
        assert_eq!(back.seed, 42);
        assert_eq!(back.epochs_completed, 7);
        assert_eq!(back.best_val_loss, ck.best_val_loss);
        let (oa, ob) = (ck.optimizer.unwrap(), back.optimizer.unwrap());
        assert_eq!(oa.step_count, ob.step_count);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let params = vec![Rc::new(Tensor::from_vec(1, 2, vec![1.0, f64::NAN]))];
        let ck = Checkpoint::new(serde_json::Value::Null, &["w".into()], &params);
        let path = std::env::temp_dir().join("uwlab-ckpt-nan.json");
        let err = ck.save(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn rejects_unknown_version() {
        let params = vec![Rc::new(Tensor::from_vec(1, 1, vec![0.5]))];
        let mut ck = Checkpoint::new(serde_json::Value::Null, &["w".into()], &params);
        ck.format_version = 999;
        let dir = std::env::temp_dir().join("uwlab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_version.json");
        ck.save(&path).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
        std::fs::remove_file(&path).unwrap();
    }
}
