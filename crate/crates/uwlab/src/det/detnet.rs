//! Unfolded iterative detector.
//!
//! Each of the `L` layers refines a running symbol estimate `d̂` using the
//! matched filter `Hᵀy` and Gram matrix `HᵀH` (both optionally scaled by the
//! inverse Gram diagonal `P⁻¹`):
//!
//! ```text
//! q_k  = d̂_{k−1} + δ_{k,1}·P⁻¹Hᵀy − δ_{k,2}·P⁻¹HᵀH·d̂_{k−1}
//! q̃_k  = q̃_{k−1} + α·(q_k − q̃_{k−1})
//! h    = ReLU(W₁·[q̃_k ; ṽ_{k−1}] + b₁)
//! [s_k ; v] = W₂·h + b₂
//! ṽ_k  = ṽ_{k−1} + α·(v − ṽ_{k−1})
//! d̂_k  = Σ_j symbol_j · s_k[·,j]      (layers 1..L−1)
//! ```
//!
//! `s_k` are per-component score blocks over `{−ρ, +ρ}`; the training loss
//! weights each layer's score error by `ln(1+k)`, pushing later layers to
//! dominate while keeping gradients alive early.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{
    component_symbols, gram_batch, register_params, Detector, GramBatch,
};
use crate::model::{RealLinearModel, SystemConfig};
use crate::nn::{glorot_uniform, Graph, NodeId, Tensor};
use crate::rng::{substream, StreamDomain};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetNetConfig {
    /// Complex data symbols per vector (`N_d`); real dimension is `2N_d`.
    pub n_data: usize,
    /// Unfolded iterations `L`.
    pub layers: usize,
    /// Hidden width `d_h`.
    pub hidden: usize,
    /// Carried memory width `d_v`.
    pub memory: usize,
    /// Relaxation factor `α` of the running blends.
    pub relax: f64,
    /// Scale inputs by the inverse Gram diagonal.
    pub precondition: bool,
    /// Component amplitude `ρ`.
    pub rho: f64,
    /// Suggested Adam base learning rate.
    pub learning_rate: f64,
}

impl DetNetConfig {
    /// Tuned configuration for one of the two reference systems.
    pub fn preset_for(cfg: &SystemConfig) -> Result<Self> {
        match cfg.n_data {
            8 => Ok(DetNetConfig {
                n_data: 8,
                layers: 10,
                hidden: 80,
                memory: 32,
                relax: 0.1,
                precondition: true,
                rho: cfg.rho,
                learning_rate: 1.9e-3,
            }),
            32 => Ok(DetNetConfig {
                n_data: 32,
                layers: 30,
                hidden: 250,
                memory: 80,
                relax: 0.9,
                precondition: true,
                rho: cfg.rho,
                learning_rate: 4.6e-4,
            }),
            other => Err(Error::InvalidConfig(format!(
                "no iterative-detector preset for N_d = {other}"
            ))),
        }
    }
}

pub struct DetNet {
    pub cfg: DetNetConfig,
    params: Vec<Rc<Tensor>>,
    names: Vec<String>,
}

// parameter slots per layer: δ₁, δ₂, W₁, b₁, W₂, b₂
const SLOTS: usize = 6;

impl DetNet {
    pub fn new(cfg: DetNetConfig, seed: u64) -> Self {
        let n = 2 * cfg.n_data;
        let in_w = n + cfg.memory;
        let out_w = 2 * n + cfg.memory; // score blocks (2 per component) + memory
        let mut rng = substream(seed, StreamDomain::Init, 0);
        let mut params = Vec::with_capacity(cfg.layers * SLOTS);
        let mut names = Vec::with_capacity(cfg.layers * SLOTS);
        for k in 0..cfg.layers {
            params.push(Rc::new(Tensor::from_vec(1, 1, vec![1.0])));
            names.push(format!("layer{k}.delta1"));
            params.push(Rc::new(Tensor::from_vec(1, 1, vec![1.0])));
            names.push(format!("layer{k}.delta2"));
            params.push(Rc::new(glorot_uniform(in_w, cfg.hidden, &mut rng)));
            names.push(format!("layer{k}.w1"));
            params.push(Rc::new(Tensor::zeros(1, cfg.hidden)));
            names.push(format!("layer{k}.b1"));
            params.push(Rc::new(glorot_uniform(cfg.hidden, out_w, &mut rng)));
            names.push(format!("layer{k}.w2"));
            params.push(Rc::new(Tensor::zeros(1, out_w)));
            names.push(format!("layer{k}.b2"));
        }
        DetNet { cfg, params, names }
    }

    /// Score blocks of every layer, first to last.
    pub fn forward_layers(&self, g: &mut Graph, batch: &GramBatch) -> Vec<NodeId> {
        let n = 2 * self.cfg.n_data;
        let b = batch.hty.rows;
        g.add_external_mults(batch.prep_mults);
        let p = register_params(g, &self.params);
        let hty = g.constant_owned(batch.hty.clone());
        let symbols = component_symbols(self.cfg.rho);
        let mut dhat = g.constant_owned(Tensor::zeros(b, n));
        let mut q_run = g.constant_owned(Tensor::zeros(b, n));
        let mut v_run = g.constant_owned(Tensor::zeros(b, self.cfg.memory));
        let mut outs = Vec::with_capacity(self.cfg.layers);
        for k in 0..self.cfg.layers {
            let base = k * SLOTS;
            let w = g.batch_matvec(Rc::clone(&batch.hth), dhat);
            let drive = g.scale_by_param(p[base], hty);
            let damp = g.scale_by_param(p[base + 1], w);
            let s = g.add(dhat, drive);
            let q = g.sub(s, damp);
            q_run = g.lerp(q_run, q, self.cfg.relax);
            let z = g.concat_cols(q_run, v_run);
            let h = g.matmul(z, p[base + 2]);
            let h = g.add_bias(h, p[base + 3]);
            let h = g.relu(h);
            let o = g.matmul(h, p[base + 4]);
            let o = g.add_bias(o, p[base + 5]);
            let scores = g.slice_cols(o, 0, 2 * n);
            let v_raw = g.slice_cols(o, 2 * n, self.cfg.memory);
            v_run = g.lerp(v_run, v_raw, self.cfg.relax);
            outs.push(scores);
            if k + 1 < self.cfg.layers {
                dhat = g.onehot_expect(scores, &symbols);
            }
        }
        outs
    }
}

impl Detector for DetNet {
    fn kind(&self) -> &'static str {
        "detnet"
    }

    fn n_data(&self) -> usize {
        self.cfg.n_data
    }

    fn rho(&self) -> f64 {
        self.cfg.rho
    }

    fn params(&self) -> &[Rc<Tensor>] {
        &self.params
    }

    fn set_params(&mut self, params: Vec<Rc<Tensor>>) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::json!({ "kind": self.kind(), "config": self.cfg })
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    fn build_loss(
        &self,
        g: &mut Graph,
        models: &[RealLinearModel],
        targets: &Tensor,
    ) -> Result<NodeId> {
        let batch = gram_batch(models, self.cfg.precondition)?;
        let outs = self.forward_layers(g, &batch);
        let target = Rc::new(targets.clone());
        let total: f64 = (1..=outs.len()).map(|k| (1.0 + k as f64).ln()).sum();
        let terms: Vec<(NodeId, f64)> = outs
            .iter()
            .enumerate()
            .map(|(i, &scores)| {
                let l = g.quadratic_loss(scores, Rc::clone(&target));
                (l, (2.0 + i as f64).ln() / total)
            })
            .collect();
        Ok(g.weighted_sum(&terms))
    }

    fn final_logits(&self, g: &mut Graph, models: &[RealLinearModel]) -> Result<NodeId> {
        let batch = gram_batch(models, self.cfg.precondition)?;
        let outs = self.forward_layers(g, &batch);
        Ok(*outs.last().expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det::tests::{stack_rows, test_models};
    use crate::det::{count_forward_mults, detect, onehot_targets};
    use crate::nn::optim::Adam;

    fn tiny_config() -> DetNetConfig {
        DetNetConfig {
            n_data: 2,
            layers: 3,
            hidden: 12,
            memory: 4,
            relax: 0.3,
            precondition: true,
            rho: 1.0 / 2f64.sqrt(),
            learning_rate: 1e-3,
        }
    }

    /// Closed-form eval cost of one detection, preparation included.
    fn expected_mults(cfg: &DetNetConfig, rows: usize) -> u64 {
        let n = 2 * cfg.n_data;
        let prep = n * n * rows
            + n * rows
            + if cfg.precondition { n * (n + 1) } else { 0 };
        let per_layer = n * n                       // Gram matrix times estimate
            + n + n                                  // two trained scalings
            + (n + cfg.memory)                       // running blends
            + (n + cfg.memory) * cfg.hidden          // input affine
            + cfg.hidden * (2 * n + cfg.memory)      // output affine
            + 2 * n;                                 // score-to-symbol demap
        (cfg.layers * per_layer - 2 * n + prep) as u64
    }

    #[test]
    fn instrumented_count_matches_closed_form() {
        let (models, _) = test_models(1, 21);
        for precondition in [true, false] {
            let mut cfg = tiny_config();
            cfg.n_data = 8; // match the transceiver test models
            cfg.precondition = precondition;
            let det = DetNet::new(cfg.clone(), 3);
            let counted = count_forward_mults(&det, &models[0]).unwrap();
            assert_eq!(counted, expected_mults(&cfg, models[0].h.rows));
        }
    }

    #[test]
    fn preset_count_matches_closed_form() {
        let sys = crate::model::system_i();
        let cfg = DetNetConfig::preset_for(&sys).unwrap();
        let det = DetNet::new(cfg.clone(), 3);
        let (models, _) = test_models(1, 22);
        let counted = count_forward_mults(&det, &models[0]).unwrap();
        assert_eq!(counted, expected_mults(&cfg, models[0].h.rows));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut cfg = tiny_config();
        cfg.n_data = 8; // match the transceiver test models
        cfg.layers = 2;
        cfg.hidden = 6;
        cfg.memory = 3;
        let det = DetNet::new(cfg, 5);
        let (models, symbols) = test_models(2, 23);
        let targets = onehot_targets(&stack_rows(&symbols));
        let params: Vec<Tensor> = det.params().iter().map(|p| (**p).clone()).collect();
        let names = det.param_names();
        crate::nn::fd::check_gradients(
            &params,
            |g, p| {
                let mut d = DetNet::new(
                    DetNetConfig {
                        n_data: 8,
                        layers: 2,
                        hidden: 6,
                        memory: 3,
                        relax: 0.3,
                        precondition: true,
                        rho: 1.0 / 2f64.sqrt(),
                        learning_rate: 1e-3,
                    },
                    5,
                );
                d.set_params(p.to_vec());
                d.build_loss(g, &models, &targets).unwrap()
            },
            1e-4,
            6,
        );
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = DetNetConfig {
            n_data: 8,
            layers: 3,
            hidden: 24,
            memory: 8,
            relax: 0.3,
            precondition: true,
            rho: 1.0 / 2f64.sqrt(),
            learning_rate: 1e-3,
        };
        let (models, symbols) = test_models(16, 24);
        let targets = onehot_targets(&stack_rows(&symbols));
        let run = || {
            let mut det = DetNet::new(cfg.clone(), 7);
            let mut params = det.params().to_vec();
            let mut adam = Adam::new(&params);
            let mut losses = Vec::new();
            for _ in 0..30 {
                let mut g = Graph::new(true, 7);
                det.set_params(params.clone());
                let loss = det.build_loss(&mut g, &models, &targets).unwrap();
                losses.push(g.value(loss).data[0]);
                let grads = g.backward(loss, params.len());
                drop(g);
                adam.step(&mut params, &grads, 2e-3);
            }
            det.set_params(params);
            (det, losses)
        };
        let (det_a, losses_a) = run();
        let (det_b, losses_b) = run();
        assert!(
            losses_a.last().unwrap() < &(losses_a[0] * 0.7),
            "loss did not drop: {} -> {}",
            losses_a[0],
            losses_a.last().unwrap()
        );
        // bit-exact determinism across runs
        assert_eq!(losses_a, losses_b);
        for (a, b) in det_a.params().iter().zip(det_b.params()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn eval_is_deterministic_and_checkpoint_preserves_outputs() {
        let sys = crate::model::system_i();
        let cfg = DetNetConfig::preset_for(&sys).unwrap();
        let det = DetNet::new(cfg, 9);
        let (models, _) = test_models(3, 25);
        let a = detect(&det, &models).unwrap();
        let b = detect(&det, &models).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.llr, y.llr);
        }
        let dir = std::env::temp_dir().join("uwlab-detnet-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("detnet.ckpt.json");
        crate::det::checkpoint_of(&det).save(&path).unwrap();
        let (loaded, _) = crate::det::load_detector(&path).unwrap();
        let c = detect(loaded.as_ref(), &models).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.llr, y.llr, "checkpoint changed detector outputs");
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn preconditioning_changes_outputs() {
        let mut cfg = tiny_config();
        cfg.n_data = 8;
        let det_pre = DetNet::new(cfg.clone(), 11);
        cfg.precondition = false;
        let mut det_plain = DetNet::new(cfg, 11);
        det_plain.set_params(det_pre.params().to_vec());
        let (models, _) = test_models(1, 26);
        let a = detect(&det_pre, &models).unwrap();
        let b = detect(&det_plain, &models).unwrap();
        let diff: f64 = a[0]
            .llr
            .iter()
            .zip(&b[0].llr)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "preconditioning had no effect");
        assert!(a[0].llr.iter().all(|v| v.is_finite()));
        assert!(b[0].llr.iter().all(|v| v.is_finite()));
    }
}
