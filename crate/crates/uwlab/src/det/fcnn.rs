//! Compressed-input feedforward detector.
//!
//! The input is the upper triangle of `HᵀH` (column-stacked) concatenated
//! with `Hᵀy` — `2N_d² + 3N_d` features — followed by `L` equal-width hidden
//! layers and a linear head emitting per-component score blocks. Hidden
//! layers after the first add a scaled skip connection
//! `x_l = φ(W·x_{l−1} + b) + α·x_{l−1}`; the skip is architecturally cheap
//! and deliberately excluded from the multiplication account.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{feature_batch, register_params, Activation, Detector};
use crate::model::{RealLinearModel, SystemConfig};
use crate::nn::{glorot_uniform, Graph, NodeId, Tensor};
use crate::rng::{substream, StreamDomain};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcnnConfig {
    /// Complex data symbols per vector (`N_d`).
    pub n_data: usize,
    /// Hidden layer count `L`.
    pub layers: usize,
    /// Hidden width `d_h`.
    pub hidden: usize,
    /// Skip-connection gain `α` (0 disables the residual path).
    pub skip_gain: f64,
    pub activation: Activation,
    /// Component amplitude `ρ`.
    pub rho: f64,
    /// Suggested Adam base learning rate.
    pub learning_rate: f64,
}

impl FcnnConfig {
    /// Tuned configuration for one of the two reference systems.
    pub fn preset_for(cfg: &SystemConfig) -> Result<Self> {
        match cfg.n_data {
            8 => Ok(FcnnConfig {
                n_data: 8,
                layers: 10,
                hidden: 300,
                skip_gain: 0.0,
                activation: Activation::Relu,
                rho: cfg.rho,
                learning_rate: 6.0e-4,
            }),
            32 => Ok(FcnnConfig {
                n_data: 32,
                layers: 22,
                hidden: 800,
                skip_gain: 0.7,
                activation: Activation::Selu,
                rho: cfg.rho,
                learning_rate: 1.0e-4,
            }),
            other => Err(Error::InvalidConfig(format!(
                "no feedforward-detector preset for N_d = {other}"
            ))),
        }
    }

    /// Input feature width `2N_d² + 3N_d`.
    pub fn input_width(&self) -> usize {
        let n = 2 * self.n_data;
        n * (n + 1) / 2 + n
    }
}

pub struct Fcnn {
    pub cfg: FcnnConfig,
    params: Vec<Rc<Tensor>>,
    names: Vec<String>,
}

impl Fcnn {
    pub fn new(cfg: FcnnConfig, seed: u64) -> Self {
        assert!(cfg.layers >= 1);
        let mut rng = substream(seed, StreamDomain::Init, 0);
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut in_w = cfg.input_width();
        for l in 0..cfg.layers {
            params.push(Rc::new(glorot_uniform(in_w, cfg.hidden, &mut rng)));
            names.push(format!("hidden{l}.w"));
            params.push(Rc::new(Tensor::zeros(1, cfg.hidden)));
            names.push(format!("hidden{l}.b"));
            in_w = cfg.hidden;
        }
        let out_w = 4 * cfg.n_data; // two scores per real component
        params.push(Rc::new(glorot_uniform(cfg.hidden, out_w, &mut rng)));
        names.push("head.w".into());
        params.push(Rc::new(Tensor::zeros(1, out_w)));
        names.push("head.b".into());
        Fcnn { cfg, params, names }
    }

    fn forward(&self, g: &mut Graph, models: &[RealLinearModel]) -> NodeId {
        let fb = feature_batch(models);
        g.add_external_mults(fb.prep_mults);
        let p = register_params(g, &self.params);
        let mut x = g.constant_owned(fb.features);
        for l in 0..self.cfg.layers {
            let pre = g.matmul(x, p[2 * l]);
            let pre = g.add_bias(pre, p[2 * l + 1]);
            let act = self.cfg.activation.apply(g, pre);
            // the first layer changes width, so only later layers carry the
            // skip path
            x = if l == 0 {
                act
            } else {
                g.skip_blend(act, x, self.cfg.skip_gain)
            };
        }
        let head = g.matmul(x, p[2 * self.cfg.layers]);
        g.add_bias(head, p[2 * self.cfg.layers + 1])
    }
}

impl Detector for Fcnn {
    fn kind(&self) -> &'static str {
        "fcnn"
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
        let logits = self.forward(g, models);
        Ok(g.quadratic_loss(logits, Rc::new(targets.clone())))
    }

    fn final_logits(&self, g: &mut Graph, models: &[RealLinearModel]) -> Result<NodeId> {
        Ok(self.forward(g, models))
    }
}
