//! Self-attention detector.
//!
//! Each sample is presented as `2N_d` rows of the matrix
//! `P⁻¹[Hᵀy | HᵀH]` (one row per real symbol component, width `2N_d+1`).
//! A stack of single-head encoder layers — square query/key/value maps,
//! scaled dot-product attention shared across the sample's rows, residual
//! adds, row-wise layer normalization, and a position-wise feedforward
//! block — refines the rows while staying equivariant to their order. The
//! refined rows are then concatenated and a shallow feedforward head maps
//! them to per-component score blocks.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{gram_batch, register_params, Activation, Detector, GramBatch};
use crate::model::{RealLinearModel, SystemConfig};
use crate::nn::{glorot_uniform, Graph, NodeId, Tensor};
use crate::rng::{substream, StreamDomain};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttDetConfig {
    /// Complex data symbols per vector (`N_d`).
    pub n_data: usize,
    /// Encoder layer count.
    pub encoder_layers: usize,
    /// Feedforward width inside each encoder layer.
    pub encoder_hidden: usize,
    /// Hidden layer count of the final head (first layer included).
    pub head_layers: usize,
    /// Hidden width of the final head.
    pub head_hidden: usize,
    /// Dropout rate on attention and feedforward outputs (training only).
    pub dropout: f64,
    /// Head activation. The encoder's feedforward blocks always use ReLU.
    pub activation: Activation,
    /// Component amplitude `ρ`.
    pub rho: f64,
    /// Suggested Adam base learning rate.
    pub learning_rate: f64,
}

impl AttDetConfig {
    /// Tuned configuration for one of the two reference systems.
    pub fn preset_for(cfg: &SystemConfig) -> Result<Self> {
        match cfg.n_data {
            8 => Ok(AttDetConfig {
                n_data: 8,
                encoder_layers: 8,
                encoder_hidden: 80,
                head_layers: 2,
                head_hidden: 150,
                dropout: 0.0,
                activation: Activation::Relu,
                rho: cfg.rho,
                learning_rate: 1.8e-3,
            }),
            32 => Ok(AttDetConfig {
                n_data: 32,
                encoder_layers: 10,
                encoder_hidden: 400,
                head_layers: 3,
                head_hidden: 500,
                dropout: 0.0,
                activation: Activation::Selu,
                rho: cfg.rho,
                learning_rate: 3.0e-4,
            }),
            other => Err(Error::InvalidConfig(format!(
                "no attention-detector preset for N_d = {other}"
            ))),
        }
    }

    /// Row width `2N_d + 1`.
    pub fn row_width(&self) -> usize {
        2 * self.n_data + 1
    }
}

pub struct AttDet {
    pub cfg: AttDetConfig,
    params: Vec<Rc<Tensor>>,
    names: Vec<String>,
}

// parameter slots per encoder layer:
// wq wk wv norm1.gain norm1.bias ff.w1 ff.b1 ff.w2 ff.b2 norm2.gain norm2.bias
const ENC_SLOTS: usize = 11;

impl AttDet {
    pub fn new(cfg: AttDetConfig, seed: u64) -> Self {
        assert!(cfg.head_layers >= 1);
        let c = cfg.row_width();
        let mut rng = substream(seed, StreamDomain::Init, 0);
        let mut params = Vec::new();
        let mut names = Vec::new();
        for l in 0..cfg.encoder_layers {
            for tag in ["wq", "wk", "wv"] {
                params.push(Rc::new(glorot_uniform(c, c, &mut rng)));
                names.push(format!("enc{l}.{tag}"));
            }
            params.push(Rc::new(Tensor::from_vec(1, c, vec![1.0; c])));
            names.push(format!("enc{l}.norm1.gain"));
            params.push(Rc::new(Tensor::zeros(1, c)));
            names.push(format!("enc{l}.norm1.bias"));
            params.push(Rc::new(glorot_uniform(c, cfg.encoder_hidden, &mut rng)));
            names.push(format!("enc{l}.ff.w1"));
            params.push(Rc::new(Tensor::zeros(1, cfg.encoder_hidden)));
            names.push(format!("enc{l}.ff.b1"));
            params.push(Rc::new(glorot_uniform(cfg.encoder_hidden, c, &mut rng)));
            names.push(format!("enc{l}.ff.w2"));
            params.push(Rc::new(Tensor::zeros(1, c)));
            names.push(format!("enc{l}.ff.b2"));
            params.push(Rc::new(Tensor::from_vec(1, c, vec![1.0; c])));
            names.push(format!("enc{l}.norm2.gain"));
            params.push(Rc::new(Tensor::zeros(1, c)));
            names.push(format!("enc{l}.norm2.bias"));
        }
        let mut in_w = 2 * cfg.n_data * c;
        for l in 0..cfg.head_layers {
            params.push(Rc::new(glorot_uniform(in_w, cfg.head_hidden, &mut rng)));
            names.push(format!("head{l}.w"));
            params.push(Rc::new(Tensor::zeros(1, cfg.head_hidden)));
            names.push(format!("head{l}.b"));
            in_w = cfg.head_hidden;
        }
        params.push(Rc::new(glorot_uniform(
            cfg.head_hidden,
            4 * cfg.n_data,
            &mut rng,
        )));
        names.push("head.out.w".into());
        params.push(Rc::new(Tensor::zeros(1, 4 * cfg.n_data)));
        names.push("head.out.b".into());
        AttDet { cfg, params, names }
    }

    /// Stack per-sample `[P⁻¹Hᵀy | P⁻¹HᵀH]` rows into one tensor.
    fn att_rows(batch: &GramBatch) -> Tensor {
        let b = batch.hty.rows;
        let n = batch.hty.cols;
        let mut rows = Tensor::zeros(b * n, n + 1);
        for s in 0..b {
            for i in 0..n {
                rows.set(s * n + i, 0, batch.hty.get(s, i));
                rows.row_mut(s * n + i)[1..].copy_from_slice(batch.hth[s].row(i));
            }
        }
        rows
    }

    /// Run the encoder stack on stacked sample rows (`batch·2N_d × 2N_d+1`).
    /// Exposed so row-order equivariance can be verified directly.
    pub fn encode(&self, g: &mut Graph, rows: Tensor) -> NodeId {
        let p = register_params(g, &self.params);
        self.encode_with(g, rows, &p)
    }

    fn encode_with(&self, g: &mut Graph, rows: Tensor, p: &[NodeId]) -> NodeId {
        let n = 2 * self.cfg.n_data;
        assert_eq!(rows.cols, self.cfg.row_width());
        let mut x = g.constant_owned(rows);
        for l in 0..self.cfg.encoder_layers {
            let base = l * ENC_SLOTS;
            let q = g.matmul(x, p[base]);
            let k = g.matmul(x, p[base + 1]);
            let v = g.matmul(x, p[base + 2]);
            let att = g.self_attention(q, k, v, n);
            let att = g.dropout(att, self.cfg.dropout);
            let x1 = g.add(x, att);
            let x1 = g.layer_norm_rows(x1, p[base + 3], p[base + 4]);
            let h = g.matmul(x1, p[base + 5]);
            let h = g.add_bias(h, p[base + 6]);
            let h = g.relu(h);
            let h = g.dropout(h, self.cfg.dropout);
            let o = g.matmul(h, p[base + 7]);
            let o = g.add_bias(o, p[base + 8]);
            let o = g.dropout(o, self.cfg.dropout);
            let x2 = g.add(x1, o);
            x = g.layer_norm_rows(x2, p[base + 9], p[base + 10]);
        }
        x
    }

    fn forward(&self, g: &mut Graph, models: &[RealLinearModel]) -> Result<NodeId> {
        let batch = gram_batch(models, true)?;
        g.add_external_mults(batch.prep_mults);
        let rows = Self::att_rows(&batch);
        let p = register_params(g, &self.params);
        let encoded = self.encode_with(g, rows, &p);
        let mut x = g.reshape_rows(encoded, 2 * self.cfg.n_data);
        let head_base = self.cfg.encoder_layers * ENC_SLOTS;
        for l in 0..self.cfg.head_layers {
            let pre = g.matmul(x, p[head_base + 2 * l]);
            let pre = g.add_bias(pre, p[head_base + 2 * l + 1]);
            x = self.cfg.activation.apply(g, pre);
        }
        let out_base = head_base + 2 * self.cfg.head_layers;
        let out = g.matmul(x, p[out_base]);
        Ok(g.add_bias(out, p[out_base + 1]))
    }
}

impl Detector for AttDet {
    fn kind(&self) -> &'static str {
        "attdet"
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
        let logits = self.forward(g, models)?;
        Ok(g.quadratic_loss(logits, Rc::new(targets.clone())))
    }

    fn final_logits(&self, g: &mut Graph, models: &[RealLinearModel]) -> Result<NodeId> {
        self.forward(g, models)
    }
}
