//! Trainable detectors for the real-valued estimation model `y = H·d + w`.
//!
//! Three architectures share one interface:
//!
//! * [`DetNet`] — an unfolded iterative detector driven by `Hᵀy` and `HᵀH`
//!   (optionally Jacobi-preconditioned), with per-layer symbol estimates and
//!   a depth-weighted training loss;
//! * [`Fcnn`] — a plain feedforward network over a compressed input (upper
//!   triangle of `HᵀH` plus `Hᵀy`) with optional scaled skip connections;
//! * [`AttDet`] — a self-attention encoder over the rows of
//!   `P⁻¹[Hᵀy | HᵀH]` followed by a shallow feedforward head.
//!
//! All three emit per-component one-hot scores over the two-point amplitude
//! alphabet `{−ρ, +ρ}`; [`logits_to_estimates`] converts those scores into
//! the same [`SoftEstimate`] type the model-based equalizers produce, so the
//! downstream BER/decoding pipeline is shared. Every forward pass runs on
//! the counting autodiff graph, and the preparation cost (Gram matrix,
//! matched filter, preconditioner application) is added to the same counter,
//! so an instrumented forward reproduces the analytic complexity figures
//! exactly.

pub mod attdet;
pub mod detnet;
pub mod fcnn;

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::eq::SoftEstimate;
use crate::model::{jacobi_preconditioner, RealLinearModel};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Graph, NodeId, Tensor};
use crate::numerics::C64;
use crate::{Error, Result};

pub use attdet::{AttDet, AttDetConfig};
pub use detnet::{DetNet, DetNetConfig};
pub use fcnn::{Fcnn, FcnnConfig};

/// Floor applied to network scores before forming probability ratios.
pub const POSTERIOR_FLOOR: f64 = 1e-6;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Selu => g.selu(x),
        }
    }
}

/// Per-real-component amplitude alphabet, in score-block order.
pub fn component_symbols(rho: f64) -> [f64; 2] {
    [-rho, rho]
}

/// Matched-filter / Gram-matrix inputs for a batch, optionally scaled by the
/// inverse Gram diagonal (Jacobi preconditioner).
pub struct GramBatch {
    /// One row per sample: `P⁻¹Hᵀy` (or `Hᵀy` unpreconditioned), width `2N_d`.
    pub hty: Tensor,
    /// Per-sample `P⁻¹HᵀH` (or `HᵀH`), each `2N_d × 2N_d`.
    pub hth: Rc<Vec<Tensor>>,
    /// Exact preparation cost over the whole batch.
    pub prep_mults: u64,
}

/// Build [`GramBatch`] from real models. Preconditioning divides each row of
/// `[Hᵀy | HᵀH]` by the corresponding Gram diagonal entry; the reciprocal is
/// free under the multiplication account, the row scaling is not.
pub fn gram_batch(models: &[RealLinearModel], precondition: bool) -> Result<GramBatch> {
    assert!(!models.is_empty());
    let n = models[0].h.cols;
    let mut hty = Tensor::zeros(models.len(), n);
    let mut hth = Vec::with_capacity(models.len());
    let mut prep_mults = 0u64;
    for (b, model) in models.iter().enumerate() {
        assert_eq!(model.h.cols, n, "mixed model widths in one batch");
        let mut c = model.compress_full();
        prep_mults += c.mults;
        if precondition {
            let p = jacobi_preconditioner(&c.hth)?;
            for i in 0..n {
                c.hty[i] *= p[i];
                for j in 0..n {
                    let v = c.hth.get(i, j) * p[i];
                    c.hth.set(i, j, v);
                }
            }
            prep_mults += (n * (n + 1)) as u64;
        }
        hty.row_mut(b).copy_from_slice(&c.hty);
        hth.push(c.hth);
    }
    Ok(GramBatch {
        hty,
        hth: Rc::new(hth),
        prep_mults,
    })
}

/// Compressed feature vectors for the feedforward detector: the upper
/// triangle of `HᵀH` (column-stacked) followed by `Hᵀy`, per sample.
pub struct FeatureBatch {
    /// `batch × (2N_d² + 3N_d)`.
    pub features: Tensor,
    pub prep_mults: u64,
}

pub fn feature_batch(models: &[RealLinearModel]) -> FeatureBatch {
    assert!(!models.is_empty());
    let n = models[0].h.cols;
    let width = n * (n + 1) / 2 + n;
    let mut features = Tensor::zeros(models.len(), width);
    let mut prep_mults = 0u64;
    for (b, model) in models.iter().enumerate() {
        assert_eq!(model.h.cols, n, "mixed model widths in one batch");
        let c = model.compress_triangle();
        prep_mults += c.mults;
        let row = features.row_mut(b);
        let mut k = 0;
        for j in 0..n {
            for i in 0..=j {
                row[k] = c.hth.get(i, j);
                k += 1;
            }
        }
        row[k..].copy_from_slice(&c.hty);
    }
    FeatureBatch {
        features,
        prep_mults,
    }
}

/// One-hot training targets from transmitted real symbol vectors
/// (`batch × 2N_d`, entries `±ρ`): each component becomes the block
/// `[1,0]` for `−ρ` or `[0,1]` for `+ρ`.
pub fn onehot_targets(symbols: &Tensor) -> Tensor {
    let mut t = Tensor::zeros(symbols.rows, 2 * symbols.cols);
    for r in 0..symbols.rows {
        for c in 0..symbols.cols {
            let hot = if symbols.get(r, c) > 0.0 { 1 } else { 0 };
            t.set(r, 2 * c + hot, 1.0);
        }
    }
    t
}

/// Convert network score blocks into soft estimates compatible with the
/// model-based equalizers. Per component, raw scores `(s₋, s₊)` are floored
/// at zero and normalized to a probability `q₊`; the symbol estimate is the
/// posterior mean `ρ·(2q₊−1)` of the unclamped probability, while the LLR
/// clamps `q₊` into `[ε, 1−ε]` (ε = [`POSTERIOR_FLOOR`]) first, so its
/// magnitude never exceeds `ln((1−ε)/ε)`. A degenerate block (both scores
/// non-positive) decodes to an uninformative `q₊ = ½`.
///
/// Component `i < N_d` is the real part of symbol `i`; component `N_d + i`
/// is its imaginary part. LLRs interleave as `[Re₀, Im₀, Re₁, Im₁, …]`,
/// matching the equalizers' bit order.
pub fn logits_to_estimates(logits: &Tensor, n_data: usize, rho: f64) -> Vec<SoftEstimate> {
    assert_eq!(logits.cols, 4 * n_data, "expected two scores per component");
    let mut out = Vec::with_capacity(logits.rows);
    for r in 0..logits.rows {
        let row = logits.row(r);
        let mut comp_llr = vec![0.0; 2 * n_data];
        let mut comp_mean = vec![0.0; 2 * n_data];
        for c in 0..2 * n_data {
            let s0 = row[2 * c].max(0.0);
            let s1 = row[2 * c + 1].max(0.0);
            let sum = s0 + s1;
            let (q0, q1) = if sum > 0.0 {
                (s0 / sum, s1 / sum)
            } else {
                (0.5, 0.5)
            };
            // Clamping both posteriors (rather than deriving q0 as 1−q1c)
            // makes the saturated LLR hit ±ln((1−ε)/ε) exactly.
            let q0c = q0.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR);
            let q1c = q1.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR);
            comp_llr[c] = (q1c / q0c).ln();
            comp_mean[c] = rho * (q1 - q0);
        }
        let mut llr = Vec::with_capacity(2 * n_data);
        let mut symbols = Vec::with_capacity(n_data);
        for i in 0..n_data {
            llr.push(comp_llr[i]);
            llr.push(comp_llr[n_data + i]);
            symbols.push(C64::new(comp_mean[i], comp_mean[n_data + i]));
        }
        out.push(SoftEstimate { symbols, llr });
    }
    out
}

/// Common interface of the three trainable detectors.
pub trait Detector {
    /// Stable identifier used in checkpoints ("detnet", "fcnn", "attdet").
    fn kind(&self) -> &'static str;
    fn n_data(&self) -> usize;
    fn rho(&self) -> f64;
    fn params(&self) -> &[Rc<Tensor>];
    /// Replace all parameters (same shapes, same order).
    fn set_params(&mut self, params: Vec<Rc<Tensor>>);
    fn param_names(&self) -> Vec<String>;
    /// Architecture description for checkpoints.
    fn config_json(&self) -> serde_json::Value;
    /// Suggested base learning rate for this configuration.
    fn learning_rate(&self) -> f64;
    /// Training loss over a batch with known one-hot targets.
    fn build_loss(
        &self,
        g: &mut Graph,
        models: &[RealLinearModel],
        targets: &Tensor,
    ) -> Result<NodeId>;
    /// Final-layer score blocks for a batch.
    fn final_logits(&self, g: &mut Graph, models: &[RealLinearModel]) -> Result<NodeId>;
}

/// Run a detector in eval mode and convert its outputs to soft estimates.
pub fn detect(det: &dyn Detector, models: &[RealLinearModel]) -> Result<Vec<SoftEstimate>> {
    let mut g = Graph::new(false, 0);
    let logits = det.final_logits(&mut g, models)?;
    Ok(logits_to_estimates(
        g.value(logits),
        det.n_data(),
        det.rho(),
    ))
}

/// Exact real-multiplication count of one eval-mode detection (single
/// sample), input preparation included.
pub fn count_forward_mults(det: &dyn Detector, model: &RealLinearModel) -> Result<u64> {
    let mut g = Graph::new(false, 0);
    let _ = det.final_logits(&mut g, std::slice::from_ref(model))?;
    Ok(g.mults())
}

/// Snapshot a detector's architecture and parameters as a checkpoint
/// skeleton; the caller fills in optimizer state and training metadata.
pub fn checkpoint_of(det: &dyn Detector) -> Checkpoint {
    Checkpoint::new(det.config_json(), &det.param_names(), det.params())
}

/// Load any detector from a checkpoint file, restoring its parameters.
/// Returns the checkpoint alongside so training can resume from its metadata.
pub fn load_detector(path: &Path) -> Result<(Box<dyn Detector>, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let det = detector_from_checkpoint(&ck, &path.display().to_string())?;
    Ok((det, ck))
}

/// Rebuild a detector from an in-memory checkpoint. Parameters hold shared
/// `Rc` tensors, so a loaded detector is confined to one thread; workers that
/// need private copies reconstruct from the (plain-data) checkpoint instead.
/// `origin` names the checkpoint in error messages.
pub fn detector_from_checkpoint(ck: &Checkpoint, origin: &str) -> Result<Box<dyn Detector>> {
    let kind = ck.detector["kind"]
        .as_str()
        .ok_or_else(|| Error::InvalidConfig(format!("{origin}: checkpoint has no detector kind")))?;
    let config = ck.detector["config"].clone();
    let mut det: Box<dyn Detector> = match kind {
        "detnet" => {
            let cfg: DetNetConfig = serde_json::from_value(config)
                .map_err(|e| Error::Serde(e.to_string()))?;
            Box::new(DetNet::new(cfg, 0))
        }
        "fcnn" => {
            let cfg: FcnnConfig = serde_json::from_value(config)
                .map_err(|e| Error::Serde(e.to_string()))?;
            Box::new(Fcnn::new(cfg, 0))
        }
        "attdet" => {
            let cfg: AttDetConfig = serde_json::from_value(config)
                .map_err(|e| Error::Serde(e.to_string()))?;
            Box::new(AttDet::new(cfg, 0))
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown detector kind `{other}` in {origin}"
            )))
        }
    };
    let expect_names = det.param_names();
    let got_names = ck.param_names();
    if expect_names != got_names {
        return Err(Error::InvalidConfig(format!(
            "{origin}: checkpoint parameters do not match the declared architecture \
             (expected {} tensors, found {})",
            expect_names.len(),
            got_names.len()
        )));
    }
    let params = ck.shared_params();
    for (p, fresh) in params.iter().zip(det.params()) {
        if (p.rows, p.cols) != (fresh.rows, fresh.cols) {
            return Err(Error::InvalidConfig(format!(
                "{origin}: checkpoint tensor shape {}×{} does not match architecture {}×{}",
                p.rows,
                p.cols,
                fresh.rows,
                fresh.cols
            )));
        }
    }
    det.set_params(params);
    Ok(det)
}

/// Register all parameters of a detector on a graph, in index order.
pub(crate) fn register_params(g: &mut Graph, params: &[Rc<Tensor>]) -> Vec<NodeId> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(i, Rc::clone(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eq::LLR_MAX;
    use crate::model::{system_i, RealLinearModel, ReducedObservation, UwModel};
    use crate::numerics::CMatrix;
    use crate::rng::{random_bits, substream, StreamDomain};

    /// A small batch of normalized real models from the actual transceiver
    /// chain, shared by the detector tests.
    pub(crate) fn test_models(count: usize, seed: u64) -> (Vec<RealLinearModel>, Vec<Tensor>) {
        let cfg = system_i();
        let model =
            UwModel::new(cfg, &crate::model::AssignmentSource::Systematic).unwrap();
        let profile = cfg.channel_profile();
        let mut models = Vec::new();
        let mut symbols = Vec::new();
        for i in 0..count {
            let mut ch_rng = substream(seed, StreamDomain::Channel, i as u64);
            let channel = profile.draw(&mut ch_rng);
            let bits = random_bits(
                &mut substream(seed, StreamDomain::Data, i as u64),
                2 * cfg.n_data,
            );
            let d = cfg.qpsk_map(&bits);
            let x = model.modulate(&d);
            let mut noise_rng = substream(seed, StreamDomain::Noise, i as u64);
            let sigma_n2 = 0.02;
            let r = channel.transmit(&x, sigma_n2, &mut noise_rng);
            let obs: ReducedObservation = model.receive_reduce(&r, &channel);
            let mut rm = RealLinearModel::from_reduced(&obs, sigma_n2, &cfg);
            rm.normalize();
            let mut sym = Tensor::zeros(1, 2 * cfg.n_data);
            for (j, s) in d.iter().enumerate() {
                sym.set(0, j, s.re);
                sym.set(0, cfg.n_data + j, s.im);
            }
            models.push(rm);
            symbols.push(sym);
        }
        (models, symbols)
    }

    pub(crate) fn stack_rows(rows: &[Tensor]) -> Tensor {
        let cols = rows[0].cols;
        let mut out = Tensor::zeros(rows.len(), cols);
        for (r, t) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(0));
        }
        out
    }

    #[test]
    fn onehot_targets_layout() {
        let mut s = Tensor::zeros(2, 4);
        s.row_mut(0).copy_from_slice(&[0.7, -0.7, 0.7, 0.7]);
        s.row_mut(1).copy_from_slice(&[-0.7, -0.7, 0.7, -0.7]);
        let t = onehot_targets(&s);
        assert_eq!(t.row(0), &[0., 1., 1., 0., 0., 1., 0., 1.]);
        assert_eq!(t.row(1), &[1., 0., 1., 0., 0., 1., 1., 0.]);
    }

    #[test]
    fn score_llrs_match_posterior_mean_llrs() {
        // Converting normalized scores (p₋, p₊) to an LLR directly must agree
        // with mapping their posterior mean x = ρ(p₊−p₋) through
        // ln((ρ+x)/(ρ−x)) — two routes to the same quantity.
        let rho = 1.0 / 2f64.sqrt();
        let mut rng = substream(5, StreamDomain::Scratch, 1);
        use rand::Rng;
        for _ in 0..200 {
            let p1: f64 = rng.gen_range(0.02..0.98);
            let p0 = 1.0 - p1;
            let mut logits = Tensor::zeros(1, 4);
            logits.row_mut(0).copy_from_slice(&[p0, p1, 0.5, 0.5]);
            let est = logits_to_estimates(&logits, 1, rho);
            let direct = (p1 / p0).ln();
            let x = rho * (p1 - p0);
            let via_mean = ((rho + x) / (rho - x)).ln();
            assert!((est[0].llr[0] - direct).abs() < 1e-9);
            assert!((direct - via_mean).abs() < 1e-9);
            assert!((est[0].symbols[0].re - x).abs() < 1e-12);
            assert!(est[0].llr[1].abs() < 1e-12);
        }
    }

    #[test]
    fn score_llr_clamp_and_round_trip() {
        let rho = 0.7;
        let cap = ((1.0 - POSTERIOR_FLOOR) / POSTERIOR_FLOOR).ln();
        assert!(cap < LLR_MAX);
        // decoding a one-hot block recovers the symbol exactly and produces
        // the capped LLR ±ln((1−ε)/ε)
        let mut onehot = Tensor::zeros(1, 4);
        onehot.row_mut(0).copy_from_slice(&[0.0, 1.0, 1.0, 0.0]);
        let est = logits_to_estimates(&onehot, 1, rho);
        assert_eq!(est[0].symbols[0].re, rho);
        assert_eq!(est[0].symbols[0].im, -rho);
        assert!((est[0].llr[0] - cap).abs() < 1e-12);
        assert!((est[0].llr[1] + cap).abs() < 1e-12);
        // negative scores floor at zero; a fully degenerate block is
        // uninformative
        let mut deg = Tensor::zeros(1, 4);
        deg.row_mut(0).copy_from_slice(&[-3.0, -1.0, -2.0, 5.0]);
        let est = logits_to_estimates(&deg, 1, rho);
        assert_eq!(est[0].llr[0], 0.0);
        assert_eq!(est[0].symbols[0].re, 0.0);
        assert!((est[0].llr[1] - cap).abs() < 1e-12);
    }

    #[test]
    fn llr_interleaving_is_per_symbol() {
        // component i is Re(symbol i), component N_d+i is Im(symbol i)
        let rho = 1.0;
        let mut logits = Tensor::zeros(1, 8); // n_data = 2
        logits
            .row_mut(0)
            .copy_from_slice(&[1., 0., 0., 1., 0.3, 0.7, 0.9, 0.1]);
        let est = logits_to_estimates(&logits, 2, rho);
        // llr = [Re0, Im0, Re1, Im1] = [blocks 0, 2, 1, 3]
        assert!(est[0].llr[0] < 0.0); // block 0: p0=1
        assert!(est[0].llr[1] > 0.0); // block 2: p1=0.7
        assert!(est[0].llr[2] > 0.0); // block 1: p1=1
        assert!(est[0].llr[3] < 0.0); // block 3: p0=0.9
        let bits = est[0].hard_bits();
        assert_eq!(bits, vec![0, 1, 1, 0]);
    }

    #[test]
    fn gram_batch_preconditioning_unit_diagonal() {
        let (models, _) = test_models(3, 11);
        let plain = gram_batch(&models, false).unwrap();
        let pre = gram_batch(&models, true).unwrap();
        let n = models[0].h.cols;
        for b in 0..models.len() {
            for i in 0..n {
                assert!((pre.hth[b].get(i, i) - 1.0).abs() < 1e-12);
                let d = plain.hth[b].get(i, i);
                assert!((pre.hty.get(b, i) - plain.hty.get(b, i) / d).abs() < 1e-12);
            }
        }
        // scaling cost: n(n+1) per sample on top of the plain compression
        let m = models[0].h.rows;
        let full = (n * n * m + n * m) as u64;
        assert_eq!(plain.prep_mults, 3 * full);
        assert_eq!(pre.prep_mults, 3 * (full + (n * (n + 1)) as u64));
    }

    #[test]
    fn feature_batch_layout_and_cost() {
        let (models, _) = test_models(2, 12);
        let n = models[0].h.cols;
        let m = models[0].h.rows;
        let fb = feature_batch(&models);
        assert_eq!(fb.features.cols, n * (n + 1) / 2 + n);
        let c = models[0].compress_full();
        // spot-check the column-stacked upper triangle: entries (0,0), (0,1), (1,1)
        assert!((fb.features.get(0, 0) - c.hth.get(0, 0)).abs() < 1e-12);
        assert!((fb.features.get(0, 1) - c.hth.get(0, 1)).abs() < 1e-12);
        assert!((fb.features.get(0, 2) - c.hth.get(1, 1)).abs() < 1e-12);
        // tail is Hᵀy
        let tri = n * (n + 1) / 2;
        for i in 0..n {
            assert!((fb.features.get(0, tri + i) - c.hty[i]).abs() < 1e-12);
        }
        let per = (tri * m + n * m) as u64;
        assert_eq!(fb.prep_mults, 2 * per);
    }

    #[test]
    fn identity_preconditioner_is_bit_exact_noop() {
        // when the Gram diagonal is exactly 1, preconditioning on/off must
        // produce bit-identical detector inputs (and therefore outputs)
        let n = 8usize;
        let mut h = Tensor::zeros(12, n);
        for i in 0..n {
            h.set(i, i, 1.0); // orthonormal columns: HᵀH = I
        }
        let model = RealLinearModel {
            y: (0..12).map(|i| 0.1 * i as f64 - 0.5).collect(),
            h,
            noise_var: 0.05,
            rho: 1.0 / 2f64.sqrt(),
            n_dft: 12,
            normalized: true,
        };
        let plain = gram_batch(std::slice::from_ref(&model), false).unwrap();
        let pre = gram_batch(std::slice::from_ref(&model), true).unwrap();
        assert_eq!(plain.hty.data, pre.hty.data);
        assert_eq!(plain.hth[0].data, pre.hth[0].data);
        // the scaling work is still accounted for
        assert_eq!(pre.prep_mults - plain.prep_mults, (n * (n + 1)) as u64);
    }

    #[test]
    fn batch_width_mismatch_is_rejected() {
        let (mut models, _) = test_models(2, 13);
        models[1].h = crate::numerics::real_stack(&CMatrix::identity(3));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            gram_batch(&models, false).unwrap()
        }));
        assert!(result.is_err());
    }
}
