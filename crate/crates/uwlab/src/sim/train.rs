//! Two-phase detector training: a noise-free warm-up at constant learning
//! rate, then the main phase with exponentially decayed learning rate,
//! validation-loss early stopping, and best-epoch checkpointing. Every
//! random choice comes from a seeded substream, so a `(config, seed)` pair
//! reproduces the checkpoint bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::det::{checkpoint_of, onehot_targets, Detector};
use crate::model::UwModel;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::optim::{decayed_learning_rate, Adam, EarlyStopper};
use crate::nn::Graph;
use crate::rng::{substream, StreamDomain};
use crate::sim::dataset::{build_training_set, OperatingPoint, TrainingSet, TrainingSetSpec};
use crate::sim::write_csv;
use crate::{Error, Result};

/// Fixed seed generating the held-out validation channels. Keeping it
/// constant (and distinct from any training seed) makes the validation set
/// a stable, regenerable reference rather than shipped data.
pub const VALIDATION_SEED: u64 = 424243;

/// Knobs of the optimization loop (the data recipe lives in
/// [`TrainingSetSpec`]). Deserialization fills missing fields from
/// [`TrainConfig::default`], so config files only state what they change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Main-phase epochs.
    pub epochs: usize,
    /// Mini-batch size.
    pub batch: usize,
    /// Final learning rate as a fraction of the base rate.
    pub lr_final_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Warm-up epochs on the noise-free set (constant learning rate).
    pub pretrain_epochs: usize,
    /// Base learning rate; `None` uses the detector's preset.
    pub learning_rate: Option<f64>,
    /// Scale each sample so noise variances become channel-independent
    /// (the detectors' standard pre-processing; disable for ablations).
    pub normalize: bool,
    /// Held-out channels for validation.
    pub validation_channels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch: 1024,
            lr_final_fraction: 0.05,
            patience: 5,
            pretrain_epochs: 10,
            learning_rate: None,
            normalize: true,
            validation_channels: 1000,
            seed: 0,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    /// Epoch index within its phase.
    pub epoch: usize,
    /// `"pretrain"` or `"main"`.
    pub phase: &'static str,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation-epoch snapshot, training metadata filled in.
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochStats>,
    /// Main-phase epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Validation recipe: `validation_channels` fresh channels under the
/// training operating-point policy, from the fixed [`VALIDATION_SEED`].
fn validation_set(train_set: &TrainingSet, channels: usize) -> Result<TrainingSet> {
    let spec = TrainingSetSpec {
        channels,
        bad_fraction: 0.0,
        oversample: 1,
        operating_point: train_set.spec.operating_point,
        pretrain_channels: 0,
        code_rate: train_set.spec.code_rate,
    };
    build_training_set(&train_set.system, &spec, VALIDATION_SEED)
}

/// Mean loss over a set in eval mode, batched to bound memory.
fn evaluate_loss(
    det: &dyn Detector,
    model: &UwModel,
    set: &TrainingSet,
    batch: usize,
    normalize: bool,
) -> Result<f64> {
    let n = set.samples.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let positions: Vec<usize> = (start..end).collect();
        let mut b = set.materialize(model, &positions)?;
        if normalize {
            for m in &mut b.models {
                m.normalize();
            }
        }
        let targets = onehot_targets(&b.symbols);
        let mut g = Graph::new(false, 0);
        let loss = det.build_loss(&mut g, &b.models, &targets)?;
        total += g.value(loss).get(0, 0) * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// One optimization pass over `positions` (already shuffled), returning the
/// sample-weighted mean batch loss.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    det: &mut dyn Detector,
    model: &UwModel,
    set: &TrainingSet,
    pretrain: bool,
    positions: &[usize],
    cfg: &TrainConfig,
    adam: &mut Adam,
    lr: f64,
    phase_epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (batch_idx, chunk) in positions.chunks(cfg.batch).enumerate() {
        let mut b = if pretrain {
            set.materialize_pretrain(model, chunk)?
        } else {
            set.materialize(model, chunk)?
        };
        if cfg.normalize {
            for m in &mut b.models {
                m.normalize();
            }
        }
        let targets = onehot_targets(&b.symbols);
        // Per-batch dropout seed, decorrelated across epochs and batches.
        let dropout_key = ((pretrain as u64) << 48)
            | ((phase_epoch as u64) << 24)
            | batch_idx as u64;
        let gseed = substream(cfg.seed, StreamDomain::Dropout, dropout_key).gen::<u64>();
        let mut g = Graph::new(true, gseed);
        let loss_node = det.build_loss(&mut g, &b.models, &targets)?;
        let loss = g.value(loss_node).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "loss {loss} in batch {batch_idx} (epoch {phase_epoch}, lr {lr:.3e})"
            )));
        }
        let grads = g.backward(loss_node, det.params().len());
        let mut params = det.params().to_vec();
        adam.step(&mut params, &grads, lr);
        det.set_params(params);
        total += loss * chunk.len() as f64;
    }
    Ok(total / positions.len() as f64)
}

/// Train a detector on a built set. Runs the noise-free warm-up, then the
/// main phase; keeps the parameters of the epoch with the lowest validation
/// loss and restores them into `det` before returning.
pub fn train(
    det: &mut dyn Detector,
    model: &UwModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if det.n_data() != model.cfg.n_data {
        return Err(Error::InvalidConfig(format!(
            "detector is sized for N_d={}, system has N_d={}",
            det.n_data(),
            model.cfg.n_data
        )));
    }
    if set.seed == VALIDATION_SEED {
        return Err(Error::InvalidConfig(format!(
            "training seed {VALIDATION_SEED} collides with the fixed validation seed"
        )));
    }
    if cfg.validation_channels == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig(
            "validation_channels and epochs must be positive".into(),
        ));
    }
    let base_lr = cfg.learning_rate.unwrap_or_else(|| det.learning_rate());
    let val_set = validation_set(set, cfg.validation_channels)?;
    let mut adam = Adam::new(det.params());
    let mut curve = Vec::new();

    // Noise-free warm-up at constant learning rate.
    let pretrain_epochs = if set.pretrain.is_empty() {
        0
    } else {
        cfg.pretrain_epochs
    };
    for epoch in 0..pretrain_epochs {
        let mut positions: Vec<usize> = (0..set.pretrain.len()).collect();
        positions.shuffle(&mut substream(
            cfg.seed,
            StreamDomain::Shuffle,
            (1u64 << 32) + epoch as u64,
        ));
        let train_loss = run_epoch(
            det, model, set, true, &positions, cfg, &mut adam, base_lr, epoch,
        )?;
        let val_loss = evaluate_loss(det, model, &val_set, cfg.batch, cfg.normalize)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "validation loss {val_loss} after warm-up epoch {epoch}"
            )));
        }
        curve.push(EpochStats {
            epoch,
            phase: "pretrain",
            train_loss,
            val_loss,
            lr: base_lr,
        });
    }

    // Main phase: decayed learning rate, early stopping, best-epoch keep.
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = det.params().to_vec();
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let lr = decayed_learning_rate(base_lr, epoch, cfg.epochs, cfg.lr_final_fraction);
        let mut positions: Vec<usize> = (0..set.samples.len()).collect();
        positions.shuffle(&mut substream(
            cfg.seed,
            StreamDomain::Shuffle,
            epoch as u64,
        ));
        let train_loss = run_epoch(
            det, model, set, false, &positions, cfg, &mut adam, lr, epoch,
        )?;
        let val_loss = evaluate_loss(det, model, &val_set, cfg.batch, cfg.normalize)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "validation loss {val_loss} after epoch {epoch} (lr {lr:.3e})"
            )));
        }
        curve.push(EpochStats {
            epoch,
            phase: "main",
            train_loss,
            val_loss,
            lr,
        });
        let stop = stopper.observe(val_loss);
        if stopper.improved() {
            best_params = det.params().to_vec();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    det.set_params(best_params);
    let mut ck = checkpoint_of(det);
    ck.training = serde_json::to_value(cfg)
        .map_err(|e| Error::InvalidConfig(format!("training config encode: {e}")))?;
    ck.seed = cfg.seed;
    ck.epochs_completed = curve.iter().filter(|s| s.phase == "main").count();
    ck.best_val_loss = Some(stopper.best_loss);
    Ok(TrainOutcome {
        checkpoint: ck,
        curve,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_loss,
        stopped_early,
    })
}

/// Write the training curve as CSV (metadata header included).
pub fn write_curve_csv(
    path: &Path,
    curve: &[EpochStats],
    config_json: &str,
    seed: u64,
) -> Result<()> {
    let columns = ["epoch", "phase", "train_loss", "val_loss", "lr"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|s| {
            vec![
                s.epoch.to_string(),
                s.phase.to_string(),
                format!("{:.10e}", s.train_loss),
                format!("{:.10e}", s.val_loss),
                format!("{:.6e}", s.lr),
            ]
        })
        .collect();
    write_csv(path, config_json, seed, &columns, &rows)
}

/// Convenience preset: scaled-down spec for quick experiments and tests.
pub fn scaled_spec(operating_point: OperatingPoint, channels: usize) -> TrainingSetSpec {
    TrainingSetSpec {
        channels,
        bad_fraction: 0.10,
        oversample: 50,
        operating_point,
        pretrain_channels: (channels / 6).max(1),
        code_rate: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det::detnet::{DetNet, DetNetConfig};
    use crate::model::{system_i, AssignmentSource};

    fn tiny_detnet() -> DetNet {
        DetNet::new(
            DetNetConfig {
                n_data: 8,
                layers: 2,
                hidden: 16,
                memory: 8,
                relax: 0.1,
                precondition: true,
                rho: std::f64::consts::FRAC_1_SQRT_2,
                learning_rate: 1e-3,
            },
            5,
        )
    }

    fn tiny_setup() -> (UwModel, TrainingSet, TrainConfig) {
        let cfg = system_i();
        let model = UwModel::new(cfg, &AssignmentSource::Systematic).unwrap();
        let spec = TrainingSetSpec {
            channels: 48,
            bad_fraction: 0.25,
            oversample: 10,
            operating_point: OperatingPoint::UniformDbLinear {
                lo_db: 9.0,
                hi_db: 18.0,
            },
            pretrain_channels: 8,
            code_rate: 1.0,
        };
        let set = build_training_set(&cfg, &spec, 31).unwrap();
        let tc = TrainConfig {
            epochs: 4,
            batch: 16,
            pretrain_epochs: 2,
            validation_channels: 24,
            seed: 7,
            ..TrainConfig::default()
        };
        (model, set, tc)
    }

    #[test]
    fn same_seed_trains_bit_identically_and_loss_improves() {
        let (model, set, tc) = tiny_setup();
        let mut a = tiny_detnet();
        let out_a = train(&mut a, &model, &set, &tc).unwrap();
        let mut b = tiny_detnet();
        let out_b = train(&mut b, &model, &set, &tc).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data, pb.data);
        }
        assert_eq!(out_a.curve.len(), out_b.curve.len());
        for (ra, rb) in out_a.curve.iter().zip(&out_b.curve) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
        }
        // training actually helps on this tiny run
        let first = out_a.curve.first().unwrap().train_loss;
        let last_main = out_a
            .curve
            .iter()
            .rev()
            .find(|s| s.phase == "main")
            .unwrap();
        assert!(last_main.train_loss < first);
        // checkpoint holds exactly the restored best-epoch parameters
        assert_checkpoint_params_match(&out_a.checkpoint, a.params());
        assert_eq!(
            out_a.best_val_loss,
            out_a
                .curve
                .iter()
                .filter(|s| s.phase == "main")
                .map(|s| s.val_loss)
                .fold(f64::INFINITY, f64::min)
        );
    }

    fn assert_checkpoint_params_match(
        ck: &Checkpoint,
        params: &[std::rc::Rc<crate::nn::Tensor>],
    ) {
        assert_eq!(ck.params.len(), params.len());
        for (nt, p) in ck.params.iter().zip(params) {
            assert_eq!(nt.tensor.data, p.data);
        }
    }

    #[test]
    fn zero_learning_rate_triggers_early_stop_after_patience() {
        let (model, set, mut tc) = tiny_setup();
        tc.learning_rate = Some(0.0);
        tc.patience = 2;
        tc.epochs = 10;
        tc.pretrain_epochs = 0;
        let mut det = tiny_detnet();
        let out = train(&mut det, &model, &set, &tc).unwrap();
        assert!(out.stopped_early);
        // first epoch sets the best, two flat epochs exhaust the patience
        assert_eq!(out.curve.len(), 3);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn pretrain_rows_use_constant_rate_and_main_rows_decay() {
        let (model, set, tc) = tiny_setup();
        let mut det = tiny_detnet();
        let out = train(&mut det, &model, &set, &tc).unwrap();
        let base = 1e-3;
        for row in out.curve.iter().filter(|s| s.phase == "pretrain") {
            assert_eq!(row.lr, base);
        }
        let main_lr: Vec<f64> = out
            .curve
            .iter()
            .filter(|s| s.phase == "main")
            .map(|s| s.lr)
            .collect();
        assert_eq!(main_lr[0], base);
        assert!(main_lr.windows(2).all(|w| w[1] < w[0]));
        let floor = base * tc.lr_final_fraction;
        assert!((main_lr.last().unwrap() - floor).abs() < 1e-12);
    }

    #[test]
    fn exploding_rate_reports_divergence() {
        let (model, set, mut tc) = tiny_setup();
        // The detector's bounded output keeps moderate blow-ups finite, so
        // the rate must be large enough to overflow the forward products.
        tc.learning_rate = Some(1e200);
        tc.pretrain_epochs = 0;
        let mut det = tiny_detnet();
        match train(&mut det, &model, &set, &tc) {
            Err(Error::Diverged(msg)) => {
                assert!(msg.contains("loss"), "diagnostic: {msg}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_seed_equal_to_validation_seed_is_rejected() {
        let (model, mut set, tc) = tiny_setup();
        set.seed = VALIDATION_SEED;
        let mut det = tiny_detnet();
        assert!(train(&mut det, &model, &set, &tc).is_err());
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let (model, set, tc) = tiny_setup();
        let mut det = tiny_detnet();
        let out = train(&mut det, &model, &set, &tc).unwrap();
        let dir = std::env::temp_dir().join("uwlab_train_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        write_curve_csv(&path, &out.curve, "{}", tc.seed).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash="));
        assert!(text.contains("epoch,phase,train_loss,val_loss,lr"));
        assert_eq!(
            text.lines().filter(|l| !l.starts_with('#')).count(),
            1 + out.curve.len()
        );
    }
}
