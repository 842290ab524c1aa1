//! Monte-Carlo bit-error-rate sweeps over an `E_b/N_0` grid.
//!
//! A sweep point is measured over independent channel realizations
//! ("bursts"); the channel is held fixed while a burst of vectors is sent
//! over it. All equalizers in a run see exactly the same channels, payloads,
//! and noise, because the random draws are keyed by `(seed, point, burst)`
//! and never by the equalizer list or the thread schedule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelProfile;
use crate::det::{detect, detector_from_checkpoint, Detector};
use crate::eq::{
    DecisionFeedbackEqualizer, ExactEnumeration, LinearMmseEqualizer, SoftEstimate,
};
use crate::fec::{self, conv_encode, viterbi_decode, TAIL_BITS};
use crate::model::{AssignmentSource, RealLinearModel, SystemConfig, UwModel};
use crate::nn::checkpoint::Checkpoint;
use crate::rng::{random_bits, substream, StreamDomain};
use crate::sim::{
    load_neural_checkpoint, point_burst_key, transmit_vector, worker_pool, write_csv,
    EqualizerKind, SymbolObservation,
};
use crate::{Error, Result};

/// One bit-error-rate experiment: which system, which estimators, which
/// noise levels, and how much Monte-Carlo effort per level. The effort
/// fields deserialize with the [`new`] defaults (500 realizations × 200
/// vectors, uncoded) so config files may omit them.
///
/// [`new`]: SweepConfig::new
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub system: SystemConfig,
    /// Estimators to compare; each needs a distinct CSV column.
    pub equalizers: Vec<EqualizerKind>,
    /// Per-bit SNR grid, in dB.
    pub ebn0_db: Vec<f64>,
    /// Independent channel realizations per grid point.
    #[serde(default = "default_bursts")]
    pub bursts: usize,
    /// Vectors sent over each realization.
    #[serde(default = "default_symbols_per_burst")]
    pub symbols_per_burst: usize,
    /// Run the payload through the rate-1/2 convolutional code and count
    /// errors on the decoded message instead of the raw bits.
    #[serde(default)]
    pub coded: bool,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint files for the trainable detectors, keyed by equalizer
    /// name (`"detnet"`, `"fcnn"`, `"attdet"`).
    #[serde(default)]
    pub checkpoints: BTreeMap<String, PathBuf>,
}

fn default_bursts() -> usize {
    500
}
fn default_symbols_per_burst() -> usize {
    200
}

impl SweepConfig {
    /// A sweep with the default Monte-Carlo effort: 500 realizations per
    /// point, 200 vectors per realization.
    pub fn new(
        system: SystemConfig,
        equalizers: Vec<EqualizerKind>,
        ebn0_db: Vec<f64>,
        seed: u64,
    ) -> Self {
        SweepConfig {
            system,
            equalizers,
            ebn0_db,
            bursts: default_bursts(),
            symbols_per_burst: default_symbols_per_burst(),
            coded: false,
            seed,
            checkpoints: BTreeMap::new(),
        }
    }

    /// Bits compared per burst: payload bits when uncoded, decoded message
    /// bits when coded.
    pub fn bits_per_burst(&self) -> usize {
        let raw = self.symbols_per_burst * 2 * self.system.n_data;
        if self.coded {
            raw / 2 - TAIL_BITS
        } else {
            raw
        }
    }
}

/// Measured error rates at one grid point. Vectors are aligned with the
/// sweep's equalizer list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointResult {
    pub ebn0_db: f64,
    /// Error rate over all bursts.
    pub ber: Vec<f64>,
    /// Standard error of the per-burst rates: `std / sqrt(bursts)`; zero
    /// when a single burst gives no spread to estimate.
    pub se: Vec<f64>,
}

/// A finished sweep: the configuration that produced it plus one result per
/// grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub points: Vec<PointResult>,
}

impl SweepResult {
    /// Result column for one equalizer, or `None` if it was not in the run.
    pub fn ber_curve(&self, eq: EqualizerKind) -> Option<Vec<(f64, f64)>> {
        let idx = self.config.equalizers.iter().position(|&e| e == eq)?;
        Some(
            self.points
                .iter()
                .map(|p| (p.ebn0_db, p.ber[idx]))
                .collect(),
        )
    }

    /// Write `EbN0_dB, ber_<eq>, se_<eq>, …` with the standard metadata
    /// header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let config_json =
            serde_json::to_string(&self.config).map_err(|e| Error::Serde(e.to_string()))?;
        let mut columns = vec!["EbN0_dB".to_string()];
        for eq in &self.config.equalizers {
            columns.push(format!("ber_{}", eq.name()));
            columns.push(format!("se_{}", eq.name()));
        }
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                let mut row = vec![format!("{}", p.ebn0_db)];
                for i in 0..self.config.equalizers.len() {
                    row.push(format!("{:.6e}", p.ber[i]));
                    row.push(format!("{:.6e}", p.se[i]));
                }
                row
            })
            .collect();
        write_csv(path, &config_json, self.config.seed, &columns, &rows)
    }
}

/// Checkpoints loaded for the trainable detectors in a sweep, aligned with
/// the equalizer list; model-based estimators hold `None`.
struct LoadedDetectors {
    checkpoints: Vec<Option<Checkpoint>>,
    /// Whether each detector expects channel-normalized inputs, read from
    /// the training metadata stored in its checkpoint.
    normalize: Vec<bool>,
}

fn load_checkpoints(cfg: &SweepConfig) -> Result<LoadedDetectors> {
    let mut checkpoints = Vec::with_capacity(cfg.equalizers.len());
    let mut normalize = Vec::with_capacity(cfg.equalizers.len());
    for eq in &cfg.equalizers {
        if !eq.is_neural() {
            checkpoints.push(None);
            normalize.push(false);
            continue;
        }
        let loaded = load_neural_checkpoint(*eq, &cfg.checkpoints, &cfg.system)?;
        normalize.push(loaded.normalize);
        checkpoints.push(Some(loaded.checkpoint));
    }
    Ok(LoadedDetectors {
        checkpoints,
        normalize,
    })
}

fn validate(cfg: &SweepConfig) -> Result<()> {
    if cfg.equalizers.is_empty() {
        return Err(Error::InvalidConfig("no equalizers requested".into()));
    }
    for (i, eq) in cfg.equalizers.iter().enumerate() {
        if cfg.equalizers[..i].contains(eq) {
            return Err(Error::InvalidConfig(format!(
                "equalizer `{}` listed twice",
                eq.name()
            )));
        }
    }
    if cfg.ebn0_db.is_empty() {
        return Err(Error::InvalidConfig("empty E_b/N_0 grid".into()));
    }
    if cfg.bursts == 0 || cfg.symbols_per_burst == 0 {
        return Err(Error::InvalidConfig(
            "bursts and symbols_per_burst must be positive".into(),
        ));
    }
    if cfg.coded && cfg.symbols_per_burst * cfg.system.n_data <= TAIL_BITS {
        return Err(Error::InvalidConfig(format!(
            "coded burst too short: {} symbols of {} data symbols leave no \
             room for the {}-bit code tail",
            cfg.symbols_per_burst, cfg.system.n_data, TAIL_BITS
        )));
    }
    Ok(())
}

/// Run a full sweep. Work is distributed over `(point, burst)` items; the
/// result is independent of the worker count because every random draw is
/// keyed by the item, not the schedule.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    validate(cfg)?;
    let model = UwModel::new(cfg.system, &AssignmentSource::Systematic)?;
    let profile = cfg.system.channel_profile();
    let loaded = load_checkpoints(cfg)?;

    let items: Vec<(usize, usize)> = (0..cfg.ebn0_db.len())
        .flat_map(|p| (0..cfg.bursts).map(move |b| (p, b)))
        .collect();
    let pool = worker_pool()?;
    let per_burst: Vec<Vec<f64>> = pool.install(|| {
        items
            .par_iter()
            .map_init(
                || rebuild_detectors(&loaded.checkpoints),
                |dets, &(point, burst)| {
                    run_burst(&model, &profile, cfg, dets, &loaded.normalize, point, burst)
                },
            )
            .collect::<Result<_>>()
    })?;

    let n_eq = cfg.equalizers.len();
    let points = cfg
        .ebn0_db
        .iter()
        .enumerate()
        .map(|(p, &db)| {
            let rows = &per_burst[p * cfg.bursts..(p + 1) * cfg.bursts];
            let mut ber = vec![0.0; n_eq];
            let mut se = vec![0.0; n_eq];
            for (e, (b, s)) in ber.iter_mut().zip(se.iter_mut()).enumerate() {
                let rates: Vec<f64> = rows.iter().map(|r| r[e]).collect();
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                *b = mean;
                if rates.len() > 1 {
                    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                        / (rates.len() - 1) as f64;
                    *s = (var / rates.len() as f64).sqrt();
                }
            }
            PointResult {
                ebn0_db: db,
                ber,
                se,
            }
        })
        .collect();

    Ok(SweepResult {
        config: cfg.clone(),
        points,
    })
}

/// Per-worker detector instances. Parameters are `Rc`-shared inside one
/// detector, so instances cannot cross threads; each worker rebuilds its own
/// from the plain-data checkpoints (validated once up front).
fn rebuild_detectors(checkpoints: &[Option<Checkpoint>]) -> Vec<Option<Box<dyn Detector>>> {
    checkpoints
        .iter()
        .map(|ck| {
            ck.as_ref().map(|c| {
                detector_from_checkpoint(c, "in-memory checkpoint")
                    .expect("checkpoint was validated at sweep start")
            })
        })
        .collect()
}

/// Measure one burst: fixed channel, `symbols_per_burst` vectors, every
/// requested equalizer. Returns the per-equalizer error rate.
fn run_burst(
    model: &UwModel,
    profile: &ChannelProfile,
    cfg: &SweepConfig,
    dets: &[Option<Box<dyn Detector>>],
    normalize: &[bool],
    point: usize,
    burst: usize,
) -> Result<Vec<f64>> {
    let key = point_burst_key(point, burst);
    let channel = profile.draw(&mut substream(cfg.seed, StreamDomain::Channel, key));
    let mut data_rng = substream(cfg.seed, StreamDomain::Data, key);
    let mut noise_rng = substream(cfg.seed, StreamDomain::Noise, key);

    let code_rate = if cfg.coded { fec::RATE } else { 1.0 };
    let hp = model.reduced_channel(&channel);
    let sigma_n2 = model.noise_variance(&hp, cfg.ebn0_db[point], code_rate);
    let bits_per_vec = 2 * model.cfg.n_data;

    // Payload for the whole burst. When coded, one message fills the burst
    // exactly: the encoder emits 2·(message + tail) bits.
    let (message, tx_bits): (Vec<u8>, Vec<Vec<u8>>) = if cfg.coded {
        let msg_len = cfg.symbols_per_burst * bits_per_vec / 2 - TAIL_BITS;
        let message = random_bits(&mut data_rng, msg_len);
        let coded = conv_encode(&message);
        debug_assert_eq!(coded.len(), cfg.symbols_per_burst * bits_per_vec);
        let tx = coded.chunks(bits_per_vec).map(<[u8]>::to_vec).collect();
        (message, tx)
    } else {
        let tx = (0..cfg.symbols_per_burst)
            .map(|_| random_bits(&mut data_rng, bits_per_vec))
            .collect();
        (Vec::new(), tx)
    };

    let observations: Vec<SymbolObservation> = tx_bits
        .into_iter()
        .map(|bits| transmit_vector(model, &channel, bits, sigma_n2, &mut noise_rng))
        .collect();

    let mut contexts = BurstContexts::build(model, &hp, sigma_n2, &observations, &cfg.equalizers)?;

    let mut out = Vec::with_capacity(cfg.equalizers.len());
    for (i, eq) in cfg.equalizers.iter().enumerate() {
        let estimates =
            contexts.estimates(*eq, dets[i].as_deref(), normalize[i], &observations)?;
        out.push(burst_error_rate(cfg, &message, &observations, &estimates)?);
    }
    Ok(out)
}

/// Per-burst estimator state: factorizations and candidate tables depend
/// only on the channel realization (and noise level), so they are built once
/// per burst and shared across all vectors — and, for the exhaustive table,
/// across the three estimators that use it.
pub(crate) struct BurstContexts {
    enumeration: Option<ExactEnumeration>,
    linear: Option<LinearMmseEqualizer>,
    feedback: Option<DecisionFeedbackEqualizer>,
    /// Channel-unnormalized inputs for the trainable detectors.
    base_models: Vec<RealLinearModel>,
    noise_var_eq: f64,
}

impl BurstContexts {
    /// Build the contexts needed by `wanted` for one burst. `hp` is the
    /// reduced channel the observations were produced with.
    pub(crate) fn build(
        model: &UwModel,
        hp: &crate::numerics::CMatrix,
        sigma_n2: f64,
        observations: &[SymbolObservation],
        wanted: &[EqualizerKind],
    ) -> Result<Self> {
        let noise_var_eq = model.cfg.n as f64 * sigma_n2;
        let rho = model.cfg.rho;
        let enumeration = wanted
            .iter()
            .any(EqualizerKind::is_exhaustive)
            .then(|| ExactEnumeration::new(hp, rho))
            .transpose()?;
        let linear = wanted
            .contains(&EqualizerKind::Lmmse)
            .then(|| LinearMmseEqualizer::new(hp, noise_var_eq, rho))
            .transpose()?;
        let feedback = wanted
            .contains(&EqualizerKind::Dfe)
            .then(|| DecisionFeedbackEqualizer::new(hp, noise_var_eq, rho))
            .transpose()?;
        let base_models = if wanted.iter().any(EqualizerKind::is_neural) {
            observations
                .iter()
                .map(|s| RealLinearModel::from_reduced(&s.obs, sigma_n2, &model.cfg))
                .collect()
        } else {
            Vec::new()
        };
        Ok(BurstContexts {
            enumeration,
            linear,
            feedback,
            base_models,
            noise_var_eq,
        })
    }

    /// Soft estimates for every observation in the burst under one
    /// estimator. Trainable detectors pass their instance and whether their
    /// training expected normalized inputs.
    pub(crate) fn estimates(
        &mut self,
        eq: EqualizerKind,
        det: Option<&dyn Detector>,
        normalize: bool,
        observations: &[SymbolObservation],
    ) -> Result<Vec<SoftEstimate>> {
        Ok(match eq {
            EqualizerKind::Map => {
                let e = self.enumeration.as_mut().expect("built for this burst");
                observations
                    .iter()
                    .map(|s| e.map_llrs(&s.obs.y, self.noise_var_eq))
                    .collect()
            }
            EqualizerKind::Mmse => {
                let e = self.enumeration.as_mut().expect("built for this burst");
                observations
                    .iter()
                    .map(|s| e.posterior_mean(&s.obs.y, self.noise_var_eq))
                    .collect()
            }
            EqualizerKind::VectorMl => {
                let e = self.enumeration.as_mut().expect("built for this burst");
                observations.iter().map(|s| e.ml(&s.obs.y)).collect()
            }
            EqualizerKind::Lmmse => {
                let e = self.linear.as_ref().expect("built for this burst");
                observations.iter().map(|s| e.estimate(&s.obs.y)).collect()
            }
            EqualizerKind::Dfe => {
                let e = self.feedback.as_ref().expect("built for this burst");
                observations.iter().map(|s| e.estimate(&s.obs.y)).collect()
            }
            _ => {
                let det = det.expect("checkpoint loaded for trainable detector");
                let mut models = self.base_models.clone();
                if normalize {
                    for m in &mut models {
                        m.normalize();
                    }
                }
                detect(det, &models)?
            }
        })
    }
}

/// Error rate of one equalizer over one burst: raw payload errors when
/// uncoded, decoded-message errors when coded.
fn burst_error_rate(
    cfg: &SweepConfig,
    message: &[u8],
    observations: &[SymbolObservation],
    estimates: &[SoftEstimate],
) -> Result<f64> {
    if cfg.coded {
        let mut llrs = Vec::with_capacity(estimates.len() * estimates[0].llr.len());
        for e in estimates {
            llrs.extend_from_slice(&e.llr);
        }
        let decoded = viterbi_decode(&llrs, message.len())?;
        let errors = decoded
            .iter()
            .zip(message)
            .filter(|(a, b)| a != b)
            .count();
        Ok(errors as f64 / message.len() as f64)
    } else {
        let mut errors = 0usize;
        let mut total = 0usize;
        for (e, s) in estimates.iter().zip(observations) {
            errors += e
                .hard_bits()
                .iter()
                .zip(&s.bits)
                .filter(|(a, b)| a != b)
                .count();
            total += s.bits.len();
        }
        Ok(errors as f64 / total as f64)
    }
}
