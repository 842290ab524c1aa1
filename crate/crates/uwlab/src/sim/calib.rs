//! LLR calibration: does a claimed log-likelihood ratio match the error
//! rate actually observed at that confidence?
//!
//! Predicted LLRs are pooled into equal-population bins; each bin's mean
//! prediction is compared with the empirical LLR implied by the bin's error
//! rate, `sign(L̄)·ln((1−P)/P)`. A well-calibrated estimator puts the bins
//! on the identity line, so the weighted through-origin slope of empirical
//! versus predicted is the single-number summary: 1 is calibrated, below 1
//! is overconfident, above 1 is underconfident.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::det::detector_from_checkpoint;
use crate::model::{AssignmentSource, SystemConfig, UwModel};
use crate::rng::{random_bits, substream, StreamDomain};
use crate::sim::ber::BurstContexts;
use crate::sim::{
    load_neural_checkpoint, point_burst_key, transmit_vector, write_csv, EqualizerKind,
    SymbolObservation,
};
use crate::{Error, Result};

/// Number of equal-population bins used by default.
pub const CALIBRATION_BINS: usize = 50;

/// One calibration bin: samples whose predicted LLR falls in one population
/// quantile of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub count: usize,
    /// Mean predicted LLR of the samples in the bin.
    pub mean_llr: f64,
    /// Empirical error rate of the hard decisions in the bin.
    pub error_rate: f64,
    /// `sign(mean_llr)·ln((1−P)/P)`. For an error-free (or error-only) bin
    /// the rate is replaced by the half-sample bound `1/(2·count)` and the
    /// bin is marked `saturated`.
    pub empirical_llr: f64,
    /// True when the bin had zero (or only) errors and its empirical LLR is
    /// a bound, not a measurement.
    pub saturated: bool,
}

/// Calibration summary over one set of (predicted LLR, true bit) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Bins requested but left without samples (only happens when there are
    /// fewer samples than bins).
    pub empty_bins: usize,
    /// Bins whose empirical LLR is a saturation bound.
    pub saturated_bins: usize,
    /// Weighted through-origin slope of empirical vs. predicted LLR over
    /// the unsaturated bins; `NaN` when no bin is usable.
    pub slope: f64,
    /// Mean |predicted LLR| over all samples — the confidence level of the
    /// estimator, comparable across estimators at the same operating point.
    pub mean_abs_llr: f64,
    pub samples: usize,
}

/// Bin (predicted LLR, true bit) pairs into `n_bins` equal-population bins
/// and fit the calibration slope.
pub fn calibrate_from_pairs(pairs: &[(f64, u8)], n_bins: usize) -> Result<CalibrationReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "calibration needs at least one (LLR, bit) pair".into(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig("calibration needs at least one bin".into()));
    }
    let mut sorted: Vec<(f64, u8)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();

    let mut bins = Vec::new();
    let mut empty_bins = 0usize;
    let mut saturated_bins = 0usize;
    for k in 0..n_bins {
        let lo = k * n / n_bins;
        let hi = (k + 1) * n / n_bins;
        if hi == lo {
            empty_bins += 1;
            continue;
        }
        let slice = &sorted[lo..hi];
        let count = slice.len();
        let mean_llr = slice.iter().map(|(l, _)| l).sum::<f64>() / count as f64;
        let errors = slice
            .iter()
            .filter(|(l, bit)| u8::from(*l >= 0.0) != *bit)
            .count();
        let raw_rate = errors as f64 / count as f64;
        let saturated = errors == 0 || errors == count;
        let bounded_rate = if errors == 0 {
            1.0 / (2.0 * count as f64)
        } else if errors == count {
            1.0 - 1.0 / (2.0 * count as f64)
        } else {
            raw_rate
        };
        let magnitude = ((1.0 - bounded_rate) / bounded_rate).ln();
        let sign = if mean_llr >= 0.0 { 1.0 } else { -1.0 };
        if saturated {
            saturated_bins += 1;
        }
        bins.push(CalibrationBin {
            count,
            mean_llr,
            error_rate: raw_rate,
            empirical_llr: sign * magnitude,
            saturated,
        });
    }

    // Through-origin weighted least squares over measured (unsaturated)
    // bins; saturation bounds would drag the fit toward the cap.
    let mut num = 0.0;
    let mut den = 0.0;
    for b in bins.iter().filter(|b| !b.saturated) {
        let w = b.count as f64;
        num += w * b.mean_llr * b.empirical_llr;
        den += w * b.mean_llr * b.mean_llr;
    }
    let slope = if den > 0.0 { num / den } else { f64::NAN };
    let mean_abs_llr = pairs.iter().map(|(l, _)| l.abs()).sum::<f64>() / n as f64;

    Ok(CalibrationReport {
        bins,
        empty_bins,
        saturated_bins,
        slope,
        mean_abs_llr,
        samples: n,
    })
}

/// A calibration experiment: one estimator, one operating point, Monte-Carlo
/// effort, and the checkpoint map for trainable detectors. The effort
/// fields deserialize with the [`new`] defaults (100 realizations × 50
/// vectors, 50 bins) so config files may omit them.
///
/// [`new`]: CalibrationConfig::new
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub system: SystemConfig,
    pub equalizer: EqualizerKind,
    pub ebn0_db: f64,
    #[serde(default = "default_bursts")]
    pub bursts: usize,
    #[serde(default = "default_symbols_per_burst")]
    pub symbols_per_burst: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoints: BTreeMap<String, PathBuf>,
}

fn default_bursts() -> usize {
    100
}
fn default_symbols_per_burst() -> usize {
    50
}
fn default_bins() -> usize {
    CALIBRATION_BINS
}

impl CalibrationConfig {
    pub fn new(system: SystemConfig, equalizer: EqualizerKind, ebn0_db: f64, seed: u64) -> Self {
        CalibrationConfig {
            system,
            equalizer,
            ebn0_db,
            bursts: default_bursts(),
            symbols_per_burst: default_symbols_per_burst(),
            n_bins: default_bins(),
            seed,
            checkpoints: BTreeMap::new(),
        }
    }
}

/// Collect (predicted LLR, transmitted bit) pairs for the configured
/// estimator. Channels, payloads, and noise are keyed exactly like a BER
/// sweep with a single grid point, so the same seed sees the same bursts.
pub fn collect_llr_pairs(cfg: &CalibrationConfig) -> Result<Vec<(f64, u8)>> {
    if cfg.bursts == 0 || cfg.symbols_per_burst == 0 {
        return Err(Error::InvalidConfig(
            "bursts and symbols_per_burst must be positive".into(),
        ));
    }
    let model = UwModel::new(cfg.system, &AssignmentSource::Systematic)?;
    let profile = cfg.system.channel_profile();
    let wanted = [cfg.equalizer];
    let (det, normalize) = if cfg.equalizer.is_neural() {
        let loaded = load_neural_checkpoint(cfg.equalizer, &cfg.checkpoints, &cfg.system)?;
        (
            Some(detector_from_checkpoint(
                &loaded.checkpoint,
                "calibration checkpoint",
            )?),
            loaded.normalize,
        )
    } else {
        (None, false)
    };

    let mut pairs = Vec::with_capacity(cfg.bursts * cfg.symbols_per_burst * 2 * cfg.system.n_data);
    for burst in 0..cfg.bursts {
        let key = point_burst_key(0, burst);
        let channel = profile.draw(&mut substream(cfg.seed, StreamDomain::Channel, key));
        let mut data_rng = substream(cfg.seed, StreamDomain::Data, key);
        let mut noise_rng = substream(cfg.seed, StreamDomain::Noise, key);
        let hp = model.reduced_channel(&channel);
        let sigma_n2 = model.noise_variance(&hp, cfg.ebn0_db, 1.0);
        let observations: Vec<SymbolObservation> = (0..cfg.symbols_per_burst)
            .map(|_| {
                let bits = random_bits(&mut data_rng, 2 * model.cfg.n_data);
                transmit_vector(&model, &channel, bits, sigma_n2, &mut noise_rng)
            })
            .collect();
        let mut contexts =
            BurstContexts::build(&model, &hp, sigma_n2, &observations, &wanted)?;
        let estimates = contexts.estimates(cfg.equalizer, det.as_deref(), normalize, &observations)?;
        for (est, obs) in estimates.iter().zip(&observations) {
            pairs.extend(est.llr.iter().copied().zip(obs.bits.iter().copied()));
        }
    }
    Ok(pairs)
}

/// Run the full experiment: collect pairs, bin, and fit.
pub fn run_calibration(cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    let pairs = collect_llr_pairs(cfg)?;
    calibrate_from_pairs(&pairs, cfg.n_bins)
}

/// Write one row per populated bin, plus the summary in the trailing
/// comment columns of the header.
pub fn write_calibration_csv(
    report: &CalibrationReport,
    cfg: &CalibrationConfig,
    path: &Path,
) -> Result<()> {
    let config_json = serde_json::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    let columns = vec![
        "bin".to_string(),
        "count".to_string(),
        "mean_llr".to_string(),
        "error_rate".to_string(),
        "empirical_llr".to_string(),
        "saturated".to_string(),
    ];
    let rows: Vec<Vec<String>> = report
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| {
            vec![
                i.to_string(),
                b.count.to_string(),
                format!("{:.6e}", b.mean_llr),
                format!("{:.6e}", b.error_rate),
                format!("{:.6e}", b.empirical_llr),
                u8::from(b.saturated).to_string(),
            ]
        })
        .collect();
    write_csv(path, &config_json, cfg.seed, &columns, &rows)
}
