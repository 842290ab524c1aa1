//! Experiment layer: Monte-Carlo sweeps, dataset construction, training,
//! calibration and diagnostic maps, and the closed-form cost calculator.
//!
//! Everything here is reproducible: a `(config, seed)` pair determines every
//! emitted byte. Monte-Carlo work items (sweep point × burst) draw their
//! randomness from substreams keyed by `(seed, point, burst)`, so results do
//! not depend on how items are scheduled across workers.

pub mod ber;
pub mod boundary;
pub mod calib;
pub mod complexity;
pub mod dataset;
pub mod hist;
pub mod plan;
pub mod train;

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::model::{ReducedObservation, UwModel};
use crate::rng::random_bits;
use crate::{Error, Result};

/// Environment variable selecting the worker count for Monte-Carlo sweeps.
pub const WORKERS_ENV: &str = "UWLAB_WORKERS";

/// Every estimator the experiment layer can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerKind {
    /// Bit-wise maximum a-posteriori estimator (exhaustive).
    Map,
    /// Posterior-mean estimator (exhaustive).
    Mmse,
    /// Vector maximum-likelihood estimator (exhaustive).
    VectorMl,
    /// Linear minimum-mean-square-error filter.
    Lmmse,
    /// Decision-feedback equalizer.
    Dfe,
    /// Unfolded iterative detector (trainable).
    #[serde(rename = "detnet")]
    DetNet,
    /// Fully connected detector on compressed inputs (trainable).
    Fcnn,
    /// Self-attention detector (trainable).
    #[serde(rename = "attdet")]
    AttDet,
}

impl EqualizerKind {
    /// Stable lowercase name used in CSV columns and CLI arguments.
    pub fn name(&self) -> &'static str {
        match self {
            EqualizerKind::Map => "map",
            EqualizerKind::Mmse => "mmse",
            EqualizerKind::VectorMl => "vector_ml",
            EqualizerKind::Lmmse => "lmmse",
            EqualizerKind::Dfe => "dfe",
            EqualizerKind::DetNet => "detnet",
            EqualizerKind::Fcnn => "fcnn",
            EqualizerKind::AttDet => "attdet",
        }
    }

    /// True for the trainable detectors, which require a checkpoint.
    pub fn is_neural(&self) -> bool {
        matches!(
            self,
            EqualizerKind::DetNet | EqualizerKind::Fcnn | EqualizerKind::AttDet
        )
    }

    /// True for the exhaustive estimators, whose cost is exponential in the
    /// data vector length.
    pub fn is_exhaustive(&self) -> bool {
        matches!(
            self,
            EqualizerKind::Map | EqualizerKind::Mmse | EqualizerKind::VectorMl
        )
    }

    pub const ALL: [EqualizerKind; 8] = [
        EqualizerKind::Map,
        EqualizerKind::Mmse,
        EqualizerKind::VectorMl,
        EqualizerKind::Lmmse,
        EqualizerKind::Dfe,
        EqualizerKind::DetNet,
        EqualizerKind::Fcnn,
        EqualizerKind::AttDet,
    ];
}

impl fmt::Display for EqualizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EqualizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EqualizerKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown equalizer {s:?}; expected one of: {}",
                    EqualizerKind::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// 64-bit FNV-1a hash, used to fingerprint configurations in CSV headers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Current source revision, or `"unknown"` outside a checkout.
pub fn commit_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Commented metadata header carried by every result CSV: enough to
/// reproduce the run (configuration fingerprint, seed, source revision).
pub fn metadata_header(config_json: &str, seed: u64) -> String {
    format!(
        "# config_hash={:016x}\n# seed={}\n# commit={}\n",
        fnv1a(config_json.as_bytes()),
        seed,
        commit_hash()
    )
}

/// Write a result CSV: metadata header, column header, then rows.
pub fn write_csv(
    path: &Path,
    config_json: &str,
    seed: u64,
    columns: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&metadata_header(config_json, seed));
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// A trainable detector's checkpoint, loaded and validated for a run.
pub(crate) struct LoadedCheckpoint {
    pub checkpoint: crate::nn::checkpoint::Checkpoint,
    /// Whether the detector was trained on channel-normalized inputs, read
    /// from the training metadata stored alongside the parameters.
    pub normalize: bool,
}

/// Load and validate the checkpoint for one trainable equalizer: the file
/// must exist, hold a detector of the matching kind, and be sized for the
/// system under test. Every failure names the equalizer.
pub(crate) fn load_neural_checkpoint(
    eq: EqualizerKind,
    paths: &std::collections::BTreeMap<String, std::path::PathBuf>,
    system: &crate::model::SystemConfig,
) -> Result<LoadedCheckpoint> {
    debug_assert!(eq.is_neural());
    let path = paths.get(eq.name()).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "equalizer `{}` is trainable and needs a checkpoint; \
             none was provided under checkpoints[\"{}\"]",
            eq.name(),
            eq.name()
        ))
    })?;
    let ck = crate::nn::checkpoint::Checkpoint::load(path).map_err(|e| {
        Error::InvalidConfig(format!(
            "equalizer `{}`: cannot load checkpoint {}: {e}",
            eq.name(),
            path.display()
        ))
    })?;
    let kind = ck.detector["kind"].as_str().unwrap_or("<missing>");
    if kind != eq.name() {
        return Err(Error::InvalidConfig(format!(
            "equalizer `{}`: checkpoint {} holds a `{kind}` detector",
            eq.name(),
            path.display()
        )));
    }
    // Validate the architecture once on the calling thread; workers rebuild
    // from the same data afterwards.
    let det = crate::det::detector_from_checkpoint(&ck, &path.display().to_string())?;
    if det.n_data() != system.n_data {
        return Err(Error::InvalidConfig(format!(
            "equalizer `{}`: checkpoint {} is sized for N_d={}, system has N_d={}",
            eq.name(),
            path.display(),
            det.n_data(),
            system.n_data
        )));
    }
    let normalize = ck.training["normalize"].as_bool().unwrap_or(true);
    Ok(LoadedCheckpoint {
        checkpoint: ck,
        normalize,
    })
}

/// Worker count for Monte-Carlo sweeps: the [`WORKERS_ENV`] environment
/// variable when set, otherwise the machine's available parallelism.
pub fn configured_workers() -> Result<usize> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidConfig(format!("{WORKERS_ENV}={v:?} is not a positive integer"))
        })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if workers == 0 {
        return Err(Error::InvalidConfig(format!(
            "{WORKERS_ENV} must be at least 1"
        )));
    }
    Ok(workers)
}

/// Worker pool for Monte-Carlo sweeps, sized by [`configured_workers`].
/// Results never depend on the size because all randomness is keyed by
/// work item, not by worker.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(configured_workers()?)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

/// Substream index for the burst-level work item of a sweep: point and burst
/// jointly key the randomness, keeping results scheduler-independent.
pub fn point_burst_key(point: usize, burst: usize) -> u64 {
    ((point as u64) << 32) | burst as u64
}

/// One transmitted vector as seen by the receiver front end.
pub struct SymbolObservation {
    /// Payload bits carried by the vector (2 per data symbol).
    pub bits: Vec<u8>,
    /// Reduced observation handed to the estimators.
    pub obs: ReducedObservation,
}

/// Simulate one vector end to end over a fixed channel realization: draw or
/// accept payload bits, modulate, add noise, and reduce at the receiver.
pub fn transmit_vector<R: Rng + ?Sized>(
    model: &UwModel,
    channel: &crate::channel::ChannelRealization,
    bits: Vec<u8>,
    sigma_n2: f64,
    noise_rng: &mut R,
) -> SymbolObservation {
    let d = model.cfg.qpsk_map(&bits);
    let x = model.modulate(&d);
    let r = channel.transmit(&x, sigma_n2, noise_rng);
    let obs = model.receive_reduce(&r, channel);
    SymbolObservation { bits, obs }
}

/// Draw random payload bits for one vector.
pub fn random_payload<R: Rng + ?Sized>(model: &UwModel, rng: &mut R) -> Vec<u8> {
    random_bits(rng, 2 * model.cfg.n_data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equalizer_names_round_trip() {
        for k in EqualizerKind::ALL {
            assert_eq!(k.name().parse::<EqualizerKind>().unwrap(), k);
        }
        assert!("turbo".parse::<EqualizerKind>().is_err());
    }

    #[test]
    fn fnv1a_matches_reference_vectors() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn metadata_header_reflects_config_and_seed() {
        let h = metadata_header("{\"x\":1}", 42);
        assert!(h.starts_with("# config_hash="));
        assert!(h.contains("# seed=42\n"));
        assert!(h.contains("# commit="));
        // different configs hash differently
        assert_ne!(
            metadata_header("{\"x\":1}", 42),
            metadata_header("{\"x\":2}", 42)
        );
    }

    #[test]
    fn point_burst_keys_are_disjoint() {
        let a = point_burst_key(0, 1);
        let b = point_burst_key(1, 0);
        let c = point_burst_key(1, 1);
        assert!(a != b && b != c && a != c);
    }
}
