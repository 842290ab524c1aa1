//! Training-set construction: mixes freshly drawn channels with mined
//! deep-fade channels, draws per-sample operating points uniformly on the
//! linear SNR scale, and materializes samples deterministically from a
//! compact recipe file.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::mine_bad_channel_indices;
use crate::model::{RealLinearModel, SystemConfig, UwModel};
use crate::nn::Tensor;
use crate::rng::{substream, StreamDomain};
use crate::sim::{random_payload, transmit_vector};
use crate::{Error, Result};

/// How the per-sample noise level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingPoint {
    /// One fixed `E_b/N_0` (dB) for every sample.
    Fixed(f64),
    /// Uniform on the linear scale between two dB endpoints.
    UniformDbLinear { lo_db: f64, hi_db: f64 },
}

impl OperatingPoint {
    /// Draw one operating point in dB.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            OperatingPoint::Fixed(db) => db,
            OperatingPoint::UniformDbLinear { lo_db, hi_db } => {
                let lo = 10f64.powf(lo_db / 10.0);
                let hi = 10f64.powf(hi_db / 10.0);
                10.0 * rng.gen_range(lo..hi).log10()
            }
        }
    }
}

/// Recipe for one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetSpec {
    /// Total channels in the main set.
    pub channels: usize,
    /// Fraction of the main set drawn from mined deep-fade channels.
    pub bad_fraction: f64,
    /// Mining pool multiplier: `bad_count · oversample` candidates are
    /// ranked by fade severity.
    pub oversample: usize,
    /// Per-sample noise level policy.
    pub operating_point: OperatingPoint,
    /// Noise-free warm-up channels.
    pub pretrain_channels: usize,
    /// Code rate entering the `E_b/N_0 → σ_n²` mapping (1.0 when uncoded).
    pub code_rate: f64,
}

impl TrainingSetSpec {
    /// Full-scale defaults for a system preset; `operating_point` stays
    /// the caller's choice because it differs per experiment.
    pub fn preset_for(cfg: &SystemConfig, operating_point: OperatingPoint) -> Result<Self> {
        let (channels, bad_fraction) = match cfg.n_data {
            8 => (30000, 0.10),
            32 => (40000, 0.50),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "no training-set preset for N_d={other}"
                )))
            }
        };
        Ok(TrainingSetSpec {
            channels,
            bad_fraction,
            oversample: 5000,
            operating_point,
            pretrain_channels: 2000,
            code_rate: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bad_fraction) {
            return Err(Error::InvalidConfig(format!(
                "bad_fraction {} outside [0, 1]",
                self.bad_fraction
            )));
        }
        if self.oversample == 0 {
            return Err(Error::InvalidConfig("oversample must be at least 1".into()));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "code_rate {} outside (0, 1]",
                self.code_rate
            )));
        }
        if let OperatingPoint::UniformDbLinear { lo_db, hi_db } = self.operating_point {
            if lo_db >= hi_db {
                return Err(Error::InvalidConfig(format!(
                    "operating-point range [{lo_db}, {hi_db}] dB is empty"
                )));
            }
        }
        Ok(())
    }

    /// Number of mined samples implied by the fraction (rounded).
    pub fn bad_count(&self) -> usize {
        (self.channels as f64 * self.bad_fraction).round() as usize
    }
}

/// Where one sample's channel realization comes from. Together with the
/// set-level seed, `(source, channel_index)` regenerates the realization
/// exactly, so no tap values need to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    /// Fresh draw from the training-channel substream family.
    Fresh,
    /// Winner of the severity mining pass (index into the mining family).
    Mined,
    /// Noise-free warm-up draw.
    Pretrain,
}

impl ChannelSource {
    fn domain(self) -> StreamDomain {
        match self {
            ChannelSource::Fresh => StreamDomain::TrainChannel,
            ChannelSource::Mined => StreamDomain::Mining,
            ChannelSource::Pretrain => StreamDomain::Pretrain,
        }
    }
}

/// One sample's regeneration recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source: ChannelSource,
    /// Draw index within the source's substream family.
    pub channel_index: u64,
    /// Operating point in dB; `None` is the noiseless pretrain case.
    pub ebn0_db: Option<f64>,
}

/// A built training set: system, spec, seed, and per-sample recipes. The
/// file stores exactly this structure; samples are materialized on demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSet {
    pub format_version: u32,
    pub system: SystemConfig,
    pub spec: TrainingSetSpec,
    pub seed: u64,
    /// Main samples: fresh channels first, then mined ones.
    pub samples: Vec<SampleRecord>,
    /// Noise-free warm-up samples.
    pub pretrain: Vec<SampleRecord>,
}

pub const DATASET_VERSION: u32 = 1;

/// Payload/noise substream index for a sample: pretrain samples live in a
/// disjoint index range so they never share draws with main samples.
fn sample_stream_index(pretrain: bool, position: usize) -> u64 {
    if pretrain {
        (1u64 << 32) + position as u64
    } else {
        position as u64
    }
}

/// Build a training set: mine the bad-channel subset, lay out fresh
/// channels, draw every sample's operating point, and attach the noise-free
/// warm-up set.
pub fn build_training_set(
    cfg: &SystemConfig,
    spec: &TrainingSetSpec,
    seed: u64,
) -> Result<TrainingSet> {
    spec.validate()?;
    cfg.validate()?;
    let n_bad = spec.bad_count();
    let n_fresh = spec.channels - n_bad;

    let mut samples = Vec::with_capacity(spec.channels);
    for i in 0..n_fresh {
        samples.push(SampleRecord {
            source: ChannelSource::Fresh,
            channel_index: i as u64,
            ebn0_db: None,
        });
    }
    if n_bad > 0 {
        let profile = cfg.channel_profile();
        let used = cfg.used_subcarriers();
        let winners = mine_bad_channel_indices(
            &profile,
            cfg.n,
            &used,
            n_bad,
            n_bad * spec.oversample,
            seed,
        );
        for idx in winners {
            samples.push(SampleRecord {
                source: ChannelSource::Mined,
                channel_index: idx,
                ebn0_db: None,
            });
        }
    }
    for (pos, rec) in samples.iter_mut().enumerate() {
        let mut rng = substream(seed, StreamDomain::OperatingPoint, pos as u64);
        rec.ebn0_db = Some(spec.operating_point.draw(&mut rng));
    }

    let pretrain = (0..spec.pretrain_channels)
        .map(|i| SampleRecord {
            source: ChannelSource::Pretrain,
            channel_index: i as u64,
            ebn0_db: None,
        })
        .collect();

    Ok(TrainingSet {
        format_version: DATASET_VERSION,
        system: *cfg,
        spec: spec.clone(),
        seed,
        samples,
        pretrain,
    })
}

/// A materialized sample: the estimation model (un-normalized — detectors
/// normalize as their own pre-processing step) plus the transmitted
/// component symbols the detector must recover.
pub struct MaterializedBatch {
    pub models: Vec<RealLinearModel>,
    /// `B × 2N_d` component symbols (`[Re…, Im…]` per row).
    pub symbols: Tensor,
}

impl TrainingSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::InvalidConfig(format!("dataset encode: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let set: TrainingSet = serde_json::from_str(&raw)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if set.format_version != DATASET_VERSION {
            return Err(Error::InvalidConfig(format!(
                "{}: dataset format {} unsupported (expected {DATASET_VERSION})",
                path.display(),
                set.format_version
            )));
        }
        Ok(set)
    }

    /// Materialize main samples by position. Deterministic: payload and
    /// noise substreams are keyed by the sample position, the channel by
    /// its recorded `(source, channel_index)`.
    pub fn materialize(&self, model: &UwModel, positions: &[usize]) -> Result<MaterializedBatch> {
        self.materialize_from(model, &self.samples, positions, false)
    }

    /// Materialize noise-free warm-up samples by position.
    pub fn materialize_pretrain(
        &self,
        model: &UwModel,
        positions: &[usize],
    ) -> Result<MaterializedBatch> {
        self.materialize_from(model, &self.pretrain, positions, true)
    }

    fn materialize_from(
        &self,
        model: &UwModel,
        records: &[SampleRecord],
        positions: &[usize],
        pretrain: bool,
    ) -> Result<MaterializedBatch> {
        if model.cfg != self.system {
            return Err(Error::InvalidConfig(
                "transceiver model does not match the dataset's system".into(),
            ));
        }
        let n_data = self.system.n_data;
        let profile = self.system.channel_profile();
        let mut models = Vec::with_capacity(positions.len());
        let mut symbols = Tensor::zeros(positions.len(), 2 * n_data);
        for (row, &pos) in positions.iter().enumerate() {
            let rec = records.get(pos).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "sample position {pos} outside the set of {} records",
                    records.len()
                ))
            })?;
            let channel = profile.draw(&mut substream(
                self.seed,
                rec.source.domain(),
                rec.channel_index,
            ));
            let stream = sample_stream_index(pretrain, pos);
            let bits = random_payload(
                model,
                &mut substream(self.seed, StreamDomain::Data, stream),
            );
            // Noise level from the recorded operating point; the mapping
            // depends on the channel through the reduced model's gain.
            let sigma_n2 = match rec.ebn0_db {
                Some(db) => {
                    let h_prime = model.reduced_channel(&channel);
                    model.noise_variance(&h_prime, db, self.spec.code_rate)
                }
                None => 0.0,
            };
            let sym = transmit_vector(
                model,
                &channel,
                bits,
                sigma_n2,
                &mut substream(self.seed, StreamDomain::Noise, stream),
            );
            for (j, s) in model.cfg.qpsk_map(&sym.bits).iter().enumerate() {
                symbols.set(row, j, s.re);
                symbols.set(row, n_data + j, s.im);
            }
            models.push(RealLinearModel::from_reduced(
                &sym.obs,
                sigma_n2,
                &self.system,
            ));
        }
        Ok(MaterializedBatch { models, symbols })
    }
}
