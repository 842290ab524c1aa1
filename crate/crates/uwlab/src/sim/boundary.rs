//! Toy-system decision-boundary maps: classify a grid of 2-D observations
//! under each estimator and emit the label map.
//!
//! The toy system is two real data symbols (`±1` each) through a fixed 2×2
//! real channel with additive white Gaussian noise of per-component
//! variance σ². Every estimator in the library works on the complex model,
//! so the toy is embedded with zero imaginary parts: the real and imaginary
//! halves of the model decouple, and the label is read from the real-part
//! bits alone.

use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::eq::{DecisionFeedbackEqualizer, ExactEnumeration, LinearMmseEqualizer};
use crate::numerics::CMatrix;
use crate::sim::{write_csv, EqualizerKind};
use crate::{Error, Result};

/// The fixed toy channel.
pub const TOY_H: [[f64; 2]; 2] = [[0.9, 0.6], [-0.3, 0.5]];

/// Symbol amplitude of the toy system: components are `±1`.
pub const TOY_RHO: f64 = 1.0;

/// The toy channel as a complex matrix with zero imaginary parts.
pub fn toy_channel() -> CMatrix {
    CMatrix::from_rows(&[
        vec![C64::new(TOY_H[0][0], 0.0), C64::new(TOY_H[0][1], 0.0)],
        vec![C64::new(TOY_H[1][0], 0.0), C64::new(TOY_H[1][1], 0.0)],
    ])
}

/// One boundary-map experiment: an estimator, a noise level, and a square
/// observation grid. The grid fields deserialize with the [`new`] defaults
/// (−3..3, 121 points per axis) so config files may omit them.
///
/// [`new`]: BoundaryConfig::new
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub equalizer: EqualizerKind,
    /// Noise variance per real component of the 2-D observation.
    pub sigma2: f64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    /// Grid points per axis.
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_lo() -> f64 {
    -3.0
}
fn default_hi() -> f64 {
    3.0
}
fn default_points() -> usize {
    121
}

impl BoundaryConfig {
    pub fn new(equalizer: EqualizerKind, sigma2: f64) -> Self {
        BoundaryConfig {
            equalizer,
            sigma2,
            lo: default_lo(),
            hi: default_hi(),
            points: default_points(),
        }
    }

    /// Grid coordinate of index `i`.
    pub fn coord(&self, i: usize) -> f64 {
        if self.points == 1 {
            return self.lo;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
    }

    /// Grid spacing along one axis.
    pub fn step(&self) -> f64 {
        if self.points <= 1 {
            return 0.0;
        }
        (self.hi - self.lo) / (self.points - 1) as f64
    }
}

/// Label map over the grid. `labels[i0 * points + i1]` classifies the
/// observation `(coord(i0), coord(i1))`; a label is `2·b₁ + b₀` with `b_k`
/// the hard real-part bit of symbol `k` (1 means positive).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryMap {
    pub config: BoundaryConfig,
    pub labels: Vec<u8>,
}

impl BoundaryMap {
    pub fn label_at(&self, i0: usize, i1: usize) -> u8 {
        self.labels[i0 * self.config.points + i1]
    }

    /// Fraction of grid points where two maps agree.
    pub fn agreement(&self, other: &BoundaryMap) -> f64 {
        assert_eq!(self.labels.len(), other.labels.len(), "grid shapes differ");
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len() as f64
    }

    /// Write `(y0, y1, label)` rows with the standard metadata header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let config_json =
            serde_json::to_string(&self.config).map_err(|e| Error::Serde(e.to_string()))?;
        let columns = vec!["y0".to_string(), "y1".to_string(), "label".to_string()];
        let n = self.config.points;
        let rows: Vec<Vec<String>> = (0..n * n)
            .map(|flat| {
                let (i0, i1) = (flat / n, flat % n);
                vec![
                    format!("{:.6}", self.config.coord(i0)),
                    format!("{:.6}", self.config.coord(i1)),
                    self.labels[flat].to_string(),
                ]
            })
            .collect();
        // a boundary map is deterministic; there is no seed to record
        write_csv(path, &config_json, 0, &columns, &rows)
    }
}

/// Estimator state prepared once for the whole grid.
enum ToyEstimator {
    Enumeration(ExactEnumeration),
    Linear(LinearMmseEqualizer),
    Feedback(DecisionFeedbackEqualizer),
}

fn build_estimator(eq: EqualizerKind, sigma2: f64) -> Result<ToyEstimator> {
    let h = toy_channel();
    // complex noise variance is twice the per-real-component variance
    let noise_var = 2.0 * sigma2;
    Ok(match eq {
        EqualizerKind::Map | EqualizerKind::Mmse | EqualizerKind::VectorMl => {
            ToyEstimator::Enumeration(ExactEnumeration::new(&h, TOY_RHO)?)
        }
        EqualizerKind::Lmmse => {
            ToyEstimator::Linear(LinearMmseEqualizer::new(&h, noise_var, TOY_RHO)?)
        }
        EqualizerKind::Dfe => {
            ToyEstimator::Feedback(DecisionFeedbackEqualizer::new(&h, noise_var, TOY_RHO)?)
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "the toy boundary map covers the model-based estimators; `{}` is trainable",
                other.name()
            )))
        }
    })
}

/// Classify the whole grid under the configured estimator.
pub fn boundary_map(cfg: &BoundaryConfig) -> Result<BoundaryMap> {
    if cfg.points < 2 || cfg.hi.is_nan() || cfg.lo.is_nan() || cfg.hi <= cfg.lo {
        return Err(Error::InvalidConfig(
            "boundary grid needs at least 2 points per axis and hi > lo".into(),
        ));
    }
    if cfg.sigma2 <= 0.0 {
        return Err(Error::InvalidConfig("sigma2 must be positive".into()));
    }
    let mut est = build_estimator(cfg.equalizer, cfg.sigma2)?;
    let noise_var = 2.0 * cfg.sigma2;
    let n = cfg.points;
    let mut labels = Vec::with_capacity(n * n);
    for i0 in 0..n {
        for i1 in 0..n {
            let y = [
                C64::new(cfg.coord(i0), 0.0),
                C64::new(cfg.coord(i1), 0.0),
            ];
            let soft = match (&mut est, cfg.equalizer) {
                (ToyEstimator::Enumeration(e), EqualizerKind::Map) => e.map_llrs(&y, noise_var),
                (ToyEstimator::Enumeration(e), EqualizerKind::Mmse) => {
                    e.posterior_mean(&y, noise_var)
                }
                (ToyEstimator::Enumeration(e), EqualizerKind::VectorMl) => e.ml(&y),
                (ToyEstimator::Linear(e), _) => e.estimate(&y),
                (ToyEstimator::Feedback(e), _) => e.estimate(&y),
                _ => unreachable!("estimator built for this equalizer"),
            };
            let bits = soft.hard_bits();
            // real-part bits sit at even LLR positions
            labels.push(2 * bits[2] + bits[0]);
        }
    }
    Ok(BoundaryMap {
        config: cfg.clone(),
        labels,
    })
}

/// Midpoints of grid edges where the given bit (0 → symbol 0, 1 → symbol 1)
/// of the label flips, scanning both rows and columns.
pub fn bit_boundary_crossings(map: &BoundaryMap, bit: usize) -> Vec<(f64, f64)> {
    assert!(bit < 2, "the toy label has two bits");
    let n = map.config.points;
    let pick = |label: u8| (label >> bit) & 1;
    let mut crossings = Vec::new();
    for a in 0..n {
        for b in 0..n - 1 {
            // along axis 1
            if pick(map.label_at(a, b)) != pick(map.label_at(a, b + 1)) {
                let mid = (map.config.coord(b) + map.config.coord(b + 1)) / 2.0;
                crossings.push((map.config.coord(a), mid));
            }
            // along axis 0
            if pick(map.label_at(b, a)) != pick(map.label_at(b + 1, a)) {
                let mid = (map.config.coord(b) + map.config.coord(b + 1)) / 2.0;
                crossings.push((mid, map.config.coord(a)));
            }
        }
    }
    crossings
}

/// Largest orthogonal distance from the points to their total-least-squares
/// line (the principal axis of the cloud). Straight boundaries give values
/// below the grid step; curved or kinked ones do not.
pub fn max_line_deviation(points: &[(f64, f64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // principal direction of the 2×2 scatter matrix
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let lambda = trace / 2.0 + (trace * trace / 4.0 - det).max(0.0).sqrt();
    let (ux, uy) = if sxy.abs() > 1e-30 {
        let norm = ((lambda - syy).powi(2) + sxy * sxy).sqrt();
        ((lambda - syy) / norm, sxy / norm)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    points
        .iter()
        .map(|(x, y)| {
            let (dx, dy) = (x - mx, y - my);
            (dx * uy - dy * ux).abs()
        })
        .fold(0.0, f64::max)
}
