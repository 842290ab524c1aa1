//! Simulation laboratory for unique-word OFDM data estimation.
//!
//! The crate models a unique-word OFDM link end to end and compares two
//! families of data estimators on it:
//!
//! * **Model-based equalizers** ([`eq`]): bit-wise MAP, vector ML, MMSE,
//!   LMMSE, and a decision-feedback equalizer, all emitting soft bit
//!   log-likelihood ratios.
//! * **Trainable detectors** ([`det`]): an unfolded iterative detector with
//!   optional Jacobi preconditioning, a compressed-input feedforward network,
//!   and a self-attention detector — built on a small reverse-mode autodiff
//!   runtime ([`nn`]) with exact multiplication counting.
//!
//! Around those sit the channel model ([`channel`]), the transceiver matrix
//! algebra ([`model`]), a rate-1/2 convolutional coding chain ([`fec`]), and
//! the simulation drivers ([`sim`]): BER sweeps, training, dataset
//! construction, LLR calibration, I/Q histograms, decision-boundary maps, and
//! an analytic complexity calculator.
//!
//! Every stochastic quantity is drawn from counter-keyed ChaCha streams
//! ([`rng`]), so any run is reproducible from a single seed regardless of
//! worker count.
//!
//! Start with the `examples/` directory: each major capability has a runnable
//! example. The thin `uwlab` binary exposes the same capabilities as CLI
//! subcommands.

// Indexed loops are the clearest way to write most of the dense linear
// algebra in this crate; the iterator rewrites clippy suggests obscure the
// math they implement.
#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod det;
pub mod eq;
pub mod fec;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod sim;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix factorization hit a non-positive or vanishing pivot.
    #[error("singular matrix in {context}: pivot {pivot:.3e} at index {index}")]
    SingularMatrix {
        context: &'static str,
        pivot: f64,
        index: usize,
    },
    /// Matrix/vector dimensions do not conform.
    #[error("dimension mismatch in {context}: {details}")]
    DimensionMismatch {
        context: &'static str,
        details: String,
    },
    /// A constructed object failed its defining invariant.
    #[error("construction failed: {0}")]
    Construction(String),
    /// Exhaustive enumeration requested for a symbol count it cannot handle.
    #[error("enumeration over {bits} bits exceeds the supported limit of {limit}")]
    EnumerationTooLarge { bits: usize, limit: usize },
    /// Configuration rejected.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// Numeric divergence detected during training.
    #[error("training diverged: {0}")]
    Diverged(String),
    /// File or serialization problem.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Checkpoint or config deserialization problem.
    #[error("serialization failure: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
