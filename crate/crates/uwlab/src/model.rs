//! Unique-word OFDM transceiver algebra.
//!
//! A data vector `d` of QPSK symbols is spread by a generator matrix `G`
//! (data part stacked on a redundancy part `T·d`), mapped onto the used
//! subcarriers by a selection matrix `B`, and inverse-DFT'd to the time
//! domain. `T` is constructed so the last `n_uw` time samples of the
//! data-dependent part are exactly zero — a fixed unique word can then be
//! added there and removed again at the receiver.
//!
//! The receiver reduces an observed block to the standard linear form
//! `y' = H'·d + noise` (complex), and [`RealLinearModel`] re-expresses that
//! over the reals for the estimators and detectors, with optional channel
//! normalization and the compressed inputs (`Hᵀy`, `HᵀH`) the trainable
//! detectors consume.


use crate::channel::{ChannelProfile, ChannelRealization};
use crate::numerics::{
    dft_matrix, idft_matrix, lu_solve_mat, real_stack, real_stack_vec, CMatrix, RMatrix, C64,
};
use crate::{Error, Result};

/// Dimensioning of one transceiver configuration.
///
/// Deserializes from either a full field map or a preset name (`"i"`,
/// `"ii"`), so config files can say `"system": "i"`. Serialization always
/// emits the full map, keeping configuration fingerprints explicit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SystemConfig {
    /// DFT length.
    pub n: usize,
    /// Number of data symbols per block.
    pub n_data: usize,
    /// Number of redundant subcarriers.
    pub n_redundant: usize,
    /// Number of zero subcarriers (DC + band edges).
    pub n_zero: usize,
    /// Number of pilot subcarriers.
    pub n_pilot: usize,
    /// Sample period in seconds.
    pub t_s: f64,
    /// RMS delay spread of the evaluation channel, in seconds.
    pub tau_rms: f64,
    /// QPSK amplitude per real component; symbol energy is `2·rho²`.
    pub rho: f64,
}

/// Small test-bench system: every subcarrier carries payload or redundancy.
pub fn system_i() -> SystemConfig {
    SystemConfig {
        n: 12,
        n_data: 8,
        n_redundant: 4,
        n_zero: 0,
        n_pilot: 0,
        t_s: 200e-9,
        tau_rms: 100e-9,
        rho: std::f64::consts::FRAC_1_SQRT_2,
    }
}

/// Full-size system with guard zeros and pilots.
pub fn system_ii() -> SystemConfig {
    SystemConfig {
        n: 64,
        n_data: 32,
        n_redundant: 16,
        n_zero: 12,
        n_pilot: 4,
        t_s: 50e-9,
        tau_rms: 100e-9,
        rho: std::f64::consts::FRAC_1_SQRT_2,
    }
}

impl<'de> serde::Deserialize<'de> for SystemConfig {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        /// Field-for-field mirror so the map form keeps derived parsing.
        #[derive(serde::Deserialize)]
        struct Full {
            n: usize,
            n_data: usize,
            n_redundant: usize,
            n_zero: usize,
            n_pilot: usize,
            t_s: f64,
            tau_rms: f64,
            rho: f64,
        }
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Preset(String),
            Full(Full),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Preset(name) => match name.to_ascii_lowercase().as_str() {
                "i" | "1" => Ok(system_i()),
                "ii" | "2" => Ok(system_ii()),
                other => Err(serde::de::Error::custom(format!(
                    "unknown system preset {other:?}; expected \"i\" or \"ii\" \
                     (or a full field map)"
                ))),
            },
            Repr::Full(f) => Ok(SystemConfig {
                n: f.n,
                n_data: f.n_data,
                n_redundant: f.n_redundant,
                n_zero: f.n_zero,
                n_pilot: f.n_pilot,
                t_s: f.t_s,
                tau_rms: f.tau_rms,
                rho: f.rho,
            }),
        }
    }
}

impl SystemConfig {
    /// Unique-word length in time samples (equals the redundancy order).
    pub fn n_uw(&self) -> usize {
        self.n_redundant
    }

    /// Mean symbol energy `σ_d² = 2ρ²`.
    pub fn sigma_d2(&self) -> f64 {
        2.0 * self.rho * self.rho
    }

    pub fn validate(&self) -> Result<()> {
        let used = self.n_data + self.n_redundant;
        if used + self.n_zero + self.n_pilot != self.n {
            return Err(Error::InvalidConfig(format!(
                "subcarrier counts {}+{}+{}+{} do not fill the {}-point grid",
                self.n_data, self.n_redundant, self.n_zero, self.n_pilot, self.n
            )));
        }
        if self.n_zero > 0 && self.n_zero < 1 {
            unreachable!()
        }
        if self.rho <= 0.0 || self.t_s <= 0.0 || self.tau_rms <= 0.0 {
            return Err(Error::InvalidConfig(
                "rho, t_s and tau_rms must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Indices forced to zero: DC plus a centered block around the Nyquist
    /// bin (band edges of the spectrum after fftshift).
    pub fn zero_subcarriers(&self) -> Vec<usize> {
        if self.n_zero == 0 {
            return vec![];
        }
        let mut z = vec![0usize];
        let block = self.n_zero - 1;
        let lo = self.n / 2 - block / 2;
        z.extend(lo..lo + block);
        z
    }

    /// Pilot indices: evenly spaced among the non-zero subcarriers.
    pub fn pilot_subcarriers(&self) -> Vec<usize> {
        if self.n_pilot == 0 {
            return vec![];
        }
        let zeros = self.zero_subcarriers();
        let candidates: Vec<usize> = (0..self.n).filter(|i| !zeros.contains(i)).collect();
        (0..self.n_pilot)
            .map(|i| candidates[(2 * i + 1) * candidates.len() / (2 * self.n_pilot)])
            .collect()
    }

    /// Indices that carry payload or redundancy, ascending.
    pub fn used_subcarriers(&self) -> Vec<usize> {
        let zeros = self.zero_subcarriers();
        let pilots = self.pilot_subcarriers();
        (0..self.n)
            .filter(|i| !zeros.contains(i) && !pilots.contains(i))
            .collect()
    }

    /// Subcarrier selection matrix `B` (`n × (n_data+n_redundant)`): column
    /// `j` has a single one at the `j`-th used subcarrier.
    pub fn selection_matrix(&self) -> CMatrix {
        let used = self.used_subcarriers();
        let mut b = CMatrix::zeros(self.n, used.len());
        for (j, &row) in used.iter().enumerate() {
            b[(row, j)] = C64::new(1.0, 0.0);
        }
        b
    }

    /// Evaluation channel statistics for this sampling grid.
    pub fn channel_profile(&self) -> ChannelProfile {
        ChannelProfile::new(self.t_s, self.tau_rms)
    }

    /// Map a bit pair per symbol onto QPSK: even-position bit → real part,
    /// odd-position bit → imaginary part; bit 0 ↦ −ρ, bit 1 ↦ +ρ.
    pub fn qpsk_map(&self, bits: &[u8]) -> Vec<C64> {
        assert!(bits.len().is_multiple_of(2), "QPSK needs an even bit count");
        bits.chunks_exact(2)
            .map(|p| {
                let re = if p[0] == 0 { -self.rho } else { self.rho };
                let im = if p[1] == 0 { -self.rho } else { self.rho };
                C64::new(re, im)
            })
            .collect()
    }
}

/// How the redundancy-spreading assignment matrix is obtained.
#[derive(Debug, Clone)]
pub enum AssignmentSource {
    /// Permutation that keeps data symbols in order and spreads redundancy
    /// slots evenly among the used subcarriers.
    Systematic,
    /// Explicit matrix from a file (see [`load_assignment_matrix`]).
    File(std::path::PathBuf),
}

/// Systematic assignment: a `(n_data+n_redundant)²` permutation placing
/// redundancy at used-slot positions `⌊(2j+1)(n_data+n_redundant)/(2·n_redundant)⌋`.
pub fn systematic_assignment(cfg: &SystemConfig) -> CMatrix {
    let m = cfg.n_data + cfg.n_redundant;
    let red_slots: Vec<usize> = (0..cfg.n_redundant)
        .map(|j| (2 * j + 1) * m / (2 * cfg.n_redundant))
        .collect();
    let mut a = CMatrix::zeros(m, m);
    let mut data_col = 0;
    let mut red_col = cfg.n_data;
    for slot in 0..m {
        if red_slots.contains(&slot) {
            a[(slot, red_col)] = C64::new(1.0, 0.0);
            red_col += 1;
        } else {
            a[(slot, data_col)] = C64::new(1.0, 0.0);
            data_col += 1;
        }
    }
    a
}

/// Parse an assignment matrix file: first line `rows cols`, then `rows·cols`
/// whitespace-separated `re im` pairs in row-major order.
pub fn load_assignment_matrix(path: &std::path::Path) -> Result<CMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut tokens = text.split_whitespace();
    let mut next_num = |what: &str| -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| Error::Construction(format!("assignment matrix file ended before {what}")))?
            .parse::<f64>()
            .map_err(|e| Error::Construction(format!("bad {what} in assignment matrix: {e}")))
    };
    let rows = next_num("row count")? as usize;
    let cols = next_num("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Construction("assignment matrix has zero dimension".into()));
    }
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re = next_num("matrix entry (re)")?;
            let im = next_num("matrix entry (im)")?;
            m[(i, j)] = C64::new(re, im);
        }
    }
    if tokens.next().is_some() {
        return Err(Error::Construction(
            "assignment matrix file has trailing tokens".into(),
        ));
    }
    Ok(m)
}

/// Generator construction output.
#[derive(Debug, Clone)]
pub struct Generator {
    /// `(n_data+n_redundant) × n_data` code generator `G = A·[I; T]`.
    pub g: CMatrix,
    /// Redundancy map `T` (`n_redundant × n_data`).
    pub t: CMatrix,
    /// Assignment matrix used.
    pub a: CMatrix,
}

/// Build the generator for `cfg`. `T` solves for the redundancy that nulls
/// the last `n_uw` time samples of the data-dependent signal part; the
/// constructor verifies that invariant on random inputs and fails loudly if
/// the assignment leads to a singular redundancy block.
pub fn build_generator(cfg: &SystemConfig, source: &AssignmentSource) -> Result<Generator> {
    cfg.validate()?;
    let a = match source {
        AssignmentSource::Systematic => systematic_assignment(cfg),
        AssignmentSource::File(p) => load_assignment_matrix(p)?,
    };
    let m_total = cfg.n_data + cfg.n_redundant;
    if a.rows != m_total || a.cols != m_total {
        return Err(Error::DimensionMismatch {
            context: "assignment matrix",
            details: format!("expected {m_total}×{m_total}, got {}×{}", a.rows, a.cols),
        });
    }
    let b = cfg.selection_matrix();
    let time_map = idft_matrix(cfg.n).matmul(&b).matmul(&a); // n × m_total
    // last n_uw time rows, split into data and redundancy blocks
    let n_uw = cfg.n_uw();
    let mut m1 = CMatrix::zeros(n_uw, cfg.n_data);
    let mut m2 = CMatrix::zeros(n_uw, cfg.n_redundant);
    for i in 0..n_uw {
        for j in 0..cfg.n_data {
            m1[(i, j)] = time_map[(cfg.n - n_uw + i, j)];
        }
        for j in 0..cfg.n_redundant {
            m2[(i, j)] = time_map[(cfg.n - n_uw + i, cfg.n_data + j)];
        }
    }
    // T = -M2⁻¹·M1; M2 is general complex, so a pivoted solve is required
    let mut neg_m1 = m1.clone();
    for z in &mut neg_m1.data {
        *z = -*z;
    }
    let t = lu_solve_mat(&m2, &neg_m1, "generator redundancy block")?;
    // G = A·[I; T]
    let mut stacked = CMatrix::zeros(m_total, cfg.n_data);
    for j in 0..cfg.n_data {
        stacked[(j, j)] = C64::new(1.0, 0.0);
    }
    for i in 0..cfg.n_redundant {
        for j in 0..cfg.n_data {
            stacked[(cfg.n_data + i, j)] = t[(i, j)];
        }
    }
    let g = a.matmul(&stacked);
    let gen = Generator { g, t, a };
    verify_zero_tail(cfg, &gen, 4, 1e-9)?;
    Ok(gen)
}

/// Check that `F⁻¹·B·G·d` has (numerically) zero trailing `n_uw` samples for
/// `trials` seeded random data vectors; the largest trailing magnitude must
/// stay at or below `tol`.
pub fn verify_zero_tail(cfg: &SystemConfig, gen: &Generator, trials: usize, tol: f64) -> Result<f64> {
    use rand::Rng;
    let b = cfg.selection_matrix();
    let idft = idft_matrix(cfg.n);
    let mut rng = crate::rng::substream(0xC0DE, crate::rng::StreamDomain::Scratch, 99);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d: Vec<C64> = (0..cfg.n_data)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let x = idft.matvec(&b.matvec(&gen.g.matvec(&d)));
        for t in (cfg.n - cfg.n_uw())..cfg.n {
            worst = worst.max(x[t].norm());
        }
    }
    if worst > tol {
        return Err(Error::Construction(format!(
            "generator leaves {worst:.3e} in the unique-word positions (tolerance {tol:.0e})"
        )));
    }
    Ok(worst)
}

/// A complete transmitter/receiver pair for one configuration.
pub struct UwModel {
    pub cfg: SystemConfig,
    pub gen: Generator,
    /// Fixed time-domain unique word occupying the last `n_uw` samples.
    pub unique_word: Vec<C64>,
    b: CMatrix,
    dft: CMatrix,
    idft: CMatrix,
    /// `Bᵀ·F·[0; unique_word]`, subtracted (scaled by the channel) at the receiver.
    uw_freq_reduced: Vec<C64>,
}

/// Receiver-side reduced observation: `y' = H'·d + ñ`.
#[derive(Debug, Clone)]
pub struct ReducedObservation {
    pub y: Vec<C64>,
    pub h: CMatrix,
}

impl UwModel {
    /// Model with an all-zero unique word.
    pub fn new(cfg: SystemConfig, source: &AssignmentSource) -> Result<Self> {
        let gen = build_generator(&cfg, source)?;
        let b = cfg.selection_matrix();
        let dft = dft_matrix(cfg.n);
        let idft = idft_matrix(cfg.n);
        let mut m = UwModel {
            unique_word: vec![C64::new(0.0, 0.0); cfg.n_uw()],
            uw_freq_reduced: vec![C64::new(0.0, 0.0); cfg.n_data + cfg.n_redundant],
            cfg,
            gen,
            b,
            dft,
            idft,
        };
        m.refresh_uw_cache();
        Ok(m)
    }

    /// Replace the unique word (length `n_uw`, time domain).
    pub fn with_unique_word(mut self, uw: Vec<C64>) -> Result<Self> {
        if uw.len() != self.cfg.n_uw() {
            return Err(Error::DimensionMismatch {
                context: "unique word",
                details: format!("expected length {}, got {}", self.cfg.n_uw(), uw.len()),
            });
        }
        self.unique_word = uw;
        self.refresh_uw_cache();
        Ok(self)
    }

    fn refresh_uw_cache(&mut self) {
        let mut padded = vec![C64::new(0.0, 0.0); self.cfg.n];
        let off = self.cfg.n - self.cfg.n_uw();
        padded[off..].copy_from_slice(&self.unique_word);
        let freq = self.dft.matvec(&padded);
        // Bᵀ·(F·[0;uw]) = entries of freq at the used subcarriers
        self.uw_freq_reduced = self
            .cfg
            .used_subcarriers()
            .iter()
            .map(|&l| freq[l])
            .collect();
    }

    /// Time-domain block for a data vector: spread, map to subcarriers,
    /// inverse DFT, add the unique word in the (data-nulled) tail.
    pub fn modulate(&self, d: &[C64]) -> Vec<C64> {
        assert_eq!(d.len(), self.cfg.n_data, "data vector length");
        let mut x = self.idft.matvec(&self.b.matvec(&self.gen.g.matvec(d)));
        let off = self.cfg.n - self.cfg.n_uw();
        for (i, uw) in self.unique_word.iter().enumerate() {
            x[off + i] += uw;
        }
        x
    }

    /// Reduced channel matrix `H' = diag(H̃_used)·G` for one realization.
    pub fn reduced_channel(&self, h: &ChannelRealization) -> CMatrix {
        let used = self.cfg.used_subcarriers();
        let resp = h.frequency_response(self.cfg.n);
        let mut hp = self.gen.g.clone();
        for (row, &l) in used.iter().enumerate() {
            for j in 0..hp.cols {
                let v = hp[(row, j)] * resp[l];
                hp[(row, j)] = v;
            }
        }
        hp
    }

    /// Reduce a received block to `y' = H'·d + ñ`: DFT, select used
    /// subcarriers, subtract the channel-scaled unique-word contribution.
    /// The reduced noise `ñ` is complex Gaussian with variance `n·σ_n²` per
    /// element.
    pub fn receive_reduce(&self, r: &[C64], h: &ChannelRealization) -> ReducedObservation {
        assert_eq!(r.len(), self.cfg.n, "received block length");
        let freq = self.dft.matvec(r);
        let used = self.cfg.used_subcarriers();
        let h_used: Vec<C64> = {
            let resp = h.frequency_response(self.cfg.n);
            used.iter().map(|&l| resp[l]).collect()
        };
        let mut y: Vec<C64> = used.iter().map(|&l| freq[l]).collect();
        for ((yv, hv), uw) in y.iter_mut().zip(&h_used).zip(&self.uw_freq_reduced) {
            *yv -= hv * uw;
        }
        ReducedObservation {
            y,
            h: self.reduced_channel(h),
        }
    }

    /// Noise variance `σ_n²` that realizes a given per-bit SNR on this
    /// channel: the SNR measure is `γ = σ_d²·tr(HᵀH)/(n²·σ_n²)` over the
    /// real-stacked model, and `E_b/N_0 = γ / (R·log2|S|)` with QPSK
    /// (`log2|S| = 2`) and code rate `R`.
    pub fn noise_variance(&self, h_prime: &CMatrix, ebn0_db: f64, code_rate: f64) -> f64 {
        let gamma = gamma_from_ebn0(ebn0_db, code_rate);
        let trace_real = 2.0 * h_prime.frobenius_norm().powi(2);
        self.cfg.sigma_d2() * trace_real / ((self.cfg.n * self.cfg.n) as f64 * gamma)
    }
}

/// Linear SNR `γ` from a per-bit SNR in dB: `γ = (E_b/N_0)·R·log2|S|` with
/// QPSK symbols.
pub fn gamma_from_ebn0(ebn0_db: f64, code_rate: f64) -> f64 {
    10f64.powf(ebn0_db / 10.0) * code_rate * 2.0
}

/// Real-valued estimation model `y = H·d + w` with iid noise elements.
#[derive(Debug, Clone)]
pub struct RealLinearModel {
    /// Stacked observation `[Re(y'); Im(y')]`, length `2(n_data+n_redundant)`.
    pub y: Vec<f64>,
    /// Stacked channel matrix, `2(n_data+n_redundant) × 2·n_data`.
    pub h: RMatrix,
    /// Noise variance per real element.
    pub noise_var: f64,
    /// Per-component symbol amplitude.
    pub rho: f64,
    /// DFT length of the originating system (sets the noise scale).
    pub n_dft: usize,
    /// Whether [`RealLinearModel::normalize`] has been applied.
    pub normalized: bool,
}

/// Compressed detector inputs plus the exact real-multiplication cost of
/// producing them.
#[derive(Debug, Clone)]
pub struct CompressedInput {
    /// `Hᵀ·y`, length `2·n_data`.
    pub hty: Vec<f64>,
    /// `Hᵀ·H`, `2·n_data × 2·n_data`.
    pub hth: RMatrix,
    /// Real multiplications spent.
    pub mults: u64,
}

impl RealLinearModel {
    /// Stack a reduced observation over the reals. `sigma_n2` is the
    /// pre-reduction complex noise variance per time sample; each real
    /// element of the reduced model then carries variance `n·σ_n²/2`.
    pub fn from_reduced(obs: &ReducedObservation, sigma_n2: f64, cfg: &SystemConfig) -> Self {
        RealLinearModel {
            y: real_stack_vec(&obs.y),
            h: real_stack(&obs.h),
            noise_var: cfg.n as f64 * sigma_n2 / 2.0,
            rho: cfg.rho,
            n_dft: cfg.n,
            normalized: false,
        }
    }

    /// Symbol energy `σ_d² = 2ρ²`.
    pub fn sigma_d2(&self) -> f64 {
        2.0 * self.rho * self.rho
    }

    /// SNR `γ = σ_d²·tr(HᵀH)/(n²·σ_n²)` of this model instance.
    pub fn gamma(&self) -> f64 {
        let trace = self.h.frobenius_norm().powi(2);
        let sigma_n2 = 2.0 * self.noise_var / self.n_dft as f64;
        self.sigma_d2() * trace / ((self.n_dft * self.n_dft) as f64 * sigma_n2)
    }

    /// Scale `y` and `H` by `√n/‖H‖_F`, equalizing the channel energy seen by
    /// a trained detector. Afterwards the noise variance per real element is
    /// exactly `σ_d²/(2γ)` — it depends on the operating point only.
    pub fn normalize(&mut self) {
        let c = (self.n_dft as f64).sqrt() / self.h.frobenius_norm();
        for v in &mut self.y {
            *v *= c;
        }
        for v in &mut self.h.data {
            *v *= c;
        }
        self.noise_var *= c * c;
        self.normalized = true;
    }

    /// `Hᵀy` and the full `HᵀH` (all entries computed directly).
    pub fn compress_full(&self) -> CompressedInput {
        let m = self.h.rows;
        let n = self.h.cols;
        let hty = self.h.transpose().matvec(&self.y);
        let mut hth = RMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += self.h.get(r, i) * self.h.get(r, j);
                }
                hth.set(i, j, acc);
            }
        }
        CompressedInput {
            hty,
            hth,
            mults: (n * n * m + n * m) as u64,
        }
    }

    /// `Hᵀy` and `HᵀH` computing only the upper triangle of the Gram matrix
    /// (mirrored afterwards) — the cheaper preparation used by the
    /// compressed-input network.
    pub fn compress_triangle(&self) -> CompressedInput {
        let m = self.h.rows;
        let n = self.h.cols;
        let hty = self.h.transpose().matvec(&self.y);
        let mut hth = RMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += self.h.get(r, i) * self.h.get(r, j);
                }
                hth.set(i, j, acc);
                hth.set(j, i, acc);
            }
        }
        let tri = n * (n + 1) / 2;
        CompressedInput {
            hty,
            hth,
            mults: (tri * m + n * m) as u64,
        }
    }
}

/// Inverse diagonal of a Gram matrix, for Jacobi preconditioning. Fails if
/// any diagonal entry is not strictly positive.
pub fn jacobi_preconditioner(hth: &RMatrix) -> Result<Vec<f64>> {
    assert_eq!(hth.rows, hth.cols);
    (0..hth.rows)
        .map(|i| {
            let d = hth.get(i, i);
            if d <= 1e-300 {
                Err(Error::SingularMatrix {
                    context: "jacobi preconditioner",
                    pivot: d,
                    index: i,
                })
            } else {
                Ok(1.0 / d)
            }
        })
        .collect()
}
