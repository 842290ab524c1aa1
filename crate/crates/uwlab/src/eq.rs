//! Model-based data estimators for the reduced linear observation
//! `y' = H'·d + ñ` with QPSK symbols.
//!
//! Exact (exponential-complexity) references:
//! * [`bitwise_map`] — per-bit posterior log-likelihood ratios from a full
//!   enumeration of the symbol hypercube,
//! * [`mmse`] — conditional-mean symbol estimates from the same enumeration,
//! * [`vector_ml`] — the maximum-likelihood symbol vector.
//!
//! Practical linear estimators:
//! * [`lmmse`] — regularized linear estimate with per-symbol Gaussian-
//!   approximation LLRs,
//! * [`dfe`] — sorted decision-feedback: best-first symbol-by-symbol
//!   detection with interference cancellation.
//!
//! All estimators emit a [`SoftEstimate`]: symbol estimates plus interleaved
//! bit LLRs (real-part bit, then imaginary-part bit, per symbol), positive
//! LLR meaning bit 1, magnitudes capped at [`LLR_MAX`].

use crate::numerics::{real_stack, real_stack_vec, CMatrix, RMatrix, C64};
use crate::{Error, Result};

/// Soft-output cap: |LLR| never exceeds this.
pub const LLR_MAX: f64 = 40.0;

/// Largest data-symbol count the exact enumerators accept (2 bits each).
pub const MAX_ENUM_SYMBOLS: usize = 10;

/// Shared estimator input: one reduced observation plus the noise and
/// constellation scales.
#[derive(Debug, Clone, Copy)]
pub struct EqualizerInput<'a> {
    /// Reduced observation `y'`.
    pub y: &'a [C64],
    /// Reduced channel `H'` (`(n_data+n_redundant) × n_data` or any tall shape).
    pub h: &'a CMatrix,
    /// Complex noise variance per element of `y'` (for a DFT length `n`
    /// system this is `n·σ_n²`).
    pub noise_var: f64,
    /// Per-component QPSK amplitude.
    pub rho: f64,
}

impl<'a> EqualizerInput<'a> {
    pub fn from_reduced(
        obs: &'a crate::model::ReducedObservation,
        sigma_n2: f64,
        cfg: &crate::model::SystemConfig,
    ) -> Self {
        EqualizerInput {
            y: &obs.y,
            h: &obs.h,
            noise_var: cfg.n as f64 * sigma_n2,
            rho: cfg.rho,
        }
    }

    /// Mean symbol energy `σ_d² = 2ρ²`.
    pub fn sigma_d2(&self) -> f64 {
        2.0 * self.rho * self.rho
    }
}

/// Symbol estimates with interleaved per-bit LLRs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftEstimate {
    /// Estimated data symbols. Hard-sliced for MAP/ML, conditional means for
    /// MMSE, unsliced linear estimates for LMMSE/DFE.
    pub symbols: Vec<C64>,
    /// `llr[2i]` is the real-part bit of symbol `i`, `llr[2i+1]` the
    /// imaginary-part bit; positive means bit 1.
    pub llr: Vec<f64>,
}

impl SoftEstimate {
    /// Hard bit decisions: LLR ≥ 0 ↦ 1 (the zero tie follows the slicer
    /// convention `sign(0) = +1`).
    pub fn hard_bits(&self) -> Vec<u8> {
        self.llr.iter().map(|&l| u8::from(l >= 0.0)).collect()
    }
}

/// Nearest QPSK point; ties on an axis go to `+ρ`.
pub fn slice_qpsk(z: C64, rho: f64) -> C64 {
    C64::new(
        if z.re >= 0.0 { rho } else { -rho },
        if z.im >= 0.0 { rho } else { -rho },
    )
}

#[inline]
fn cap_llr(l: f64) -> f64 {
    l.clamp(-LLR_MAX, LLR_MAX)
}

/// Candidate weights smaller than `exp(-EXP_SKIP)` relative to the best
/// candidate are dropped from posterior sums: below ~1e-26 relative they are
/// invisible at f64 accumulation precision.
const EXP_SKIP: f64 = 60.0;

/// Exhaustive QPSK enumeration over the real-stacked model, reusable across a
/// burst: the quadratic-form table depends only on `H'` and is built once;
/// each observation then costs one linear sweep.
///
/// Candidate index convention: bit `i` of the index sets the sign of real
/// component `i` (components 0..n_data-1 are real parts, n_data..2n_data-1
/// imaginary parts); bit 0 ↦ −ρ, bit 1 ↦ +ρ. ML metric ties resolve toward
/// the highest candidate index, i.e. +ρ in every tied component, matching
/// the sign(0) = +1 convention used by hard slicing throughout the crate.
pub struct ExactEnumeration {
    n_bits: usize,
    rho: f64,
    ht: RMatrix,
    /// `dᵀ(HᵀH)d` for every candidate, indexed by candidate bits.
    quad: Vec<f64>,
    /// scratch: full metric table for the current observation
    metric: Vec<f64>,
}

impl ExactEnumeration {
    pub fn new(h: &CMatrix, rho: f64) -> Result<Self> {
        let n_bits = 2 * h.cols;
        if h.cols > MAX_ENUM_SYMBOLS {
            return Err(Error::EnumerationTooLarge {
                bits: n_bits,
                limit: 2 * MAX_ENUM_SYMBOLS,
            });
        }
        let hr = real_stack(h);
        let q = hr.transpose().matmul(&hr);
        let n = n_bits;
        let total = 1usize << n;
        let mut quad = vec![0.0f64; total];
        // Gray-code walk: d starts at all -ρ, u = Q·d maintained incrementally
        let mut d = vec![-rho; n];
        let mut u = q.matvec(&d);
        let mut cur: f64 = d.iter().zip(&u).map(|(di, ui)| di * ui).sum();
        quad[0] = cur;
        for i in 1..total {
            let gray = i ^ (i >> 1);
            let flip = (i.trailing_zeros()) as usize;
            let new_bit = (gray >> flip) & 1;
            let delta = if new_bit == 1 { 2.0 * rho } else { -2.0 * rho };
            // (d+Δe_b)ᵀQ(d+Δe_b) = dᵀQd + 2Δ·u_b + Δ²·Q_bb
            cur += 2.0 * delta * u[flip] + delta * delta * q.get(flip, flip);
            quad[gray] = cur;
            for (uv, qv) in u.iter_mut().zip(q.row(flip)) {
                *uv += delta * qv;
            }
            d[flip] = -d[flip];
        }
        Ok(ExactEnumeration {
            n_bits,
            rho,
            ht: hr.transpose(),
            quad,
            metric: vec![0.0; total],
        })
    }

    /// Fill the per-candidate metric table `‖y−Hd‖² − ‖y‖² = dᵀQd − 2gᵀd`
    /// (the constant `‖y‖²` cancels everywhere) and return (min, argmin);
    /// argmin ties resolve to the highest candidate index (+ρ components),
    /// consistent with sign(0) = +1 hard slicing.
    fn fill_metrics(&mut self, y: &[C64]) -> (f64, usize) {
        let yr = real_stack_vec(y);
        let g = self.ht.matvec(&yr);
        let n = self.n_bits;
        let total = 1usize << n;
        // lin(d) = gᵀd walked in Gray order
        let mut lin: f64 = g.iter().map(|gi| -self.rho * gi).sum();
        self.metric[0] = self.quad[0] - 2.0 * lin;
        for i in 1..total {
            let gray = i ^ (i >> 1);
            let flip = (i.trailing_zeros()) as usize;
            let delta = if (gray >> flip) & 1 == 1 {
                2.0 * self.rho
            } else {
                -2.0 * self.rho
            };
            lin += delta * g[flip];
            self.metric[gray] = self.quad[gray] - 2.0 * lin;
        }
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (c, &m) in self.metric.iter().enumerate() {
            if m <= best {
                best = m;
                arg = c;
            }
        }
        (best, arg)
    }

    fn candidate_symbols(&self, c: usize) -> Vec<C64> {
        let nd = self.n_bits / 2;
        (0..nd)
            .map(|i| {
                let re = if (c >> i) & 1 == 1 { self.rho } else { -self.rho };
                let im = if (c >> (nd + i)) & 1 == 1 { self.rho } else { -self.rho };
                C64::new(re, im)
            })
            .collect()
    }

    /// Per-bit posterior LLRs: for every bit, the log-ratio of summed
    /// candidate weights with that bit 1 versus 0.
    pub fn map_llrs(&mut self, y: &[C64], noise_var: f64) -> SoftEstimate {
        let (m_min, _) = self.fill_metrics(y);
        let n = self.n_bits;
        let nd = n / 2;
        let mut s0 = vec![0.0f64; n];
        let mut s1 = vec![0.0f64; n];
        for (c, &m) in self.metric.iter().enumerate() {
            let a = (m - m_min) / noise_var;
            if a > EXP_SKIP {
                continue;
            }
            let w = (-a).exp();
            for (i, (s0i, s1i)) in s0.iter_mut().zip(s1.iter_mut()).enumerate() {
                if (c >> i) & 1 == 1 {
                    *s1i += w;
                } else {
                    *s0i += w;
                }
            }
        }
        // component order (re parts then im parts) → interleaved bit order
        let mut llr = vec![0.0f64; n];
        for i in 0..nd {
            llr[2 * i] = cap_llr(log_ratio(s1[i], s0[i]));
            llr[2 * i + 1] = cap_llr(log_ratio(s1[nd + i], s0[nd + i]));
        }
        let symbols = (0..nd)
            .map(|i| {
                C64::new(
                    if llr[2 * i] >= 0.0 { self.rho } else { -self.rho },
                    if llr[2 * i + 1] >= 0.0 { self.rho } else { -self.rho },
                )
            })
            .collect();
        SoftEstimate { symbols, llr }
    }

    /// Conditional-mean (posterior-expectation) symbol estimates, with LLRs
    /// from the per-component mean `x` via `ln((ρ+x)/(ρ−x))`.
    pub fn posterior_mean(&mut self, y: &[C64], noise_var: f64) -> SoftEstimate {
        if noise_var <= 0.0 {
            // degenerate posterior: all mass on the ML candidate
            let mut est = self.ml(y);
            return est_take_hard(&mut est);
        }
        let (m_min, _) = self.fill_metrics(y);
        let n = self.n_bits;
        let nd = n / 2;
        let mut wsum = 0.0f64;
        let mut comp = vec![0.0f64; n]; // Σ w·d_i (signed)
        for (c, &m) in self.metric.iter().enumerate() {
            let a = (m - m_min) / noise_var;
            if a > EXP_SKIP {
                continue;
            }
            let w = (-a).exp();
            wsum += w;
            for (i, ci) in comp.iter_mut().enumerate() {
                if (c >> i) & 1 == 1 {
                    *ci += w;
                } else {
                    *ci -= w;
                }
            }
        }
        let mean: Vec<f64> = comp.iter().map(|s| self.rho * s / wsum).collect();
        let mut llr = vec![0.0f64; n];
        let mut symbols = Vec::with_capacity(nd);
        for i in 0..nd {
            llr[2 * i] = mean_to_llr(mean[i], self.rho);
            llr[2 * i + 1] = mean_to_llr(mean[nd + i], self.rho);
            symbols.push(C64::new(mean[i], mean[nd + i]));
        }
        SoftEstimate { symbols, llr }
    }

    /// Maximum-likelihood candidate (hard decisions; LLRs saturate at the cap).
    pub fn ml(&mut self, y: &[C64]) -> SoftEstimate {
        let (_, arg) = self.fill_metrics(y);
        let symbols = self.candidate_symbols(arg);
        let nd = self.n_bits / 2;
        let mut llr = vec![0.0f64; self.n_bits];
        for i in 0..nd {
            llr[2 * i] = if (arg >> i) & 1 == 1 { LLR_MAX } else { -LLR_MAX };
            llr[2 * i + 1] = if (arg >> (nd + i)) & 1 == 1 {
                LLR_MAX
            } else {
                -LLR_MAX
            };
        }
        SoftEstimate { symbols, llr }
    }
}

fn est_take_hard(est: &mut SoftEstimate) -> SoftEstimate {
    SoftEstimate {
        symbols: std::mem::take(&mut est.symbols),
        llr: std::mem::take(&mut est.llr),
    }
}

/// `ln(a/b)` with empty-side saturation.
fn log_ratio(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        return -LLR_MAX;
    }
    if b <= 0.0 {
        return LLR_MAX;
    }
    (a / b).ln()
}

/// `ln((ρ+x)/(ρ−x))`, the bit LLR of a posterior mean component, clamped
/// away from the singular endpoints.
fn mean_to_llr(x: f64, rho: f64) -> f64 {
    const EPS: f64 = 1e-12;
    let num = (rho + x).max(EPS);
    let den = (rho - x).max(EPS);
    cap_llr((num / den).ln())
}

/// Exact per-bit MAP detection. One-shot convenience over
/// [`ExactEnumeration`]; build the enumeration yourself to amortize over a
/// burst.
pub fn bitwise_map(input: &EqualizerInput) -> Result<SoftEstimate> {
    let mut e = ExactEnumeration::new(input.h, input.rho)?;
    Ok(e.map_llrs(input.y, input.noise_var))
}

/// Exact conditional-mean (MMSE) detection.
pub fn mmse(input: &EqualizerInput) -> Result<SoftEstimate> {
    let mut e = ExactEnumeration::new(input.h, input.rho)?;
    Ok(e.posterior_mean(input.y, input.noise_var))
}

/// Exact maximum-likelihood vector detection.
pub fn vector_ml(input: &EqualizerInput) -> Result<SoftEstimate> {
    let mut e = ExactEnumeration::new(input.h, input.rho)?;
    Ok(e.ml(input.y))
}

/// Linear MMSE equalizer prepared for one channel: the filter matrix and the
/// per-symbol bias/variance statistics its Gaussian-approximation LLRs use.
pub struct LinearMmseEqualizer {
    /// Filter rows `E = (HᴴH + (ν/σ_d²)I)⁻¹Hᴴ`.
    e: CMatrix,
    /// `α_i = Re{(E·H)_ii}`: signal gain after filtering.
    alpha: Vec<f64>,
    /// Residual interference-plus-noise variance per symbol.
    sigma2: Vec<f64>,
    rho: f64,
}

impl LinearMmseEqualizer {
    /// `noise_var` is the complex noise variance per element of `y'`.
    pub fn new(h: &CMatrix, noise_var: f64, rho: f64) -> Result<Self> {
        let sigma_d2 = 2.0 * rho * rho;
        let nd = h.cols;
        let mut r = h.gram();
        r.add_diagonal(noise_var / sigma_d2);
        let inv = r.cholesky("linear MMSE gram")?.inverse();
        let e = inv.matmul(&h.hermitian());
        let v = e.matmul(h); // v[i,j] = e_iᴴ·h_j
        let mut alpha = Vec::with_capacity(nd);
        let mut sigma2 = Vec::with_capacity(nd);
        for i in 0..nd {
            let vii = v[(i, i)];
            alpha.push(vii.re);
            let row_energy: f64 = (0..nd).map(|j| v[(i, j)].norm_sqr()).sum();
            let e_energy: f64 = (0..e.cols).map(|m| e[(i, m)].norm_sqr()).sum();
            // residual: σ_d²·Σ_{j≠i}|e_iᴴh_j|² + ν·‖e_i‖²
            sigma2.push(sigma_d2 * (row_energy - vii.norm_sqr()) + noise_var * e_energy);
        }
        Ok(LinearMmseEqualizer {
            e,
            alpha,
            sigma2,
            rho,
        })
    }

    pub fn estimate(&self, y: &[C64]) -> SoftEstimate {
        let d = self.e.matvec(y);
        let mut llr = Vec::with_capacity(2 * d.len());
        for (i, di) in d.iter().enumerate() {
            let scale = 4.0 * self.alpha[i] * self.rho / self.sigma2[i];
            llr.push(cap_llr(scale * di.re));
            llr.push(cap_llr(scale * di.im));
        }
        SoftEstimate { symbols: d, llr }
    }

    /// Conditional moments of the filtered estimate of symbol `i`: given
    /// the channel and `d_i`, the estimate is (approximately) complex
    /// Gaussian with mean `α_i·d_i` and variance `σ_i²` — the model behind
    /// this filter's LLRs.
    pub fn conditional_moments(&self, i: usize) -> (f64, f64) {
        (self.alpha[i], self.sigma2[i])
    }
}

/// Linear MMSE detection with Gaussian-approximation bit LLRs.
pub fn lmmse(input: &EqualizerInput) -> Result<SoftEstimate> {
    Ok(LinearMmseEqualizer::new(input.h, input.noise_var, input.rho)?.estimate(input.y))
}

/// One cancellation stage of the sorted decision-feedback equalizer.
struct DfeStage {
    /// Filter row `e_kᴴ` applied to the running residual observation.
    e_row: Vec<C64>,
    /// Channel column removed after this stage (scaled by the sliced symbol
    /// and subtracted).
    col: Vec<C64>,
    /// Index of the detected symbol in the original data vector.
    orig_index: usize,
    alpha: f64,
    sigma2: f64,
}

/// Sorted decision-feedback equalizer prepared for one channel: stage order
/// and filters depend only on `H'`, so one preparation serves a whole burst.
///
/// Each stage regularized-inverts the remaining channel, picks the symbol
/// with the smallest posterior error variance (ties → lowest index), emits
/// its estimate and LLRs, slices it, and cancels its contribution.
pub struct DecisionFeedbackEqualizer {
    stages: Vec<DfeStage>,
    rho: f64,
    n_data: usize,
}

impl DecisionFeedbackEqualizer {
    pub fn new(h: &CMatrix, noise_var: f64, rho: f64) -> Result<Self> {
        let sigma_d2 = 2.0 * rho * rho;
        let n_data = h.cols;
        let mut hk = h.clone();
        let mut remaining: Vec<usize> = (0..n_data).collect();
        let mut stages = Vec::with_capacity(n_data);
        for _ in 0..n_data {
            let cols = hk.cols;
            let mut r = hk.gram();
            r.add_diagonal(noise_var / sigma_d2);
            let a = r.cholesky("decision feedback gram")?.inverse();
            // error covariance ∝ A: choose the most reliable symbol
            let mut j = 0usize;
            let mut best = f64::INFINITY;
            for m in 0..cols {
                let v = a[(m, m)].re;
                if v < best {
                    best = v;
                    j = m;
                }
            }
            // e_kᴴ = A[j,·]·Hᴴ
            let e_row: Vec<C64> = (0..hk.rows)
                .map(|m| {
                    let mut acc = C64::new(0.0, 0.0);
                    for c in 0..cols {
                        acc += a[(j, c)] * hk[(m, c)].conj();
                    }
                    acc
                })
                .collect();
            // filtered-channel row for the bias/variance statistics
            let v_row: Vec<C64> = (0..cols)
                .map(|c| {
                    let mut acc = C64::new(0.0, 0.0);
                    for m in 0..hk.rows {
                        acc += e_row[m] * hk[(m, c)];
                    }
                    acc
                })
                .collect();
            let alpha = v_row[j].re;
            let row_energy: f64 = v_row.iter().map(|z| z.norm_sqr()).sum();
            let e_energy: f64 = e_row.iter().map(|z| z.norm_sqr()).sum();
            let sigma2 =
                sigma_d2 * (row_energy - v_row[j].norm_sqr()) + noise_var * e_energy;
            stages.push(DfeStage {
                e_row,
                col: hk.column(j),
                orig_index: remaining[j],
                alpha,
                sigma2,
            });
            hk = hk.without_column(j);
            remaining.remove(j);
        }
        Ok(DecisionFeedbackEqualizer {
            stages,
            rho,
            n_data,
        })
    }

    pub fn estimate(&self, y: &[C64]) -> SoftEstimate {
        let mut yk = y.to_vec();
        let mut symbols = vec![C64::new(0.0, 0.0); self.n_data];
        let mut llr = vec![0.0f64; 2 * self.n_data];
        for stage in &self.stages {
            let mut d = C64::new(0.0, 0.0);
            for (e, v) in stage.e_row.iter().zip(&yk) {
                d += e * v;
            }
            let scale = 4.0 * stage.alpha * self.rho / stage.sigma2;
            symbols[stage.orig_index] = d;
            llr[2 * stage.orig_index] = cap_llr(scale * d.re);
            llr[2 * stage.orig_index + 1] = cap_llr(scale * d.im);
            let hard = slice_qpsk(d, self.rho);
            for (yv, c) in yk.iter_mut().zip(&stage.col) {
                *yv -= c * hard;
            }
        }
        SoftEstimate { symbols, llr }
    }
}

/// Sorted decision-feedback detection.
pub fn dfe(input: &EqualizerInput) -> Result<SoftEstimate> {
    Ok(DecisionFeedbackEqualizer::new(input.h, input.noise_var, input.rho)?.estimate(input.y))
}
