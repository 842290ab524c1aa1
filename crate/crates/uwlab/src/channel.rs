//! Multipath channel model: an exponentially decaying tapped delay line with
//! Rayleigh-fading taps, plus the helpers the simulations need — time-domain
//! application with additive noise, per-subcarrier frequency response, and
//! mining of adverse ("deep notch") realizations for training sets.

use num_complex::Complex64;
use rand::Rng;

use crate::numerics::C64;
use crate::rng::{complex_normal, substream, StreamDomain};

/// Statistical description of the tapped delay line.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelProfile {
    /// Sample period in seconds.
    pub t_s: f64,
    /// RMS delay spread of the underlying exponential profile, in seconds.
    pub tau_rms: f64,
    /// Number of taps kept after truncation.
    pub n_taps: usize,
}

impl ChannelProfile {
    /// Profile truncated where the exponential has decayed through ten RMS
    /// delay spreads: `n_taps = ceil(10·τ/T_s) + 1`.
    pub fn new(t_s: f64, tau_rms: f64) -> Self {
        let n_taps = (10.0 * tau_rms / t_s).ceil() as usize + 1;
        ChannelProfile { t_s, tau_rms, n_taps }
    }

    /// Mean tap powers `p_k ∝ exp(-k·T_s/τ)`, normalized to sum to one.
    pub fn tap_powers(&self) -> Vec<f64> {
        let r = (-self.t_s / self.tau_rms).exp();
        let mut p: Vec<f64> = (0..self.n_taps).map(|k| r.powi(k as i32)).collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        p
    }

    /// RMS delay spread of the *sampled, truncated* profile — slightly below
    /// the nominal `tau_rms` because of truncation and discretization.
    pub fn sampled_rms_delay_spread(&self) -> f64 {
        let p = self.tap_powers();
        let mean: f64 = p
            .iter()
            .enumerate()
            .map(|(k, pk)| pk * k as f64 * self.t_s)
            .sum();
        let second: f64 = p
            .iter()
            .enumerate()
            .map(|(k, pk)| pk * (k as f64 * self.t_s).powi(2))
            .sum();
        (second - mean * mean).sqrt()
    }

    /// Draw one realization: independent circularly-symmetric Gaussian taps
    /// with variances `p_k` (Rayleigh-fading magnitudes).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let taps = self
            .tap_powers()
            .iter()
            .map(|&pk| complex_normal(rng, pk))
            .collect();
        ChannelRealization { taps }
    }
}

/// One set of channel tap values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelRealization {
    pub taps: Vec<C64>,
}

impl ChannelRealization {
    /// Frequency response on an `n`-point DFT grid:
    /// `H[l] = Σ_k taps[k]·exp(-i2πlk/n)`.
    pub fn frequency_response(&self, n: usize) -> Vec<C64> {
        let w = -2.0 * std::f64::consts::PI / n as f64;
        (0..n)
            .map(|l| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, tap) in self.taps.iter().enumerate() {
                    let e = w * ((l * k) % n) as f64;
                    acc += tap * Complex64::new(e.cos(), e.sin());
                }
                acc
            })
            .collect()
    }

    /// Cyclic convolution of `x` with the taps, plus complex Gaussian noise
    /// of total variance `sigma_n2` per sample. The cyclic form models the
    /// steady state in which every block is preceded by the same fixed word,
    /// so inter-block interference looks like a circular wrap.
    pub fn transmit<R: Rng + ?Sized>(&self, x: &[C64], sigma_n2: f64, rng: &mut R) -> Vec<C64> {
        let n = x.len();
        let mut r = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, tap) in self.taps.iter().enumerate() {
                let idx = (t + n - (k % n)) % n;
                acc += tap * x[idx];
            }
            r[t] = acc;
        }
        if sigma_n2 > 0.0 {
            for v in &mut r {
                *v += complex_normal(rng, sigma_n2);
            }
        }
        r
    }

    /// Severity metric used for mining: the worst (smallest) per-subcarrier
    /// power `|H[l]|²` over the indices that actually carry symbols. Deep
    /// notches on used subcarriers are what break linear equalizers.
    pub fn severity(&self, n: usize, used_subcarriers: &[usize]) -> f64 {
        let h = self.frequency_response(n);
        used_subcarriers
            .iter()
            .map(|&l| h[l].norm_sqr())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Draw `pool` candidate realizations and keep the `want` most severe
/// (smallest min-subcarrier-power) ones. Deterministic given the seed: the
/// pool comes from [`StreamDomain::Mining`] substreams and ties resolve by
/// draw index.
pub fn mine_bad_channels(
    profile: &ChannelProfile,
    n: usize,
    used_subcarriers: &[usize],
    want: usize,
    pool: usize,
    seed: u64,
) -> Vec<ChannelRealization> {
    mine_bad_channel_indices(profile, n, used_subcarriers, want, pool, seed)
        .into_iter()
        .map(|i| profile.draw(&mut substream(seed, StreamDomain::Mining, i)))
        .collect()
}

/// Like [`mine_bad_channels`], but returns the winners' draw indices within
/// the [`StreamDomain::Mining`] substream family. An index is a compact,
/// exact recipe for its realization: redrawing
/// `substream(seed, Mining, index)` reproduces the channel, so datasets can
/// persist indices instead of tap values.
pub fn mine_bad_channel_indices(
    profile: &ChannelProfile,
    n: usize,
    used_subcarriers: &[usize],
    want: usize,
    pool: usize,
    seed: u64,
) -> Vec<u64> {
    assert!(pool >= want, "mining pool smaller than requested count");
    let mut scored: Vec<(f64, u64)> = (0..pool as u64)
        .map(|i| {
            let mut rng = substream(seed, StreamDomain::Mining, i);
            let ch = profile.draw(&mut rng);
            (ch.severity(n, used_subcarriers), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(want).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamDomain};

    const SYS_I_TS: f64 = 200e-9;
    const SYS_II_TS: f64 = 50e-9;
    const TAU: f64 = 100e-9;

    #[test]
    fn truncation_rule_matches_presets() {
        assert_eq!(ChannelProfile::new(SYS_I_TS, TAU).n_taps, 6);
        assert_eq!(ChannelProfile::new(SYS_II_TS, TAU).n_taps, 21);
    }

    #[test]
    fn tap_powers_normalized_exponential() {
        let p = ChannelProfile::new(SYS_I_TS, TAU).tap_powers();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ratio = (-SYS_I_TS / TAU).exp();
        for k in 0..p.len() - 1 {
            assert!((p[k + 1] / p[k] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_rms_delay_spread_close_at_fine_sampling() {
        // At the finer sampling the discretized profile reproduces the
        // nominal RMS delay spread within 10%; the coarse 200 ns grid is
        // dominated by discretization bias and is only reported, not asserted.
        let fine = ChannelProfile::new(SYS_II_TS, TAU).sampled_rms_delay_spread();
        assert!(
            (fine - TAU).abs() <= 0.10 * TAU,
            "sampled RMS delay spread {fine:.3e} vs nominal {TAU:.3e}"
        );
    }

    #[test]
    fn empirical_tap_power_matches_profile() {
        let profile = ChannelProfile::new(SYS_I_TS, TAU);
        let p = profile.tap_powers();
        let n_draws = 20_000;
        let mut acc = vec![0.0f64; profile.n_taps];
        for i in 0..n_draws {
            let mut rng = substream(3, StreamDomain::Scratch, i);
            let ch = profile.draw(&mut rng);
            for (a, t) in acc.iter_mut().zip(&ch.taps) {
                *a += t.norm_sqr();
            }
        }
        for (k, (a, pk)) in acc.iter().zip(&p).enumerate() {
            let mean = a / n_draws as f64;
            assert!(
                (mean - pk).abs() <= 0.05 * pk,
                "tap {k}: empirical {mean:.4e} vs nominal {pk:.4e}"
            );
        }
    }

    #[test]
    fn cyclic_convolution_frozen_case() {
        // taps [1, 0.5i], x = [1,2,3,4] on a 4-point ring:
        // r[t] = x[t] + 0.5i·x[(t-1) mod 4]
        let ch = ChannelRealization {
            taps: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.5)],
        };
        let x = [
            C64::new(1.0, 0.0),
            C64::new(2.0, 0.0),
            C64::new(3.0, 0.0),
            C64::new(4.0, 0.0),
        ];
        let mut rng = substream(0, StreamDomain::Scratch, 0);
        let r = ch.transmit(&x, 0.0, &mut rng);
        let expect = [
            C64::new(1.0, 2.0),
            C64::new(2.0, 0.5),
            C64::new(3.0, 1.0),
            C64::new(4.0, 1.5),
        ];
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn frequency_response_matches_dft_of_padded_taps() {
        let profile = ChannelProfile::new(SYS_I_TS, TAU);
        let mut rng = substream(5, StreamDomain::Scratch, 0);
        let ch = profile.draw(&mut rng);
        let n = 12;
        let h = ch.frequency_response(n);
        let f = crate::numerics::dft_matrix(n);
        let mut padded = vec![C64::new(0.0, 0.0); n];
        padded[..ch.taps.len()].copy_from_slice(&ch.taps);
        let h2 = f.matvec(&padded);
        for (a, b) in h.iter().zip(&h2) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn mean_subcarrier_gain_is_unit() {
        // E|H[l]|² = Σ p_k = 1 at every subcarrier
        let profile = ChannelProfile::new(SYS_I_TS, TAU);
        let n = 12;
        let draws = 20_000;
        let mut acc = 0.0;
        for i in 0..draws {
            let mut rng = substream(9, StreamDomain::Scratch, i);
            let h = profile.draw(&mut rng).frequency_response(n);
            acc += h.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean gain {mean}");
    }

    #[test]
    fn mined_channels_are_deep_notches() {
        let profile = ChannelProfile::new(SYS_I_TS, TAU);
        let n = 12;
        let used: Vec<usize> = (0..12).collect();
        // median severity of a random population
        let mut sev: Vec<f64> = (0..200)
            .map(|i| {
                let mut rng = substream(21, StreamDomain::Channel, i);
                profile.draw(&mut rng).severity(n, &used)
            })
            .collect();
        sev.sort_by(f64::total_cmp);
        let median = sev[sev.len() / 2];
        // mining with a 100× pool factor must find far deeper notches
        let mined = mine_bad_channels(&profile, n, &used, 2, 200, 21);
        for ch in &mined {
            let s = ch.severity(n, &used);
            let gap_db = 10.0 * (median / s).log10();
            assert!(
                gap_db >= 10.0,
                "mined severity {s:.3e} only {gap_db:.1} dB below median {median:.3e}"
            );
        }
    }

    #[test]
    fn mining_is_deterministic() {
        let profile = ChannelProfile::new(SYS_I_TS, TAU);
        let used: Vec<usize> = (0..12).collect();
        let a = mine_bad_channels(&profile, 12, &used, 3, 50, 77);
        let b = mine_bad_channels(&profile, 12, &used, 3, 50, 77);
        assert_eq!(a, b);
    }
}
