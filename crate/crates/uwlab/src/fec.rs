//! Rate-1/2 convolutional code (generators 133/171 octal, constraint
//! length 7) with zero-tail termination and soft-decision Viterbi decoding.
//!
//! Encoding convention: the 7-bit parity window holds the newest input bit
//! in the most significant position; code bits `(c0, c1)` are interleaved in
//! the output. Six zero tail bits terminate each block in state 0.
//!
//! The decoder consumes one LLR per code bit (positive ⇒ bit 1) and
//! maximizes the correlation metric `Σ (2c−1)·LLR` over terminated paths;
//! add-compare-select ties keep the lower predecessor state.

use crate::{Error, Result};

/// Constraint length (memory 6, 64 trellis states).
pub const CONSTRAINT_LENGTH: usize = 7;
/// Zero tail bits appended to terminate the trellis.
pub const TAIL_BITS: usize = CONSTRAINT_LENGTH - 1;
/// Code rate.
pub const RATE: f64 = 0.5;

const STATES: usize = 1 << (CONSTRAINT_LENGTH - 1);
const G0: u32 = 0o133; // 1011011₂, newest bit at the MSB of the window
const G1: u32 = 0o171; // 1111001₂

#[inline]
fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

#[inline]
fn branch_output(window: u32) -> (u8, u8) {
    (parity(window & G0), parity(window & G1))
}

/// Number of code bits produced for `n_msg` message bits.
pub fn coded_len(n_msg: usize) -> usize {
    2 * (n_msg + TAIL_BITS)
}

/// Largest message length whose zero-terminated codeword fits in `n_code`
/// code bits (None if even an empty message does not fit).
pub fn message_len_for(n_code: usize) -> Option<usize> {
    (n_code / 2).checked_sub(TAIL_BITS)
}

/// Encode `message` (bits 0/1) with six zero tail bits; output code bits
/// `(c0, c1)` interleaved.
pub fn conv_encode(message: &[u8]) -> Vec<u8> {
    let mut state: u32 = 0;
    let mut out = Vec::with_capacity(coded_len(message.len()));
    for &b in message.iter().chain(std::iter::repeat_n(&0u8, TAIL_BITS)) {
        debug_assert!(b <= 1, "bits must be 0 or 1");
        let window = ((b as u32) << (CONSTRAINT_LENGTH - 1)) | state;
        let (c0, c1) = branch_output(window);
        out.push(c0);
        out.push(c1);
        state = window >> 1;
    }
    out
}

/// Soft-decision Viterbi decoding of a zero-terminated block: `llr` holds
/// one value per code bit (positive ⇒ bit 1), `n_msg` the message length.
/// Returns the decoded message bits.
pub fn viterbi_decode(llr: &[f64], n_msg: usize) -> Result<Vec<u8>> {
    let n_steps = n_msg + TAIL_BITS;
    if llr.len() != 2 * n_steps {
        return Err(Error::DimensionMismatch {
            context: "viterbi decoder",
            details: format!(
                "expected {} code LLRs for {} message bits, got {}",
                2 * n_steps,
                n_msg,
                llr.len()
            ),
        });
    }
    let mut scores = vec![f64::NEG_INFINITY; STATES];
    scores[0] = 0.0;
    // survivor[t][next_state] = (prev_state, input bit)
    let mut survivor: Vec<Vec<(u8, u8)>> = Vec::with_capacity(n_steps);
    let mut next = vec![f64::NEG_INFINITY; STATES];
    for t in 0..n_steps {
        let l0 = llr[2 * t];
        let l1 = llr[2 * t + 1];
        next.fill(f64::NEG_INFINITY);
        let mut surv = vec![(0u8, 0u8); STATES];
        // tail steps carry known zero inputs
        let inputs: &[u32] = if t < n_msg { &[0, 1] } else { &[0] };
        for s in 0..STATES as u32 {
            let base = scores[s as usize];
            if base == f64::NEG_INFINITY {
                continue;
            }
            for &b in inputs {
                let window = (b << (CONSTRAINT_LENGTH - 1)) | s;
                let (c0, c1) = branch_output(window);
                let metric = base
                    + (2.0 * c0 as f64 - 1.0) * l0
                    + (2.0 * c1 as f64 - 1.0) * l1;
                let ns = (window >> 1) as usize;
                // strict '>' keeps the earlier (lower) predecessor on ties
                if metric > next[ns] {
                    next[ns] = metric;
                    surv[ns] = (s as u8, b as u8);
                }
            }
        }
        std::mem::swap(&mut scores, &mut next);
        survivor.push(surv);
    }
    // terminated: trace back from state 0
    let mut state = 0usize;
    let mut bits = vec![0u8; n_steps];
    for t in (0..n_steps).rev() {
        let (prev, b) = survivor[t][state];
        bits[t] = b;
        state = prev as usize;
    }
    bits.truncate(n_msg);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_bits, standard_normal, substream, StreamDomain};

    #[test]
    fn impulse_response_frozen_oracle() {
        // a single 1 followed by the tail reads out both generators
        let coded = conv_encode(&[1]);
        assert_eq!(coded, vec![1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn coded_length_accounting() {
        assert_eq!(conv_encode(&[]).len(), 12);
        assert_eq!(conv_encode(&random_bits(
            &mut substream(1, StreamDomain::Scratch, 0),
            50
        ))
        .len(), coded_len(50));
        assert_eq!(message_len_for(coded_len(50)), Some(50));
        assert_eq!(message_len_for(4), None);
    }

    #[test]
    fn noiseless_round_trip() {
        let mut rng = substream(2, StreamDomain::Scratch, 0);
        for len in [1usize, 8, 64, 200] {
            let msg = random_bits(&mut rng, len);
            let coded = conv_encode(&msg);
            let llr: Vec<f64> = coded.iter().map(|&c| (2.0 * c as f64 - 1.0) * 10.0).collect();
            assert_eq!(viterbi_decode(&llr, len).unwrap(), msg);
        }
    }

    #[test]
    fn decoder_rejects_wrong_llr_count() {
        assert!(matches!(
            viterbi_decode(&[0.0; 10], 8),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    /// Exhaustive reference: encode every possible message and pick the one
    /// whose codeword best correlates with the LLRs.
    fn brute_force_decode(llr: &[f64], n_msg: usize) -> Vec<u8> {
        let mut best = f64::NEG_INFINITY;
        let mut best_msg = vec![0u8; n_msg];
        for c in 0..(1usize << n_msg) {
            let msg: Vec<u8> = (0..n_msg).map(|i| ((c >> i) & 1) as u8).collect();
            let coded = conv_encode(&msg);
            let score: f64 = coded
                .iter()
                .zip(llr)
                .map(|(&cb, &l)| (2.0 * cb as f64 - 1.0) * l)
                .sum();
            if score > best {
                best = score;
                best_msg = msg;
            }
        }
        best_msg
    }

    #[test]
    fn viterbi_matches_exhaustive_search_under_noise() {
        let n_msg = 8;
        for trial in 0..20u64 {
            let mut rng = substream(3, StreamDomain::Scratch, trial);
            let msg = random_bits(&mut rng, n_msg);
            let coded = conv_encode(&msg);
            let llr: Vec<f64> = coded
                .iter()
                .map(|&c| (2.0 * c as f64 - 1.0) * 2.0 + 1.5 * standard_normal(&mut rng))
                .collect();
            let vit = viterbi_decode(&llr, n_msg).unwrap();
            let brute = brute_force_decode(&llr, n_msg);
            assert_eq!(vit, brute, "trial {trial}");
        }
    }

    #[test]
    fn corrects_a_few_flipped_code_bits() {
        let mut rng = substream(4, StreamDomain::Scratch, 7);
        let msg = random_bits(&mut rng, 32);
        let coded = conv_encode(&msg);
        let mut llr: Vec<f64> = coded.iter().map(|&c| (2.0 * c as f64 - 1.0) * 5.0).collect();
        // flip three well-separated code bits to confidently-wrong values
        for &pos in &[5usize, 30, 61] {
            llr[pos] = -llr[pos] / 5.0;
        }
        assert_eq!(viterbi_decode(&llr, 32).unwrap(), msg);
    }

    #[test]
    fn coding_gain_on_the_gaussian_channel() {
        // at E_b/N_0 = 6 dB the decoded BER must be far below uncoded BPSK
        let ebn0 = 10f64.powf(0.6);
        let n_msg = 64;
        let trials = 400;
        let mut coded_errs = 0usize;
        let mut uncoded_errs = 0usize;
        let mut total = 0usize;
        for t in 0..trials {
            let mut rng = substream(5, StreamDomain::Scratch, t);
            let msg = random_bits(&mut rng, n_msg);
            let coded = conv_encode(&msg);
            // per-dimension noise: σ² = 1/(2·R·E_b/N_0) for unit-energy code bits
            let sigma = (1.0 / (2.0 * RATE * ebn0)).sqrt();
            let llr: Vec<f64> = coded
                .iter()
                .map(|&c| (2.0 * c as f64 - 1.0) + sigma * standard_normal(&mut rng))
                .collect();
            let dec = viterbi_decode(&llr, n_msg).unwrap();
            coded_errs += dec.iter().zip(&msg).filter(|(a, b)| a != b).count();
            // uncoded reference: same E_b, σ² = 1/(2·E_b/N_0)
            let sigma_u = (1.0 / (2.0 * ebn0)).sqrt();
            uncoded_errs += msg
                .iter()
                .filter(|&&b| {
                    let r = (2.0 * b as f64 - 1.0) + sigma_u * standard_normal(&mut rng);
                    u8::from(r >= 0.0) != b
                })
                .count();
            total += n_msg;
        }
        let coded_ber = coded_errs as f64 / total as f64;
        let uncoded_ber = uncoded_errs as f64 / total as f64;
        assert!(
            uncoded_ber > 0.0 && coded_ber < uncoded_ber / 3.0,
            "coded {coded_ber:.2e} vs uncoded {uncoded_ber:.2e}"
        );
    }
}
