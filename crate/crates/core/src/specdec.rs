//! Length distribution of one speculative-decoding verify step.
//!
//! The draft proposes `n_cand` tokens, each correct independently with
//! probability `p`. Verification keeps the longest correct prefix and the
//! target appends one token of its own, so a step yields `k` tokens with
//!
//! ```text
//! P[k] = p^(k-1) * (1 - p)   for k = 1..=n_cand
//! P[k] = p^n_cand            for k = n_cand + 1
//! ```
//!
//! and `E[k] = 1 + p + ... + p^n_cand = (1 - p^(n_cand+1)) / (1 - p)`.

use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore};

/// Validated `(p, n_cand)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceModel {
    p: f64,
    n_cand: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptanceError {
    ProbabilityOutOfRange(f64),
    ZeroCandidates,
}

impl fmt::Display for AcceptanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ProbabilityOutOfRange(p) => write!(f, "p = {p} is outside [0, 1]"),
            Self::ZeroCandidates => f.write_str("n_cand must be >= 1"),
        }
    }
}

impl AcceptanceModel {
    pub fn new(p: f64, n_cand: u32) -> Result<Self, AcceptanceError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(AcceptanceError::ProbabilityOutOfRange(p));
        }
        if n_cand == 0 {
            return Err(AcceptanceError::ZeroCandidates);
        }
        Ok(Self { p, n_cand })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n_cand(&self) -> u32 {
        self.n_cand
    }

    /// Probabilities for `k = 1..=n_cand + 1`; index `i` holds `P[k = i + 1]`.
    pub fn pmf(&self) -> Vec<f64> {
        let n = self.n_cand as usize;
        let mut out = Vec::with_capacity(n + 1);
        let mut run = 1.0; // p^(k-1)
        for _ in 0..n {
            out.push(run * (1.0 - self.p));
            run *= self.p;
        }
        out.push(run);
        out
    }

    /// Mean tokens per verify step.
    ///
    /// Evaluated as the finite geometric sum in Horner form, which equals the
    /// closed form above and stays accurate as `p -> 1` (where the closed
    /// form is 0/0). At `p = 1` it returns `n_cand + 1` exactly.
    pub fn expected_accepted(&self) -> f64 {
        if self.p == 1.0 {
            return f64::from(self.n_cand) + 1.0;
        }
        let mut acc = 1.0;
        for _ in 0..self.n_cand {
            acc = 1.0 + self.p * acc;
        }
        acc
    }

    /// Draws one step length in `1..=n_cand + 1`.
    pub fn sample_accepted<R: RngCore + ?Sized>(&self, rng: &mut R) -> u32 {
        let mut k = 1;
        // `random::<f64>()` is in [0, 1): always below p = 1, never below p = 0.
        while k <= self.n_cand && rng.random::<f64>() < self.p {
            k += 1;
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(p: f64, n: u32) -> AcceptanceModel {
        AcceptanceModel::new(p, n).unwrap()
    }

    /// Brute-force expectation: dot product of k with the pmf.
    fn pmf_mean(m: &AcceptanceModel) -> f64 {
        m.pmf()
            .iter()
            .enumerate()
            .map(|(i, q)| (i + 1) as f64 * q)
            .sum()
    }

    #[test]
    fn pmf_half_two() {
        assert_eq!(model(0.5, 2).pmf(), [0.5, 0.25, 0.25]);
    }

    #[test]
    fn pmf_degenerate_ends() {
        let mut zero = alloc::vec![0.0; 9];
        zero[0] = 1.0;
        assert_eq!(model(0.0, 8).pmf(), zero);
        assert_eq!(model(1.0, 4).pmf(), [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn expectation_values() {
        assert_eq!(model(0.5, 2).expected_accepted(), 1.75);
        for n in 1..=32 {
            assert_eq!(model(0.0, n).expected_accepted(), 1.0);
        }
        assert_eq!(model(1.0, 8).expected_accepted(), 9.0);
    }

    #[test]
    fn expectation_near_one_is_stable() {
        let m = model(1.0 - 1e-9, 16);
        assert!((m.expected_accepted() - pmf_mean(&m)).abs() < 1e-12);
        assert!(m.expected_accepted() < 17.0);
    }

    #[test]
    fn sampling_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(model(0.0, 4).sample_accepted(&mut rng), 1);
            assert_eq!(model(1.0, 4).sample_accepted(&mut rng), 5);
        }
    }

    #[test]
    fn sampling_mean_half_two() {
        let m = model(0.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let total: u64 = (0..n).map(|_| u64::from(m.sample_accepted(&mut rng))).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.75).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = model(0.6, 8);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| m.sample_accepted(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn rejects_bad_domain() {
        assert_eq!(
            AcceptanceModel::new(1.5, 2),
            Err(AcceptanceError::ProbabilityOutOfRange(1.5))
        );
        assert_eq!(AcceptanceModel::new(0.5, 0), Err(AcceptanceError::ZeroCandidates));
        assert!(AcceptanceModel::new(f64::NAN, 2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pmf_sums_to_one(p in 0.0f64..=1.0, n in 1u32..=32) {
                let s: f64 = model(p, n).pmf().iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn expectation_matches_pmf(p in 0.0f64..=1.0, n in 1u32..=32) {
                let m = model(p, n);
                let e = m.expected_accepted();
                prop_assert!((e - pmf_mean(&m)).abs() <= 1e-12);
                prop_assert!((1.0..=f64::from(n) + 1.0).contains(&e));
            }

            #[test]
            fn expectation_increases_in_p(a in 0.001f64..0.998, d in 1e-4f64..1e-3, n in 1u32..=32) {
                prop_assert!(model(a, n).expected_accepted() < model(a + d, n).expected_accepted());
            }

            #[test]
            fn expectation_nondecreasing_in_n(p in 1e-6f64..=1.0, n in 1u32..32) {
                prop_assert!(model(p, n).expected_accepted() <= model(p, n + 1).expected_accepted());
            }
        }
    }
}
