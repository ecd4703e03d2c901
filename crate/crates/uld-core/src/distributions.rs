//! Probability-vector primitives shared by all losses: temperature softmax,
//! zero-padding to a common support size, and stable descending sort with
//! permutation tracking.
//!
//! All arithmetic here is `f64`; loss oracles compare values at 1e-9
//! tolerances and need the headroom.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Result};

/// How close to 1.0 the mass of a [`ProbVector`] must be.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Unnormalized next-token scores over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Wraps raw scores, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("logit vector must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "logit at index {i} is not finite: {}",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A normalized discrete probability distribution over a vocabulary support.
///
/// Zero-padded entries are exactly `0.0`, so padding never perturbs the mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Wraps probabilities, checking every entry lies in `[0, 1]` and the
    /// mass is 1 within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::input("probability vector must be non-empty"));
        }
        if let Some(i) = probs
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::input(format!(
                "probability at index {i} is outside [0, 1]: {}",
                probs[i]
            )));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::input(format!(
                "probabilities sum to {mass}, not 1 within {MASS_TOLERANCE}"
            )));
        }
        Ok(Self { probs })
    }

    /// The uniform distribution over `n` outcomes.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("uniform distribution needs n >= 1"));
        }
        Ok(Self {
            probs: alloc::vec![1.0 / n as f64; n],
        })
    }

    /// Internal constructor for values already known to satisfy the
    /// invariants (softmax output, zero padding, permutations).
    pub(crate) fn from_valid(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= MASS_TOLERANCE);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of entries in the (possibly padded) support.
    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// The permutation produced by [`sort_desc`]: `order[i]` is the original
/// index of the `i`-th largest probability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortPermutation {
    order: Vec<usize>,
}

impl SortPermutation {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Applies the permutation: `out[i] = v[order[i]]`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    /// Undoes the permutation: `out[order[i]] = v[i]`.
    pub fn unapply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; v.len()];
        for (i, &src) in self.order.iter().enumerate() {
            out[src] = v[i];
        }
        out
    }
}

/// Temperature softmax: `softmax(logits / tau)`, stabilized by
/// max-subtraction. The output mass is 1 within 1e-12.
pub fn softmax_temp(logits: &LogitVector, tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::parameter(format!(
            "temperature must be a positive finite real, got {tau}"
        )));
    }
    Ok(ProbVector::from_valid(softmax_scaled(logits.values(), tau)))
}

/// Softmax over raw `f64` scores without the `LogitVector` wrapper. The
/// caller guarantees the slice is non-empty and finite.
pub(crate) fn softmax_scaled(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = values.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Extends `p` with exact zeros to length `n`. The mass is unchanged
/// because the padding entries are literal `0.0`.
pub fn pad_to(p: &ProbVector, n: usize) -> Result<ProbVector> {
    if n < p.len() {
        return Err(Error::parameter(format!(
            "cannot pad a length-{} vector down to {n}",
            p.len()
        )));
    }
    let mut probs = p.probs().to_vec();
    probs.resize(n, 0.0);
    Ok(ProbVector::from_valid(probs))
}

/// Sorts a probability vector in descending order, breaking ties by
/// ascending original index, and returns the sorted vector together with
/// the permutation that produced it.
pub fn sort_desc(p: &ProbVector) -> (ProbVector, SortPermutation) {
    let probs = p.probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Keys (prob, index) are unique, so an unstable sort is deterministic
    // and matches the stable tie-break.
    order.sort_unstable_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    (
        ProbVector::from_valid(sorted),
        SortPermutation { order },
    )
}

/// Descending sort of raw probabilities without permutation tracking.
///
/// Produces the same value sequence as [`sort_desc`]; used on hot paths
/// (the closed-form loss at large supports) where the permutation is not
/// needed.
pub(crate) fn sorted_desc_values(probs: &[f64]) -> Vec<f64> {
    let mut v = probs.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn probs(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_temp(&logits(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        for &x in p.probs() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_hand_evaluated() {
        let p = softmax_temp(&logits(&[2.0f64.ln(), 0.0]), 1.0).unwrap();
        assert_abs_diff_eq!(p.probs()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn temperature_divides_logits() {
        let p = softmax_temp(&logits(&[2.0 * 2.0f64.ln(), 0.0]), 2.0).unwrap();
        assert_abs_diff_eq!(p.probs()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(
            softmax_temp(&logits(&[0.0]), 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            softmax_temp(&logits(&[0.0]), -1.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            softmax_temp(&logits(&[0.0]), f64::NAN),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn logit_vector_rejects_non_finite() {
        assert!(matches!(
            LogitVector::new(alloc::vec![0.0, f64::INFINITY]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            LogitVector::new(Vec::new()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn pad_extends_with_exact_zeros() {
        let p = pad_to(&probs(&[0.6, 0.4]), 4).unwrap();
        assert_eq!(p.probs(), &[0.6, 0.4, 0.0, 0.0]);
        assert_eq!(p.probs()[2].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn pad_identity_cases() {
        assert_eq!(pad_to(&probs(&[1.0]), 1).unwrap().probs(), &[1.0]);
        let p = probs(&[0.5, 0.3, 0.2]);
        assert_eq!(pad_to(&p, 3).unwrap(), p);
    }

    #[test]
    fn pad_rejects_shrinking() {
        assert!(matches!(
            pad_to(&probs(&[0.5, 0.5]), 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn sort_desc_examples() {
        let (s, perm) = sort_desc(&probs(&[0.2, 0.5, 0.3]));
        assert_eq!(s.probs(), &[0.5, 0.3, 0.2]);
        assert_eq!(perm.order(), &[1, 2, 0]);

        let (s, perm) = sort_desc(&probs(&[0.4, 0.4, 0.2]));
        assert_eq!(s.probs(), &[0.4, 0.4, 0.2]);
        assert_eq!(perm.order(), &[0, 1, 2], "ties keep ascending index order");

        let (s, perm) = sort_desc(&probs(&[1.0]));
        assert_eq!(s.probs(), &[1.0]);
        assert_eq!(perm.order(), &[0]);
    }

    #[test]
    fn lean_sort_matches_tracked_sort() {
        let p = probs(&[0.1, 0.4, 0.1, 0.4]);
        let (s, _) = sort_desc(&p);
        assert_eq!(sorted_desc_values(p.probs()), s.probs());
    }

    proptest! {
        #[test]
        fn softmax_mass_is_one(raw in proptest::collection::vec(-50.0f64..50.0, 1..40),
                               tau in 0.1f64..10.0) {
            let p = softmax_temp(&logits(&raw), tau).unwrap();
            let mass: f64 = p.probs().iter().sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_is_shift_invariant(raw in proptest::collection::vec(-30.0f64..30.0, 1..20),
                                      shift in -100.0f64..100.0,
                                      tau in 0.5f64..4.0) {
            let base = softmax_temp(&logits(&raw), tau).unwrap();
            let shifted: Vec<f64> = raw.iter().map(|v| v + shift).collect();
            let moved = softmax_temp(&logits(&shifted), tau).unwrap();
            for (a, b) in base.probs().iter().zip(moved.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sort_desc_is_a_bijection(raw in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let normalized: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let p = ProbVector::from_valid(normalized.clone());
            let (sorted, perm) = sort_desc(&p);
            prop_assert!(sorted.probs().windows(2).all(|w| w[0] >= w[1]));
            let restored = perm.unapply(sorted.probs());
            prop_assert_eq!(restored, normalized);
        }

        #[test]
        fn pad_preserves_mass_exactly(raw in proptest::collection::vec(0.0f64..1.0, 1..20),
                                      extra in 0usize..16) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let normalized: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let p = ProbVector::from_valid(normalized);
            let before: f64 = p.probs().iter().sum();
            let padded = pad_to(&p, p.len() + extra).unwrap();
            let after: f64 = padded.probs().iter().sum();
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }
    }
}
