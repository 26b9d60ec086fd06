//! Noisy-max aggregation of teacher votes.
//!
//! A query is answered by adding independent Laplace noise of scale `1/gamma`
//! to every class's vote count and releasing the index of the largest
//! perturbed count. The deterministic companions [`plurality`] and [`gap`]
//! describe the same histogram without noise.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Vote counts `n_j` of an ensemble for one query, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct VoteHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl VoteHistogram {
    /// Requires at least two classes and at least one vote.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::invalid(format!(
                "a vote histogram needs at least 2 classes, got {}",
                counts.len()
            )));
        }
        let total = counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::invalid("vote total overflows u64"))?;
        if total == 0 {
            return Err(Error::invalid("a vote histogram needs at least one vote"));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Number of teachers that voted.
    pub fn total(&self) -> u64 {
        self.total
    }
}

impl TryFrom<Vec<u64>> for VoteHistogram {
    type Error = Error;

    fn try_from(counts: Vec<u64>) -> Result<Self> {
        Self::new(counts)
    }
}

impl From<VoteHistogram> for Vec<u64> {
    fn from(hist: VoteHistogram) -> Self {
        hist.counts
    }
}

/// Counts how many teachers predicted each of `num_classes` classes.
pub fn tally_votes(labels: &[usize], num_classes: usize) -> Result<VoteHistogram> {
    let mut counts = vec![0u64; num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::invalid(format!(
                "label {label} at position {i} is outside [0, {num_classes})"
            )));
        }
        counts[label] += 1;
    }
    VoteHistogram::new(counts)
}

/// Noise level and seed of the aggregation mechanism.
///
/// `gamma` is the canonical parameter; the Laplace scale is `1/gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    gamma: f64,
    seed: u64,
}

impl MechanismParams {
    pub fn new(gamma: f64, seed: u64) -> Result<Self> {
        validate_gamma(gamma)?;
        Ok(Self { gamma, seed })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Laplace scale `b = 1/gamma`.
    pub fn laplace_scale(&self) -> f64 {
        1.0 / self.gamma
    }

    /// Pure-DP cost of one answered query, `2 * gamma`.
    ///
    /// Two coordinates of the histogram can move between neighbouring
    /// datasets, so this is twice the per-coordinate Laplace budget.
    pub fn per_query_epsilon(&self) -> f64 {
        2.0 * self.gamma
    }
}

pub(crate) fn validate_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be a positive finite number, got {gamma}"
        )));
    }
    let scale = 1.0 / gamma;
    if !scale.is_finite() {
        return Err(Error::invalid(format!(
            "Laplace scale 1/gamma is not finite for gamma = {gamma}"
        )));
    }
    Ok(())
}

/// Inverse CDF of the zero-centred Laplace distribution with scale `b`.
pub fn laplace_inverse_cdf(u: f64, b: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("u must lie in (0, 1), got {u}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!(
            "Laplace scale must be positive and finite, got {b}"
        )));
    }
    Ok(inverse_cdf_unchecked(u, b))
}

#[inline]
fn inverse_cdf_unchecked(u: f64, b: f64) -> f64 {
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else {
        -b * (2.0 * (1.0 - u)).ln()
    }
}

/// One Laplace(0, b) draw by inverse-CDF transform of an open-interval uniform.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    inverse_cdf_unchecked(u, b)
}

/// Noisy argmax drawing its noise from `rng`: one draw per class, in class
/// order. Exact ties among perturbed counts go to the smallest index.
pub fn noisy_argmax_with<R: Rng + ?Sized>(hist: &VoteHistogram, gamma: f64, rng: &mut R) -> usize {
    let b = 1.0 / gamma;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (j, &count) in hist.counts.iter().enumerate() {
        let value = count as f64 + sample_laplace(rng, b);
        if value > best_value {
            best = j;
            best_value = value;
        }
    }
    best
}

/// Noisy argmax with a fresh stream seeded from `params.seed()`.
///
/// Identical inputs always produce the identical class.
pub fn noisy_argmax(hist: &VoteHistogram, params: &MechanismParams) -> usize {
    let mut rng = rng::seeded(params.seed);
    noisy_argmax_with(hist, params.gamma, &mut rng)
}

/// A noisy-max aggregator that consumes one seeded stream across many queries.
#[derive(Debug, Clone)]
pub struct NoisyMax {
    gamma: f64,
    rng: rng::StreamRng,
}

impl NoisyMax {
    pub fn new(params: &MechanismParams) -> Self {
        Self {
            gamma: params.gamma,
            rng: rng::seeded(params.seed),
        }
    }

    pub fn answer(&mut self, hist: &VoteHistogram) -> usize {
        noisy_argmax_with(hist, self.gamma, &mut self.rng)
    }
}

/// Class with the most votes, smallest index on ties.
pub fn plurality(hist: &VoteHistogram) -> usize {
    let mut best = 0;
    for (j, &count) in hist.counts.iter().enumerate().skip(1) {
        if count > hist.counts[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Top count minus runner-up count.
    pub absolute: u64,
    /// `absolute / total`.
    pub normalized: f64,
}

/// Vote margin between the most and second most popular classes.
pub fn gap(hist: &VoteHistogram) -> Gap {
    let (mut first, mut second) = (0u64, 0u64);
    for &count in &hist.counts {
        if count > first {
            second = first;
            first = count;
        } else if count > second {
            second = count;
        }
    }
    let absolute = first - second;
    Gap {
        absolute,
        normalized: absolute as f64 / hist.total as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hist(counts: &[u64]) -> VoteHistogram {
        VoteHistogram::new(counts.to_vec()).unwrap()
    }

    #[test]
    fn tally_counts_each_label() {
        assert_eq!(tally_votes(&[0, 0, 1], 3).unwrap().counts(), &[2, 1, 0]);
        let h = tally_votes(&[4; 250], 10).unwrap();
        assert_eq!(h.counts()[4], 250);
        assert_eq!(h.total(), 250);
        assert!(h.counts().iter().enumerate().all(|(j, &c)| j == 4 || c == 0));
    }

    #[test]
    fn tally_rejects_empty_and_out_of_range() {
        assert!(matches!(tally_votes(&[], 2), Err(Error::InvalidInput(_))));
        assert!(matches!(tally_votes(&[0, 3], 3), Err(Error::InvalidInput(_))));
        assert!(VoteHistogram::new(vec![5]).is_err());
    }

    #[test]
    fn histogram_deserialization_validates() {
        let h: VoteHistogram = serde_json::from_str("[3,1]").unwrap();
        assert_eq!(h.total(), 4);
        assert!(serde_json::from_str::<VoteHistogram>("[0,0]").is_err());
    }

    #[test]
    fn params_reject_bad_gamma() {
        for g in [0.0, -1.0, f64::NAN, f64::INFINITY, 1e-320] {
            assert!(MechanismParams::new(g, 0).is_err(), "gamma {g}");
        }
        let p = MechanismParams::new(0.05, 1).unwrap();
        assert_relative_eq!(p.laplace_scale(), 20.0);
        assert_relative_eq!(p.per_query_epsilon(), 0.1);
    }

    #[test]
    fn inverse_cdf_examples() {
        assert_eq!(laplace_inverse_cdf(0.5, 20.0).unwrap(), 0.0);
        // -b ln(2(1-u)) at u = 0.75, b = 20 (mpmath).
        let expected = 13.862_943_611_198_906;
        assert_relative_eq!(laplace_inverse_cdf(0.75, 20.0).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(laplace_inverse_cdf(0.25, 20.0).unwrap(), -expected, max_relative = 1e-14);
    }

    #[test]
    fn inverse_cdf_rejects_closed_endpoints() {
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(laplace_inverse_cdf(u, 1.0).is_err());
        }
        assert!(laplace_inverse_cdf(0.3, 0.0).is_err());
    }

    #[test]
    fn sampler_moments() {
        let mut rng = rng::seeded(11);
        let draws = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let x = sample_laplace(&mut rng, 1.0);
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / draws as f64;
        let var = sum_sq / draws as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.02 * 2.0, "variance {var}");
    }

    #[test]
    fn unanimous_histogram_almost_always_wins() {
        let mut counts = vec![0u64; 10];
        counts[0] = 250;
        let h = hist(&counts);
        let mut agg = NoisyMax::new(&MechanismParams::new(0.05, 3).unwrap());
        let trials = 100_000;
        let wins = (0..trials).filter(|_| agg.answer(&h) == 0).count();
        assert!(wins as f64 / trials as f64 >= 0.99);
    }

    #[test]
    fn vanishing_noise_falls_back_to_plurality_tie_break() {
        let h = hist(&[5, 5]);
        for seed in 0..50 {
            let p = MechanismParams::new(1e300, seed).unwrap();
            assert_eq!(noisy_argmax(&h, &p), 0);
        }
    }

    #[test]
    fn tied_histogram_is_a_fair_coin() {
        let h = hist(&[5, 5]);
        let mut agg = NoisyMax::new(&MechanismParams::new(0.05, 9).unwrap());
        let trials = 200_000;
        let zeros = (0..trials).filter(|_| agg.answer(&h) == 0).count();
        let p = zeros as f64 / trials as f64;
        let se = (0.25 / trials as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "p = {p}");
    }

    #[test]
    fn same_seed_same_answer() {
        let h = hist(&[3, 4, 3, 2]);
        let p = MechanismParams::new(0.3, 42).unwrap();
        let first = noisy_argmax(&h, &p);
        assert!((0..20).all(|_| noisy_argmax(&h, &p) == first));
    }

    #[test]
    fn plurality_examples() {
        assert_eq!(plurality(&hist(&[2, 1, 0])), 0);
        assert_eq!(plurality(&hist(&[3, 3, 1])), 0);
        assert_eq!(plurality(&hist(&[0, 0, 7])), 2);
        assert_eq!(plurality(&hist(&[1, 4, 4])), 1);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap(&hist(&[200, 50, 0])), Gap { absolute: 150, normalized: 0.6 });
        assert_eq!(gap(&hist(&[5, 5])), Gap { absolute: 0, normalized: 0.0 });
        let mut counts = vec![0u64; 10];
        counts[0] = 250;
        assert_eq!(gap(&hist(&counts)), Gap { absolute: 250, normalized: 1.0 });
        assert_eq!(gap(&hist(&[1, 9, 9, 2])).absolute, 0);
    }

    fn histogram_strategy() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..30, 2..8).prop_filter("needs a vote", |c| c.iter().any(|&x| x > 0))
    }

    proptest! {
        #[test]
        fn plurality_is_permutation_equivariant(counts in histogram_strategy(), seed in any::<u64>()) {
            // Shuffle with a unique maximum so the winner is unambiguous.
            let mut counts = counts;
            let top = *counts.iter().max().unwrap();
            let first_top = counts.iter().position(|&c| c == top).unwrap();
            counts[first_top] = top + 1;
            let h = hist(&counts);
            let mut perm: Vec<usize> = (0..counts.len()).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng::seeded(seed));
            let mut permuted = vec![0; counts.len()];
            for (j, &c) in counts.iter().enumerate() {
                permuted[perm[j]] = c;
            }
            prop_assert_eq!(plurality(&hist(&permuted)), perm[plurality(&h)]);
        }

        #[test]
        fn plurality_ties_take_smallest_index(counts in histogram_strategy()) {
            let h = hist(&counts);
            let top = *counts.iter().max().unwrap();
            prop_assert_eq!(plurality(&h), counts.iter().position(|&c| c == top).unwrap());
        }

        #[test]
        fn gap_is_normalized(counts in histogram_strategy()) {
            let g = gap(&hist(&counts));
            prop_assert!((0.0..=1.0).contains(&g.normalized));
            let unanimous = counts.iter().filter(|&&c| c > 0).count() == 1;
            prop_assert_eq!(g.normalized == 1.0, unanimous);
        }
    }
}
