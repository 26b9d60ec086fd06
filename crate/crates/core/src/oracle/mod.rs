//! Ground truth for small instances of the noisy-max mechanism.
//!
//! The outcome distribution of noisy argmax is a one-dimensional integral:
//! class `j` wins with probability
//! `∫ pdf(t - n_j) · Π_{k≠j} cdf(t - n_k) dt` for Laplace noise of scale
//! `1/gamma`. We integrate it piecewise between the kinks `t = n_k`, which
//! gives probabilities accurate to a relative 1e-12 even when they are tiny.
//! From exact distributions we get exact privacy-loss moments and log-ratios
//! for every neighbouring histogram, which the [`audit`] module compares with
//! the accountant's bounds.

pub mod audit;
pub mod quadrature;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{noisy_argmax_with, validate_gamma, VoteHistogram};
use crate::rng;
use quadrature::{integrate, Tolerance};

pub const MAX_CLASSES: usize = 16;
pub const MAX_VOTES: u64 = 10_000;

/// Half-width of the integration window beyond the extreme counts, in Laplace
/// scale units. Mass outside it is below `e^-40` relative to each class.
pub const TAIL_SCALE_UNITS: f64 = 40.0;

const TOLERANCE: Tolerance = Tolerance { abs: 1e-10, rel: 1e-12 };

/// Probabilities of each class being released.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn check_size(hist: &VoteHistogram) -> Result<()> {
    if hist.num_classes() > MAX_CLASSES {
        return Err(Error::UnsupportedSize(format!(
            "{} classes exceeds the oracle limit of {MAX_CLASSES}",
            hist.num_classes()
        )));
    }
    if hist.counts().iter().any(|&c| c > MAX_VOTES) || hist.total() > MAX_VOTES {
        return Err(Error::UnsupportedSize(format!(
            "{} votes exceeds the oracle limit of {MAX_VOTES}",
            hist.total()
        )));
    }
    Ok(())
}

/// Window `[min n - 40/gamma, max n + 40/gamma]` used by [`outcome_distribution`].
pub fn integration_window(hist: &VoteHistogram, gamma: f64) -> (f64, f64) {
    let min = *hist.counts().iter().min().expect("non-empty") as f64;
    let max = *hist.counts().iter().max().expect("non-empty") as f64;
    let reach = TAIL_SCALE_UNITS / gamma;
    (min - reach, max + reach)
}

#[inline]
fn laplace_pdf(x: f64, gamma: f64) -> f64 {
    0.5 * gamma * (-gamma * x.abs()).exp()
}

#[inline]
fn laplace_cdf(x: f64, gamma: f64) -> f64 {
    if x < 0.0 {
        0.5 * (gamma * x).exp()
    } else {
        1.0 - 0.5 * (-gamma * x).exp()
    }
}

/// Exact release probabilities of noisy argmax by adaptive quadrature.
pub fn outcome_distribution(hist: &VoteHistogram, gamma: f64) -> Result<OutcomeDistribution> {
    validate_gamma(gamma)?;
    check_size(hist)?;
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let (lo, hi) = integration_window(hist, gamma);
    let mut breaks: Vec<f64> = counts.clone();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let probs = (0..counts.len())
        .map(|j| {
            let integrand = |t: f64| {
                let mut v = laplace_pdf(t - counts[j], gamma);
                for (k, &n) in counts.iter().enumerate() {
                    if k != j {
                        v *= laplace_cdf(t - n, gamma);
                    }
                }
                v
            };
            breaks
                .windows(2)
                .map(|w| integrate(&integrand, w[0], w[1], TOLERANCE).value)
                .sum()
        })
        .collect();
    Ok(OutcomeDistribution { probs })
}

/// Empirical release frequencies over `trials` seeded runs of noisy argmax.
pub fn mc_outcome_frequencies(
    hist: &VoteHistogram,
    gamma: f64,
    trials: u64,
    seed: u64,
) -> Result<OutcomeDistribution> {
    validate_gamma(gamma)?;
    if trials == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one trial"));
    }
    let mut rng = rng::seeded(seed);
    let mut hits = vec![0u64; hist.num_classes()];
    for _ in 0..trials {
        hits[noisy_argmax_with(hist, gamma, &mut rng)] += 1;
    }
    Ok(OutcomeDistribution {
        probs: hits.into_iter().map(|h| h as f64 / trials as f64).collect(),
    })
}

/// Two histograms a single teacher's changed prediction can connect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacentPair {
    d: VoteHistogram,
    d_prime: VoteHistogram,
}

impl AdjacentPair {
    /// Requires equal class counts and at most two coordinates differing, each
    /// by at most one vote.
    pub fn new(d: VoteHistogram, d_prime: VoteHistogram) -> Result<Self> {
        if d.num_classes() != d_prime.num_classes() {
            return Err(Error::invalid("adjacent histograms must have the same classes"));
        }
        let mut changed = 0;
        for (&a, &b) in d.counts().iter().zip(d_prime.counts()) {
            if a.abs_diff(b) > 1 {
                return Err(Error::invalid(format!("counts {a} and {b} differ by more than one")));
            }
            changed += usize::from(a != b);
        }
        if changed > 2 {
            return Err(Error::invalid(format!("{changed} coordinates differ, at most 2 allowed")));
        }
        Ok(Self { d, d_prime })
    }

    pub fn d(&self) -> &VoteHistogram {
        &self.d
    }

    pub fn d_prime(&self) -> &VoteHistogram {
        &self.d_prime
    }
}

/// Every histogram one vote away from `hist`: a vote moved between two
/// classes, or a single class incremented or decremented. Histograms with no
/// votes left are skipped.
pub fn enumerate_neighbors(hist: &VoteHistogram) -> Vec<AdjacentPair> {
    let counts = hist.counts();
    let m = counts.len();
    let mut candidates: Vec<Vec<u64>> = Vec::with_capacity(m * (m + 1));
    for from in 0..m {
        if counts[from] == 0 {
            continue;
        }
        for to in (0..m).filter(|&to| to != from) {
            let mut c = counts.to_vec();
            c[from] -= 1;
            c[to] += 1;
            candidates.push(c);
        }
    }
    for j in 0..m {
        let mut up = counts.to_vec();
        up[j] += 1;
        candidates.push(up);
        if counts[j] > 0 {
            let mut down = counts.to_vec();
            down[j] -= 1;
            candidates.push(down);
        }
    }
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.clone()))
        .filter_map(|c| VoteHistogram::new(c).ok())
        .map(|d_prime| AdjacentPair {
            d: hist.clone(),
            d_prime,
        })
        .collect()
}

/// `log Σ_o P(o) (P(o) / P'(o))^l`, infinite if `P'` misses an outcome of `P`.
pub fn moment_between(p: &OutcomeDistribution, p_prime: &OutcomeDistribution, l: u32) -> f64 {
    let l = f64::from(l);
    let mut logs = Vec::with_capacity(p.probs.len());
    for (&a, &b) in p.probs.iter().zip(&p_prime.probs) {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return f64::INFINITY;
        }
        logs.push((l + 1.0) * a.ln() - l * b.ln());
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `max_o |log(P(o) / P'(o))|` over outcomes with positive probability.
pub fn max_log_ratio(p: &OutcomeDistribution, p_prime: &OutcomeDistribution) -> f64 {
    p.probs
        .iter()
        .zip(&p_prime.probs)
        .filter(|(&a, &b)| a > 0.0 || b > 0.0)
        .map(|(&a, &b)| {
            if a <= 0.0 || b <= 0.0 {
                f64::INFINITY
            } else {
                (a.ln() - b.ln()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Exact `l`-th privacy-loss moment of the pair, from quadrature.
pub fn exact_moment(pair: &AdjacentPair, gamma: f64, l: u32) -> Result<f64> {
    let p = outcome_distribution(&pair.d, gamma)?;
    let p_prime = outcome_distribution(&pair.d_prime, gamma)?;
    Ok(moment_between(&p, &p_prime, l))
}

/// Exact pure-DP loss of the pair: the largest absolute log-ratio of release
/// probabilities.
pub fn empirical_eps(pair: &AdjacentPair, gamma: f64) -> Result<f64> {
    let p = outcome_distribution(&pair.d, gamma)?;
    let p_prime = outcome_distribution(&pair.d_prime, gamma)?;
    Ok(max_log_ratio(&p, &p_prime))
}
