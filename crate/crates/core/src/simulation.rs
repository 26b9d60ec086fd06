//! Synthetic teacher ensembles.
//!
//! Teachers vote independently given the true label: each is right with
//! probability `teacher_accuracy` and otherwise picks a wrong class according
//! to an [`ErrorModel`]. Real teachers trained on partitions of one dataset
//! make correlated mistakes, so results here describe the shape of accuracy
//! and gap curves, not the values a real ensemble would produce.
//!
//! Every query `i` draws its votes from stream `derive(seed, i)` and its
//! noise from a separate stream that does not depend on `gamma`, so a sweep
//! compares all noise levels on the same votes and the same standardized
//! noise.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{
    compose, LambdaGrid, LedgerMetadata, MomentTotals, PrivacyLedger, Guarantee,
};
use crate::error::{Error, Result};
use crate::mechanism::{gap, noisy_argmax_with, validate_gamma, VoteHistogram};
use crate::rng;

const NOISE_STREAM: u64 = 0x6e6f_6973_65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorModel {
    /// Wrong votes are uniform over the other `m - 1` classes.
    UniformConfusion,
    /// Wrong votes go to `label + 1` or `label - 1` (mod m) with equal odds.
    AdjacentConfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: u64,
    pub m: usize,
    pub teacher_accuracy: f64,
    pub error_model: ErrorModel,
    pub queries: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    /// 250 teachers, 10 classes, 83.86% per-teacher accuracy, 100 queries.
    fn default() -> Self {
        Self {
            n: 250,
            m: 10,
            teacher_accuracy: 0.8386,
            error_model: ErrorModel::UniformConfusion,
            queries: 100,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("an ensemble needs at least one teacher"));
        }
        if self.m < 2 {
            return Err(Error::invalid("an ensemble needs at least two classes"));
        }
        let chance = 1.0 / self.m as f64;
        if !(self.teacher_accuracy >= chance && self.teacher_accuracy <= 1.0) {
            return Err(Error::invalid(format!(
                "teacher accuracy must lie in [1/m, 1] = [{chance}, 1], got {}",
                self.teacher_accuracy
            )));
        }
        Ok(())
    }
}

/// Draws one query's votes for a query whose correct class is `true_label`.
pub fn synth_query_votes<R: Rng + ?Sized>(
    config: &EnsembleConfig,
    true_label: usize,
    rng: &mut R,
) -> Result<VoteHistogram> {
    config.validate()?;
    if true_label >= config.m {
        return Err(Error::invalid(format!("true label {true_label} outside [0, {})", config.m)));
    }
    let m = config.m;
    let mut counts = vec![0u64; m];
    for _ in 0..config.n {
        let vote = if rng.gen::<f64>() < config.teacher_accuracy {
            true_label
        } else {
            match config.error_model {
                ErrorModel::UniformConfusion => {
                    let k = rng.gen_range(0..m - 1);
                    if k >= true_label {
                        k + 1
                    } else {
                        k
                    }
                }
                ErrorModel::AdjacentConfusion => {
                    if rng.gen::<bool>() {
                        (true_label + 1) % m
                    } else {
                        (true_label + m - 1) % m
                    }
                }
            }
        };
        counts[vote] += 1;
    }
    VoteHistogram::new(counts)
}

/// A synthetic query: its true label and the ensemble's votes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub true_label: usize,
    pub votes: VoteHistogram,
}

fn synth_query(config: &EnsembleConfig, index: usize) -> Result<SyntheticQuery> {
    let mut rng = rng::derived(config.seed, index as u64);
    let true_label = rng.gen_range(0..config.m);
    let votes = synth_query_votes(config, true_label, &mut rng)?;
    Ok(SyntheticQuery { true_label, votes })
}

/// The `config.queries` synthetic queries, reproducible from `config.seed`.
pub fn synth_queries(config: &EnsembleConfig) -> Result<Vec<SyntheticQuery>> {
    config.validate()?;
    (0..config.queries).into_par_iter().map(|i| synth_query(config, i)).collect()
}

fn noise_rng(config: &EnsembleConfig, index: usize) -> rng::StreamRng {
    rng::derived(rng::derive_seed(config.seed, NOISE_STREAM), index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    /// Fraction of queries where noisy argmax returned the true label.
    pub accuracy: f64,
    /// Binomial standard error of `accuracy`.
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub queries: usize,
    pub points: Vec<SweepPoint>,
    pub mean_gap: f64,
    pub mean_normalized_gap: f64,
}

/// Accuracy of noisy aggregation at each `gamma`, plus gap statistics of the
/// raw votes.
pub fn sweep_gamma(config: &EnsembleConfig, gamma_grid: &[f64]) -> Result<SweepResult> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid must not be empty"));
    }
    for &g in gamma_grid {
        validate_gamma(g)?;
    }
    if gamma_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("gamma grid must be strictly increasing"));
    }
    if config.queries == 0 {
        return Err(Error::invalid("a sweep needs at least one query"));
    }
    let queries = synth_queries(config)?;
    let hits: Vec<Vec<bool>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            gamma_grid
                .iter()
                .map(|&gamma| noisy_argmax_with(&q.votes, gamma, &mut noise_rng(config, i)) == q.true_label)
                .collect()
        })
        .collect();
    let t = queries.len() as f64;
    let points = gamma_grid
        .iter()
        .enumerate()
        .map(|(k, &gamma)| {
            let accuracy = hits.iter().filter(|h| h[k]).count() as f64 / t;
            SweepPoint {
                gamma,
                accuracy,
                standard_error: (accuracy * (1.0 - accuracy) / t).sqrt(),
            }
        })
        .collect();
    let gaps: Vec<_> = queries.iter().map(|q| gap(&q.votes)).collect();
    Ok(SweepResult {
        queries: queries.len(),
        points,
        mean_gap: gaps.iter().map(|g| g.absolute as f64).sum::<f64>() / t,
        mean_normalized_gap: gaps.iter().map(|g| g.normalized).sum::<f64>() / t,
    })
}

/// Side-by-side moments and strong-composition guarantees for a synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub format_version: u32,
    pub seed: u64,
    pub gamma: f64,
    /// Laplace scale `1/gamma`.
    pub laplace_scale: f64,
    pub lambda_grid: LambdaGrid,
    pub config: EnsembleConfig,
    /// Whether any query was charged its data-dependent bound, making epsilon
    /// a function of the votes.
    pub data_dependent: bool,
    pub totals: MomentTotals,
    pub moments: Guarantee,
    pub strong_composition: Guarantee,
    /// Fraction of released labels equal to the true label; absent for zero
    /// queries.
    pub aggregate_accuracy: Option<f64>,
}

/// Answers every synthetic query with noisy argmax, accounts each one, and
/// reports both guarantees.
pub fn budget_report(config: &EnsembleConfig, gamma: f64, delta: f64, grid: &LambdaGrid) -> Result<BudgetReport> {
    validate_gamma(gamma)?;
    let queries = synth_queries(config)?;
    let mut ledger = PrivacyLedger::new(LedgerMetadata {
        gamma,
        lambda_grid: grid.clone(),
        seed: config.seed,
    })?;
    let mut correct = 0usize;
    for (i, q) in queries.iter().enumerate() {
        let label = noisy_argmax_with(&q.votes, gamma, &mut noise_rng(config, i));
        correct += usize::from(label == q.true_label);
        ledger.record(i.to_string(), &q.votes);
    }
    Ok(BudgetReport {
        format_version: crate::FORMAT_VERSION,
        seed: config.seed,
        gamma,
        laplace_scale: 1.0 / gamma,
        lambda_grid: grid.clone(),
        config: config.clone(),
        data_dependent: ledger.is_data_dependent(),
        totals: compose(&ledger)?,
        moments: ledger.moments_guarantee(delta)?,
        strong_composition: ledger.strong_composition_guarantee(delta)?,
        aggregate_accuracy: (!queries.is_empty()).then(|| correct as f64 / queries.len() as f64),
    })
}
