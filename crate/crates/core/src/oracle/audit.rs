//! Soundness sweeps comparing the accountant's bounds with exact quantities.
//!
//! For each random histogram `d` and noise level `gamma` we check:
//!
//! * the quadrature probability of not releasing the plurality class is at
//!   most [`q_upper_bound`];
//! * for every neighbour `d'` and every `lambda` on the grid, the exact
//!   privacy-loss moment is at most the per-query moment the accountant
//!   charges for `d`;
//! * every neighbour's exact log-ratio is at most `2 gamma`.
//!
//! A second sweep compares quadrature with Monte Carlo frequencies.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{enumerate_neighbors, max_log_ratio, mc_outcome_frequencies, moment_between, outcome_distribution};
use crate::accountant::{per_query_moment, q_upper_bound, LambdaGrid};
use crate::error::Result;
use crate::mechanism::{plurality, VoteHistogram};
use crate::rng;

/// Relative slack for inequalities that hold with equality in some cases
/// (two classes make the union bound on `q` exact).
pub const BOUND_SLACK_REL: f64 = 1e-9;
pub const BOUND_SLACK_ABS: f64 = 1e-12;
/// Additive slack on the `2 gamma` pure-DP check.
pub const PURE_DP_SLACK: f64 = 1e-6;
/// Monte Carlo agreement, in standard errors.
pub const MC_STANDARD_ERRORS: f64 = 4.0;

const MC_STREAM: u64 = 0x4d43_5f43_4845_434b;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    pub histograms: usize,
    pub max_classes: usize,
    pub max_votes: u64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub lambda_grid: LambdaGrid,
    /// Histograms cross-checked against Monte Carlo.
    pub mc_histograms: usize,
    /// Monte Carlo trials per histogram; 0 skips the cross-check.
    pub mc_trials: u64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            histograms: 1000,
            max_classes: 5,
            max_votes: 50,
            gamma_min: 0.01,
            gamma_max: 1.0,
            lambda_grid: LambdaGrid::default(),
            mc_histograms: 100,
            mc_trials: 100_000,
            seed: 0,
        }
    }
}

/// Outcome of one family of inequality checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub cases: usize,
    pub failures: usize,
    /// Largest amount by which a checked quantity exceeded its allowance; 0
    /// when every case passed.
    pub max_violation: f64,
}

impl CheckTally {
    fn check(&mut self, value: f64, allowed: f64) {
        self.cases += 1;
        // NaN counts as a failure.
        if !(value <= allowed) {
            self.failures += 1;
            let excess = if value.is_nan() { f64::INFINITY } else { value - allowed };
            self.max_violation = self.max_violation.max(excess);
        }
    }

    fn merge(&mut self, other: &CheckTally) {
        self.cases += other.cases;
        self.failures += other.failures;
        self.max_violation = self.max_violation.max(other.max_violation);
    }
}

/// A failing case, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub counts: Vec<u64>,
    pub gamma: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistogramAudit {
    pub q_bound: CheckTally,
    pub moments: CheckTally,
    pub pure_dp: CheckTally,
    pub violations: Vec<Violation>,
}

fn with_slack(bound: f64) -> f64 {
    bound * (1.0 + BOUND_SLACK_REL) + BOUND_SLACK_ABS
}

/// Runs the three quadrature checks for one histogram.
pub fn audit_histogram(hist: &VoteHistogram, gamma: f64, grid: &LambdaGrid) -> Result<HistogramAudit> {
    let mut audit = HistogramAudit::default();
    let p = outcome_distribution(hist, gamma)?;
    let winner = plurality(hist);

    let q_exact = 1.0 - p.probs[winner];
    let q_loser_sum: f64 = p.probs.iter().enumerate().filter(|&(j, _)| j != winner).map(|(_, &x)| x).sum();
    // The loser sum keeps relative precision when q is tiny.
    let q_exact = if q_exact < 0.5 { q_loser_sum } else { q_exact };
    let q_bound = q_upper_bound(hist, gamma);
    let before = audit.q_bound.failures;
    audit.q_bound.check(q_exact, with_slack(q_bound));
    if audit.q_bound.failures > before {
        audit.violations.push(Violation {
            check: "q_bound".into(),
            counts: hist.counts().to_vec(),
            gamma,
            detail: format!("quadrature q = {q_exact:e} > bound {q_bound:e}"),
        });
    }

    let charged = per_query_moment("audit", hist, gamma, grid);
    for pair in enumerate_neighbors(hist) {
        let p_prime = outcome_distribution(pair.d_prime(), gamma)?;
        for entry in &charged.moments {
            let exact = moment_between(&p, &p_prime, entry.lambda);
            let before = audit.moments.failures;
            audit.moments.check(exact, with_slack(entry.alpha));
            if audit.moments.failures > before {
                audit.violations.push(Violation {
                    check: "moment".into(),
                    counts: hist.counts().to_vec(),
                    gamma,
                    detail: format!(
                        "neighbour {:?}, lambda {}: exact {exact:e} > charged {:e} ({:?})",
                        pair.d_prime().counts(),
                        entry.lambda,
                        entry.alpha,
                        entry.source
                    ),
                });
            }
        }
        let eps = max_log_ratio(&p, &p_prime);
        let before = audit.pure_dp.failures;
        audit.pure_dp.check(eps, 2.0 * gamma + PURE_DP_SLACK);
        if audit.pure_dp.failures > before {
            audit.violations.push(Violation {
                check: "pure_dp".into(),
                counts: hist.counts().to_vec(),
                gamma,
                detail: format!("neighbour {:?}: log-ratio {eps} > 2 gamma", pair.d_prime().counts()),
            });
        }
    }
    Ok(audit)
}

/// Classwise agreement between quadrature and `trials` Monte Carlo runs.
pub fn cross_check(hist: &VoteHistogram, gamma: f64, trials: u64, seed: u64) -> Result<(CheckTally, Vec<Violation>)> {
    let exact = outcome_distribution(hist, gamma)?;
    let mc = mc_outcome_frequencies(hist, gamma, trials, seed)?;
    let mut tally = CheckTally::default();
    let mut violations = Vec::new();
    for (j, (&p, &f)) in exact.probs.iter().zip(&mc.probs).enumerate() {
        let p = p.clamp(0.0, 1.0);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let before = tally.failures;
        tally.check((f - p).abs(), MC_STANDARD_ERRORS * se);
        if tally.failures > before {
            violations.push(Violation {
                check: "monte_carlo".into(),
                counts: hist.counts().to_vec(),
                gamma,
                detail: format!("class {j}: frequency {f} vs quadrature {p} (se {se:e})"),
            });
        }
    }
    Ok((tally, violations))
}

/// A random test case: class count, vote total, skew and `gamma` (log-uniform).
pub fn random_case<R: Rng + ?Sized>(rng: &mut R, config: &AuditConfig) -> (VoteHistogram, f64) {
    let m = rng.gen_range(2..=config.max_classes.max(2));
    let n = rng.gen_range(1..=config.max_votes.max(1));
    // Cubed exponential weights give everything from flat to near-unanimous.
    let weights: Vec<f64> = (0..m)
        .map(|_| {
            let e = -(1.0 - rng.gen::<f64>()).ln();
            e.powi(3)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut counts = vec![0u64; m];
    for _ in 0..n {
        let mut x = rng.gen::<f64>() * total;
        let mut j = 0;
        while j + 1 < m && x >= weights[j] {
            x -= weights[j];
            j += 1;
        }
        counts[j] += 1;
    }
    let (lo, hi) = (config.gamma_min.ln(), config.gamma_max.ln());
    let gamma = if hi > lo { rng.gen_range(lo..=hi).exp() } else { config.gamma_min };
    (VoteHistogram::new(counts).expect("n >= 1"), gamma)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub cases: usize,
    pub failures: usize,
    pub max_violation: f64,
    pub histograms: usize,
    pub q_bound: CheckTally,
    pub moments: CheckTally,
    pub pure_dp: CheckTally,
    pub monte_carlo: CheckTally,
    pub mc_trials: u64,
    pub lambda_grid: LambdaGrid,
    pub window_scale_units: f64,
    pub seed: u64,
    pub violations: Vec<Violation>,
}

const MAX_REPORTED_VIOLATIONS: usize = 50;

/// Runs the quadrature sweep and, when `mc_trials > 0`, the Monte Carlo
/// cross-check. Results depend only on the config, not on thread count.
pub fn run(config: &AuditConfig) -> Result<AuditReport> {
    let audits: Vec<HistogramAudit> = (0..config.histograms)
        .into_par_iter()
        .map(|i| {
            let (hist, gamma) = random_case(&mut rng::derived(config.seed, i as u64), config);
            audit_histogram(&hist, gamma, &config.lambda_grid)
        })
        .collect::<Result<_>>()?;

    let mc_cases = if config.mc_trials == 0 { 0 } else { config.mc_histograms };
    let mc_seed = rng::derive_seed(config.seed, MC_STREAM);
    let checks: Vec<(CheckTally, Vec<Violation>)> = (0..mc_cases)
        .into_par_iter()
        .map(|i| {
            let mut case_rng = rng::derived(mc_seed, 2 * i as u64);
            let (hist, gamma) = random_case(&mut case_rng, config);
            cross_check(&hist, gamma, config.mc_trials, rng::derive_seed(mc_seed, 2 * i as u64 + 1))
        })
        .collect::<Result<_>>()?;

    let mut q_bound = CheckTally::default();
    let mut moments = CheckTally::default();
    let mut pure_dp = CheckTally::default();
    let mut monte_carlo = CheckTally::default();
    let mut violations = Vec::new();
    for a in audits {
        q_bound.merge(&a.q_bound);
        moments.merge(&a.moments);
        pure_dp.merge(&a.pure_dp);
        violations.extend(a.violations);
    }
    for (tally, v) in checks {
        monte_carlo.merge(&tally);
        violations.extend(v);
    }
    violations.truncate(MAX_REPORTED_VIOLATIONS);

    let all = [q_bound, moments, pure_dp, monte_carlo];
    Ok(AuditReport {
        cases: all.iter().map(|t| t.cases).sum(),
        failures: all.iter().map(|t| t.failures).sum(),
        max_violation: all.iter().map(|t| t.max_violation).fold(0.0, f64::max),
        histograms: config.histograms,
        q_bound,
        moments,
        pure_dp,
        monte_carlo,
        mc_trials: config.mc_trials,
        lambda_grid: config.lambda_grid.clone(),
        window_scale_units: super::TAIL_SCALE_UNITS,
        seed: config.seed,
        violations,
    })
}
