//! Moments accountant for the noisy-max mechanism.
//!
//! Each answered query contributes a bound on the log moment generating
//! function `alpha(lambda)` of its privacy loss. Two bounds are available:
//!
//! * the data-independent bound `2 gamma^2 lambda (lambda + 1)`, valid for any
//!   `2 gamma`-DP mechanism;
//! * a data-dependent bound driven by `q`, an upper bound on the probability
//!   that the mechanism does not return the plurality class. It only applies
//!   while `q < (e^{2 gamma} - 1) / (e^{4 gamma} - 1)`.
//!
//! Per query we keep the smaller of the two, per `lambda`. Moments add across
//! queries, and the total converts to an `(epsilon, delta)` guarantee through
//! the tail bound `delta = min_lambda exp(alpha(lambda) - lambda epsilon)`.
//!
//! The data-dependent bound is computed from the true vote counts, so the
//! resulting epsilon is itself a function of the private data.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{plurality, validate_gamma, VoteHistogram};

/// Smallest admissible value of `1 - e^{2 gamma} q` in the data-dependent bound.
const DENOMINATOR_GUARD: f64 = 1e-12;

/// Ascending moment orders at which bounds are tracked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct LambdaGrid(Vec<u32>);

impl LambdaGrid {
    pub fn new(values: Vec<u32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("lambda grid must not be empty"));
        }
        if values[0] < 1 {
            return Err(Error::invalid("lambda grid values must be >= 1"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lambda grid must be strictly increasing"));
        }
        Ok(Self(values))
    }

    /// The integers `1..=max`.
    pub fn up_to(max: u32) -> Result<Self> {
        Self::new((1..=max).collect())
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self((1..=8).collect())
    }
}

impl TryFrom<Vec<u32>> for LambdaGrid {
    type Error = Error;

    fn try_from(values: Vec<u32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LambdaGrid> for Vec<u32> {
    fn from(grid: LambdaGrid) -> Self {
        grid.0
    }
}

/// Which bound produced a moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentSource {
    DataIndependent,
    DataDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub lambda: u32,
    pub alpha: f64,
    pub source: MomentSource,
}

/// Moment bounds charged for a single answered query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMoment {
    pub query_id: String,
    pub gamma: f64,
    pub q_bound: f64,
    pub moments: Vec<MomentEntry>,
}

impl QueryMoment {
    pub fn lambdas(&self) -> impl Iterator<Item = u32> + '_ {
        self.moments.iter().map(|e| e.lambda)
    }
}

/// `2 gamma^2 l (l + 1)`.
pub fn data_independent_moment(gamma: f64, l: u32) -> f64 {
    let l = f64::from(l);
    2.0 * gamma * gamma * l * (l + 1.0)
}

/// Upper end (exclusive) of the `q` range where the data-dependent bound holds:
/// `(e^{2 gamma} - 1) / (e^{4 gamma} - 1)`, computed as `1 / (1 + e^{2 gamma})`.
pub fn q_threshold(gamma: f64) -> f64 {
    1.0 / (1.0 + (2.0 * gamma).exp())
}

/// Union bound on `Pr[M(d) != plurality(d)]`, clamped to 1.
///
/// Each non-winning class `j` at vote distance `g = gamma (n_top - n_j)`
/// contributes `(2 + g) / (4 e^g)`, the tail of a sum of two unit Laplace
/// variables beyond `g`.
pub fn q_upper_bound(hist: &VoteHistogram, gamma: f64) -> f64 {
    let winner = plurality(hist);
    let top = hist.counts()[winner];
    let sum: f64 = hist
        .counts()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != winner)
        .map(|(_, &n)| {
            let g = gamma * (top - n) as f64;
            (2.0 + g) * (-g).exp() / 4.0
        })
        .sum();
    sum.min(1.0)
}

/// Data-dependent moment bound
/// `log((1 - q) ((1 - q) / (1 - e^{2 gamma} q))^l + q e^{2 gamma l})`.
///
/// Errors with [`Error::OutOfDomain`] unless `0 <= q < q_threshold(gamma)`.
pub fn data_dependent_moment(q: f64, gamma: f64, l: u32) -> Result<f64> {
    let threshold = q_threshold(gamma);
    let out_of_domain = || Error::OutOfDomain { q, gamma, threshold };
    if !(q >= 0.0 && q < threshold) {
        return Err(out_of_domain());
    }
    let e2g = (2.0 * gamma).exp();
    if 1.0 - e2g * q < DENOMINATOR_GUARD {
        return Err(out_of_domain());
    }
    let l = f64::from(l);
    let log_1mq = (-q).ln_1p();
    let log_first = (l + 1.0) * log_1mq - l * (-e2g * q).ln_1p();
    if q == 0.0 {
        return Ok(log_first.max(0.0));
    }
    let log_second = q.ln() + 2.0 * gamma * l;
    let (hi, lo) = if log_first >= log_second {
        (log_first, log_second)
    } else {
        (log_second, log_first)
    };
    Ok((hi + (lo - hi).exp().ln_1p()).max(0.0))
}

/// Per-lambda moment of one query: the smaller of the data-independent bound
/// and, when `q` is in range, the data-dependent bound.
pub fn per_query_moment(
    query_id: impl Into<String>,
    hist: &VoteHistogram,
    gamma: f64,
    grid: &LambdaGrid,
) -> QueryMoment {
    let q_bound = q_upper_bound(hist, gamma);
    let moments = grid
        .values()
        .iter()
        .map(|&lambda| {
            let independent = data_independent_moment(gamma, lambda);
            match data_dependent_moment(q_bound, gamma, lambda) {
                Ok(dependent) if dependent < independent => MomentEntry {
                    lambda,
                    alpha: dependent,
                    source: MomentSource::DataDependent,
                },
                _ => MomentEntry {
                    lambda,
                    alpha: independent,
                    source: MomentSource::DataIndependent,
                },
            }
        })
        .collect();
    QueryMoment {
        query_id: query_id.into(),
        gamma,
        q_bound,
        moments,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerMetadata {
    pub gamma: f64,
    pub lambda_grid: LambdaGrid,
    pub seed: u64,
}

/// Append-only record of every answered query's moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    metadata: LedgerMetadata,
    entries: Vec<QueryMoment>,
}

impl PrivacyLedger {
    pub fn new(metadata: LedgerMetadata) -> Result<Self> {
        validate_gamma(metadata.gamma)?;
        Ok(Self {
            metadata,
            entries: Vec::new(),
        })
    }

    pub fn metadata(&self) -> &LedgerMetadata {
        &self.metadata
    }

    pub fn entries(&self) -> &[QueryMoment] {
        &self.entries
    }

    /// Number of answered queries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a query whose moments were computed on the ledger's grid.
    pub fn push(&mut self, moment: QueryMoment) -> Result<()> {
        if !moment.lambdas().eq(self.metadata.lambda_grid.values().iter().copied()) {
            return Err(Error::invalid(format!(
                "query {:?} was accounted on a different lambda grid",
                moment.query_id
            )));
        }
        self.entries.push(moment);
        Ok(())
    }

    /// Accounts for `hist` at the ledger's gamma and grid, then appends it.
    pub fn record(&mut self, query_id: impl Into<String>, hist: &VoteHistogram) -> &QueryMoment {
        let moment = per_query_moment(query_id, hist, self.metadata.gamma, &self.metadata.lambda_grid);
        self.entries.push(moment);
        self.entries.last().expect("just pushed")
    }

    /// Whether any query was charged its data-dependent bound.
    pub fn is_data_dependent(&self) -> bool {
        self.entries
            .iter()
            .flat_map(|e| &e.moments)
            .any(|m| m.source == MomentSource::DataDependent)
    }

    /// Whether every entry used the ledger's gamma, so the strong-composition
    /// comparison is meaningful.
    pub fn has_uniform_gamma(&self) -> bool {
        self.entries.iter().all(|e| e.gamma == self.metadata.gamma)
    }

    /// Moments guarantee for the whole ledger. An empty ledger has released
    /// nothing and reports `epsilon = 0`.
    pub fn moments_guarantee(&self, delta: f64) -> Result<Guarantee> {
        let totals = compose(self)?;
        if self.is_empty() {
            validate_delta(delta)?;
            return Ok(Guarantee {
                epsilon: 0.0,
                delta,
                argmin_lambda: None,
                method: Method::Moments,
                lambda_grid: totals.lambdas().collect(),
                num_queries: 0,
            });
        }
        eps_for_delta(&totals, delta)
    }

    /// Strong-composition guarantee for the same number of queries at the
    /// ledger's gamma.
    pub fn strong_composition_guarantee(&self, delta: f64) -> Result<Guarantee> {
        let mut g = strong_composition_eps(self.metadata.gamma, self.len() as u64, delta)?;
        g.lambda_grid = self.metadata.lambda_grid.values().to_vec();
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaTotal {
    pub lambda: u32,
    pub alpha_total: f64,
}

/// Composed moments of a sequence of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTotals {
    pub num_queries: usize,
    pub totals: Vec<LambdaTotal>,
}

impl MomentTotals {
    pub fn zero(grid: &LambdaGrid) -> Self {
        Self {
            num_queries: 0,
            totals: grid
                .values()
                .iter()
                .map(|&lambda| LambdaTotal { lambda, alpha_total: 0.0 })
                .collect(),
        }
    }

    pub fn lambdas(&self) -> impl Iterator<Item = u32> + '_ {
        self.totals.iter().map(|t| t.lambda)
    }

    pub fn alpha(&self, lambda: u32) -> Option<f64> {
        self.totals.iter().find(|t| t.lambda == lambda).map(|t| t.alpha_total)
    }

    /// Elementwise sum, for concatenated query sequences on the same grid.
    pub fn combine(&self, other: &MomentTotals) -> Result<MomentTotals> {
        if !self.lambdas().eq(other.lambdas()) {
            return Err(Error::invalid("cannot combine totals on different lambda grids"));
        }
        Ok(MomentTotals {
            num_queries: self.num_queries + other.num_queries,
            totals: self
                .totals
                .iter()
                .zip(&other.totals)
                .map(|(a, b)| LambdaTotal {
                    lambda: a.lambda,
                    alpha_total: a.alpha_total + b.alpha_total,
                })
                .collect(),
        })
    }
}

/// Sums per-query moments at every lambda of the ledger's grid.
pub fn compose(ledger: &PrivacyLedger) -> Result<MomentTotals> {
    let grid = &ledger.metadata.lambda_grid;
    let mut totals = MomentTotals::zero(grid);
    for entry in &ledger.entries {
        if !entry.lambdas().eq(grid.values().iter().copied()) {
            return Err(Error::invalid(format!(
                "query {:?} does not match the ledger's lambda grid",
                entry.query_id
            )));
        }
        for (total, m) in totals.totals.iter_mut().zip(&entry.moments) {
            total.alpha_total += m.alpha;
        }
    }
    totals.num_queries = ledger.entries.len();
    Ok(totals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Moments,
    StrongComposition,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Moments => f.write_str("moments"),
            Method::StrongComposition => f.write_str("strong composition"),
        }
    }
}

/// An `(epsilon, delta)` differential-privacy guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub epsilon: f64,
    pub delta: f64,
    /// Order attaining the minimum in the tail bound; absent for strong
    /// composition and for an empty ledger.
    pub argmin_lambda: Option<u32>,
    pub method: Method,
    pub lambda_grid: Vec<u32>,
    pub num_queries: usize,
}

fn validate_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Smallest epsilon the tail bound certifies at `delta`:
/// `min_lambda (alpha(lambda) + ln(1/delta)) / lambda`.
pub fn eps_for_delta(totals: &MomentTotals, delta: f64) -> Result<Guarantee> {
    validate_delta(delta)?;
    let log_inv_delta = -delta.ln();
    let (argmin, epsilon) = totals
        .totals
        .iter()
        .map(|t| (t.lambda, (t.alpha_total + log_inv_delta) / f64::from(t.lambda)))
        .fold(None, |best: Option<(u32, f64)>, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
        .ok_or_else(|| Error::invalid("moment totals are empty"))?;
    Ok(Guarantee {
        epsilon,
        delta,
        argmin_lambda: Some(argmin),
        method: Method::Moments,
        lambda_grid: totals.lambdas().collect(),
        num_queries: totals.num_queries,
    })
}

/// `min_lambda exp(alpha(lambda) - lambda epsilon)`, clamped to 1.
pub fn delta_for_eps(totals: &MomentTotals, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let log_delta = totals
        .totals
        .iter()
        .map(|t| t.alpha_total - f64::from(t.lambda) * epsilon)
        .fold(f64::INFINITY, f64::min);
    if log_delta == f64::INFINITY {
        return Err(Error::invalid("moment totals are empty"));
    }
    Ok(log_delta.exp().min(1.0))
}

/// `(4 T gamma^2 + 2 gamma sqrt(2 T ln(1/delta)), delta)` for `T` queries that
/// are each `2 gamma`-DP.
pub fn strong_composition_eps(gamma: f64, queries: u64, delta: f64) -> Result<Guarantee> {
    validate_gamma(gamma)?;
    validate_delta(delta)?;
    let t = queries as f64;
    let epsilon = 4.0 * t * gamma * gamma + 2.0 * gamma * (2.0 * t * (-delta.ln())).sqrt();
    Ok(Guarantee {
        epsilon,
        delta,
        argmin_lambda: None,
        method: Method::StrongComposition,
        lambda_grid: Vec::new(),
        num_queries: queries as usize,
    })
}
