//! The operations behind each CLI subcommand, callable in-process.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::formats::{
    read_ledger, read_sweep_csv, read_votes, write_labels, write_ledger, write_sweep_csv, LabelRecord,
    Provenance, SweepProvenance, VoteQuery,
};
use crate::accountant::{compose, Guarantee, LambdaGrid, LedgerMetadata, MomentTotals, PrivacyLedger};
use crate::error::{Error, Result};
use crate::mechanism::{noisy_argmax_with, MechanismParams};
use crate::oracle::audit::{self, AuditConfig, AuditReport};
use crate::rng;
use crate::simulation::{budget_report, sweep_gamma, BudgetReport, EnsembleConfig, SweepResult};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub labels: Vec<LabelRecord>,
    pub ledger: PrivacyLedger,
}

/// Answers each query with noisy argmax and charges it to a fresh ledger.
///
/// Query `i` (0-based, file order) draws its noise from stream
/// `derive(seed, i)`, so a label depends only on the seed, its position and
/// its votes.
pub fn aggregate_queries(queries: &[VoteQuery], params: &MechanismParams, grid: &LambdaGrid) -> Result<Aggregation> {
    let mut ledger = PrivacyLedger::new(LedgerMetadata {
        gamma: params.gamma(),
        lambda_grid: grid.clone(),
        seed: params.seed(),
    })?;
    let labels = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let label = noisy_argmax_with(&q.votes, params.gamma(), &mut rng::derived(params.seed(), i as u64));
            ledger.record(q.query_id.clone(), &q.votes);
            LabelRecord {
                query_id: q.query_id.clone(),
                label,
            }
        })
        .collect();
    Ok(Aggregation { labels, ledger })
}

/// Reads a votes file, writes the released labels and the ledger.
pub fn aggregate(
    votes: &Path,
    labels_out: &Path,
    ledger_out: &Path,
    params: &MechanismParams,
    grid: &LambdaGrid,
) -> Result<Aggregation> {
    let queries = read_votes(votes)?;
    if queries.is_empty() {
        log::warn!("{} contains no queries; writing header-only outputs", votes.display());
    }
    let out = aggregate_queries(&queries, params, grid)?;
    write_labels(labels_out, &Provenance::new(params.seed(), params.gamma(), grid.clone()), &out.labels)?;
    write_ledger(ledger_out, &out.ledger)?;
    Ok(out)
}

/// Guarantees for a stored ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountReport {
    pub format_version: u32,
    pub seed: u64,
    pub gamma: f64,
    pub laplace_scale: f64,
    /// Pure-DP cost of a single query, `2 gamma`.
    pub per_query_epsilon: f64,
    pub lambda_grid: LambdaGrid,
    pub num_queries: usize,
    /// True when some query used the data-dependent bound; epsilon then
    /// depends on the private votes and is not itself private.
    pub data_dependent: bool,
    pub totals: MomentTotals,
    pub moments: Guarantee,
    /// Present when every entry shares the ledger's gamma.
    pub strong_composition: Option<Guarantee>,
}

pub fn account_ledger(ledger: &PrivacyLedger, delta: f64) -> Result<AccountReport> {
    let meta = ledger.metadata();
    let strong_composition = if ledger.has_uniform_gamma() {
        Some(ledger.strong_composition_guarantee(delta)?)
    } else {
        None
    };
    Ok(AccountReport {
        format_version: FORMAT_VERSION,
        seed: meta.seed,
        gamma: meta.gamma,
        laplace_scale: 1.0 / meta.gamma,
        per_query_epsilon: 2.0 * meta.gamma,
        lambda_grid: meta.lambda_grid.clone(),
        num_queries: ledger.len(),
        data_dependent: ledger.is_data_dependent(),
        totals: compose(ledger)?,
        moments: ledger.moments_guarantee(delta)?,
        strong_composition,
    })
}

pub fn account(ledger_path: &Path, delta: f64) -> Result<AccountReport> {
    account_ledger(&read_ledger(ledger_path)?, delta)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn verify(config: &AuditConfig) -> Result<AuditReport> {
    audit::run(config)
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: EnsembleConfig,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_grid: LambdaGrid,
    /// Noise levels for the accuracy sweep; empty skips it.
    pub sweep_gammas: Vec<f64>,
}

pub fn simulate(options: &SimulateOptions) -> Result<(BudgetReport, Option<SweepResult>)> {
    let budget = budget_report(&options.config, options.gamma, options.delta, &options.lambda_grid)?;
    let sweep = if options.sweep_gammas.is_empty() {
        None
    } else {
        Some(sweep_gamma(&options.config, &options.sweep_gammas)?)
    };
    Ok((budget, sweep))
}

pub fn write_sweep(path: &Path, options: &SimulateOptions, sweep: &SweepResult) -> Result<()> {
    let provenance = SweepProvenance {
        format_version: FORMAT_VERSION,
        seed: options.config.seed,
        gamma: options.sweep_gammas.clone(),
        lambda_grid: options.lambda_grid.clone(),
        n: options.config.n,
        m: options.config.m,
        teacher_accuracy: options.config.teacher_accuracy,
        queries: options.config.queries,
    };
    write_sweep_csv(path, &provenance, sweep)
}

fn guarantee_row(out: &mut String, g: &Guarantee) {
    let lambda = g.argmin_lambda.map_or_else(|| "-".to_string(), |l| l.to_string());
    let _ = writeln!(
        out,
        "  {:<20} {:>12.4} {:>12.3e} {:>8} {:>8}",
        g.method.to_string(),
        g.epsilon,
        g.delta,
        lambda,
        g.num_queries
    );
}

fn guarantee_header(out: &mut String) {
    let _ = writeln!(out, "  {:<20} {:>12} {:>12} {:>8} {:>8}", "method", "epsilon", "delta", "lambda", "queries");
}

fn render_account(out: &mut String, r: &AccountReport) {
    let _ = writeln!(
        out,
        "gamma {} (Laplace scale {}), per-query pure epsilon {}, lambda grid {:?}{}",
        r.gamma,
        r.laplace_scale,
        r.per_query_epsilon,
        r.lambda_grid.values(),
        if r.data_dependent { ", data-dependent" } else { "" }
    );
    guarantee_header(out);
    guarantee_row(out, &r.moments);
    if let Some(s) = &r.strong_composition {
        guarantee_row(out, s);
    }
}

fn render_budget(out: &mut String, r: &BudgetReport) {
    let _ = writeln!(
        out,
        "synthetic ensemble: n={} m={} teacher accuracy {} ({:?}), {} queries, seed {}",
        r.config.n, r.config.m, r.config.teacher_accuracy, r.config.error_model, r.config.queries, r.seed
    );
    let _ = writeln!(
        out,
        "gamma {} (Laplace scale {}), lambda grid {:?}{}",
        r.gamma,
        r.laplace_scale,
        r.lambda_grid.values(),
        if r.data_dependent { ", data-dependent" } else { "" }
    );
    match r.aggregate_accuracy {
        Some(a) => {
            let _ = writeln!(out, "aggregate label accuracy {:.4}", a);
        }
        None => {
            let _ = writeln!(out, "aggregate label accuracy -");
        }
    }
    guarantee_header(out);
    guarantee_row(out, &r.moments);
    guarantee_row(out, &r.strong_composition);
}

fn render_audit(out: &mut String, r: &AuditReport) {
    let _ = writeln!(
        out,
        "verification: {} histograms, {} checks, {} failures, max violation {:e}",
        r.histograms, r.cases, r.failures, r.max_violation
    );
    for (name, t) in [
        ("q bound", &r.q_bound),
        ("moments", &r.moments),
        ("pure dp", &r.pure_dp),
        ("monte carlo", &r.monte_carlo),
    ] {
        let _ = writeln!(out, "  {:<12} {:>8} cases {:>6} failures", name, t.cases, t.failures);
    }
}

/// Human-readable tables for any mix of files this tool writes.
pub fn report(paths: &[impl AsRef<Path>]) -> Result<String> {
    let mut out = String::new();
    for path in paths {
        let path = path.as_ref();
        let _ = writeln!(out, "== {}", path.display());
        if path.extension().is_some_and(|e| e == "csv") {
            let (provenance, rows) = read_sweep_csv(path)?;
            if let Some(p) = provenance {
                let _ = writeln!(
                    out,
                    "accuracy sweep: n={} m={} teacher accuracy {}, {} queries, seed {}",
                    p.n, p.m, p.teacher_accuracy, p.queries, p.seed
                );
            }
            let _ = writeln!(out, "  {:>10} {:>14} {:>10} {:>10} {:>10}", "gamma", "laplace scale", "accuracy", "mean gap", "norm gap");
            for row in rows {
                let _ = writeln!(
                    out,
                    "  {:>10} {:>14.2} {:>10.4} {:>10.2} {:>10.4}",
                    row.gamma,
                    1.0 / row.gamma,
                    row.accuracy,
                    row.mean_gap,
                    row.mean_normalized_gap
                );
            }
            continue;
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("config").is_some() {
            render_budget(&mut out, &serde_json::from_value(value)?);
        } else if value.get("histograms").is_some() {
            render_audit(&mut out, &serde_json::from_value(value)?);
        } else if value.get("moments").is_some() {
            render_account(&mut out, &serde_json::from_value(value)?);
        } else if value.get("method").is_some() {
            guarantee_header(&mut out);
            guarantee_row(&mut out, &serde_json::from_value(value)?);
        } else {
            return Err(Error::invalid(format!("{}: not a report this tool understands", path.display())));
        }
    }
    Ok(out)
}
