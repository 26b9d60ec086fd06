//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pate::accountant::{
    data_dependent_moment, data_independent_moment, eps_for_delta, q_threshold, strong_composition_eps,
    LambdaGrid, LedgerMetadata, Method, MomentSource, PrivacyLedger,
};
use pate::interface::commands::{account_ledger, aggregate_queries, to_json};
use pate::interface::formats::read_votes;
use pate::oracle::audit::{self, AuditConfig};
use pate::rng;
use pate::simulation::{budget_report, sweep_gamma, EnsembleConfig};
use pate::{MechanismParams, VoteHistogram};
use rand::Rng;

/// Moments epsilon of the fixture at seed 0, gamma 0.05, delta 1e-5,
/// recomputed outside this crate in 40-digit arithmetic.
const FIXTURE_EPSILON: f64 = 1.6464315320774672;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn strong_composition() -> Verdict {
    let a = strong_composition_eps(0.05, 100, 1e-5).unwrap().epsilon;
    let b = strong_composition_eps(0.05, 1000, 1e-6).unwrap().epsilon;
    let pass = (5.79..=5.81).contains(&a) && (26.0..=27.0).contains(&b);
    verdict(pass, format!("T=100: eps={a:.6} in [5.79, 5.81]; T=1000: eps={b:.6} in [26, 27]"))
}

fn moments_vs_strong() -> Verdict {
    let grid = LambdaGrid::default();
    let mut ledger = PrivacyLedger::new(LedgerMetadata { gamma: 0.05, lambda_grid: grid.clone(), seed: 0 }).unwrap();
    // A split vote keeps q above threshold, so every query is charged the
    // data-independent bound.
    let hist = VoteHistogram::new(vec![125, 125]).unwrap();
    for i in 0..100 {
        ledger.record(format!("q{i}"), &hist);
    }
    let all_independent = ledger
        .entries()
        .iter()
        .all(|e| e.moments.iter().all(|m| m.source == MomentSource::DataIndependent));
    let moments = ledger.moments_guarantee(1e-5).unwrap();
    let strong = strong_composition_eps(0.05, 100, 1e-5).unwrap().epsilon;
    let pass = all_independent && (moments.epsilon - 5.30).abs() <= 0.01 && moments.epsilon < strong;
    verdict(
        pass,
        format!(
            "moments eps={:.6} at lambda={:?} (5.30 +/- 0.01), strong eps={strong:.6}, all data-independent={all_independent}",
            moments.epsilon, moments.argmin_lambda
        ),
    )
}

fn soundness_sweep() -> Verdict {
    let report = audit::run(&AuditConfig { histograms: 1000, mc_trials: 0, ..AuditConfig::default() }).unwrap();
    let pass = report.failures == 0 && report.histograms >= 1000 && report.moments.cases >= 1000 * 8;
    verdict(
        pass,
        format!(
            "{} histograms: q-bound {}/{} failed, moments {}/{} failed, pure-DP {}/{} failed",
            report.histograms,
            report.q_bound.failures,
            report.q_bound.cases,
            report.moments.failures,
            report.moments.cases,
            report.pure_dp.failures,
            report.pure_dp.cases
        ),
    )
}

fn oracle_cross_validation() -> Verdict {
    let report = audit::run(&AuditConfig {
        histograms: 0,
        mc_histograms: 100,
        mc_trials: 1_000_000,
        ..AuditConfig::default()
    })
    .unwrap();
    let mc = report.monte_carlo;
    let pass = mc.failures == 0 && mc.cases > 0 && report.mc_trials == 1_000_000;
    verdict(
        pass,
        format!(
            "100 histograms x 1e6 trials: {}/{} class probabilities outside 4 standard errors",
            mc.failures, mc.cases
        ),
    )
}

fn monotonicity() -> Verdict {
    let mut rng = rng::seeded(5);
    let mut checked = 0usize;
    let mut violations = 0usize;
    for gamma in [0.01, 0.05, 0.2, 1.0] {
        let threshold = q_threshold(gamma);
        for _ in 0..1000 {
            let a = rng.gen::<f64>() * threshold;
            let b = rng.gen::<f64>() * threshold;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for l in 1..=8 {
                checked += 1;
                let lo_bound = data_dependent_moment(lo, gamma, l).unwrap();
                let hi_bound = data_dependent_moment(hi, gamma, l).unwrap();
                if lo_bound > hi_bound {
                    violations += 1;
                }
            }
        }
    }
    verdict(violations == 0, format!("{checked} ordered pairs, {violations} decreases"))
}

fn figure_shapes() -> Verdict {
    let gammas = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
    let config = EnsembleConfig { queries: 2000, ..EnsembleConfig::default() };
    let sweep = sweep_gamma(&config, &gammas).unwrap();
    let monotone = sweep.points.windows(2).all(|w| {
        let se = (w[0].standard_error.powi(2) + w[1].standard_error.powi(2)).sqrt();
        w[1].accuracy >= w[0].accuracy - 2.0 * se
    });

    let at = |n| {
        let config = EnsembleConfig { n, queries: 2000, seed: 1, ..EnsembleConfig::default() };
        sweep_gamma(&config, &[0.01]).unwrap().points[0].accuracy
    };
    let (large, small) = (at(250), at(10));

    let gap = sweep_gamma(&EnsembleConfig { queries: 1000, ..EnsembleConfig::default() }, &[0.05])
        .unwrap()
        .mean_normalized_gap;

    let accuracies: Vec<String> = sweep.points.iter().map(|p| format!("{:.3}", p.accuracy)).collect();
    verdict(
        monotone && large > small && gap > 0.6,
        format!(
            "accuracy over gamma [{}] monotone within 2 SE={monotone}; gamma=0.01: n=250 {large:.3} vs n=10 {small:.3}; mean normalized gap {gap:.4} > 0.6",
            accuracies.join(", ")
        ),
    )
}

fn run_cli(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let votes = fixtures().join("votes_100.jsonl");
    let labels = dir.join("labels.jsonl");
    let ledger = dir.join("ledger.jsonl");
    let guarantee = dir.join("guarantee.json");
    let bin = env!("CARGO_BIN_EXE_pate");
    let status = Command::new(bin)
        .arg("aggregate")
        .arg(&votes)
        .args(["--gamma", "0.05", "--seed", "0", "--labels"])
        .arg(&labels)
        .arg("--ledger")
        .arg(&ledger)
        .status()
        .unwrap();
    assert!(status.success(), "aggregate failed");
    let status = Command::new(bin)
        .arg("account")
        .arg(&ledger)
        .args(["--delta", "1e-5", "--output"])
        .arg(&guarantee)
        .status()
        .unwrap();
    assert!(status.success(), "account failed");
    (std::fs::read(&guarantee).unwrap(), std::fs::read(&labels).unwrap())
}

fn determinism() -> Verdict {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let (guarantee_a, labels_a) = run_cli(first.path());
    let (guarantee_b, labels_b) = run_cli(second.path());
    let golden_guarantee = std::fs::read(fixtures().join("account_100.json")).unwrap();
    let golden_labels = std::fs::read(fixtures().join("labels_100.jsonl")).unwrap();

    let queries = read_votes(&fixtures().join("votes_100.jsonl")).unwrap();
    let params = MechanismParams::new(0.05, 0).unwrap();
    let in_process = aggregate_queries(&queries, &params, &LambdaGrid::default()).unwrap();
    let report = account_ledger(&in_process.ledger, 1e-5).unwrap();
    let in_process_json = to_json(&report).unwrap().into_bytes();

    let repeatable = guarantee_a == guarantee_b && labels_a == labels_b;
    let golden = guarantee_a == golden_guarantee && labels_a == golden_labels;
    let round_trip = in_process_json == guarantee_a;
    let oracle = (report.moments.epsilon - FIXTURE_EPSILON).abs() <= 1e-12 && report.moments.method == Method::Moments;
    verdict(
        repeatable && golden && round_trip && oracle,
        format!(
            "repeat runs identical={repeatable}, matches checked-in golden={golden}, CLI == in-process={round_trip}, eps={:.10} vs independent {FIXTURE_EPSILON:.10}",
            report.moments.epsilon
        ),
    )
}

fn budget_report_structure() -> Verdict {
    let grid = LambdaGrid::default();
    let default = budget_report(&EnsembleConfig::default(), 0.05, 1e-5, &grid).unwrap();
    // Uniform votes keep every query on the data-independent bound.
    let uniform = EnsembleConfig { teacher_accuracy: 0.1, ..EnsembleConfig::default() };
    let uniform = budget_report(&uniform, 0.05, 1e-5, &grid).unwrap();

    let ceiling_ok = grid.values().iter().all(|&l| {
        default.totals.alpha(l).unwrap() <= 100.0 * data_independent_moment(0.05, l) * (1.0 + 1e-12)
    });
    let data_independent = eps_for_delta(&uniform.totals, 1e-5).unwrap().epsilon;
    let text = to_json(&default).unwrap();
    let round_trip = serde_json::from_str::<pate::simulation::BudgetReport>(&text).unwrap() == default;
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let provenance = ["format_version", "seed", "gamma", "lambda_grid"].iter().all(|k| value.get(k).is_some());

    let strong = default.strong_composition.epsilon;
    let pass = (5.79..=5.81).contains(&strong)
        && default.moments.epsilon < strong
        && ceiling_ok
        && (uniform.moments.epsilon - 5.30).abs() <= 0.01
        && (uniform.moments.epsilon - data_independent).abs() < 1e-12
        && !uniform.data_dependent
        && default.data_dependent
        && default.aggregate_accuracy.is_some()
        && round_trip
        && provenance;
    verdict(
        pass,
        format!(
            "default ensemble: moments eps={:.4} (data-dependent) < strong eps={strong:.4}, accuracy={:.3}; uniform votes: moments eps={:.4}; JSON round trip={round_trip}, provenance fields={provenance}",
            default.moments.epsilon,
            default.aggregate_accuracy.unwrap_or(f64::NAN),
            uniform.moments.epsilon
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 strong-composition reproduction", strong_composition),
        ("2 moments below strong composition", moments_vs_strong),
        ("3 bound soundness sweep", soundness_sweep),
        ("4 quadrature vs Monte Carlo", oracle_cross_validation),
        ("5 data-dependent bound monotone in q", monotonicity),
        ("6 accuracy and gap shape checks", figure_shapes),
        ("7 end-to-end determinism", determinism),
        ("8 budget report structure", budget_report_structure),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("[{status}] criterion {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
