//! Acceptance gates, one line per criterion.
//!
//! Criteria 1 to 11 are exact or numerical checks and must all pass. 12, 13
//! and 15 gate on the five-seed sweep; 14 is reported but never fails the
//! target. Set `ENTRPO_ACCEPTANCE_OUT` to keep the sweep directory.

mod common;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use entrpo::metrics::{self, read_metrics, SweepPlan, RunOutcome, SummaryRow};
use entrpo::nn::MlpArchitecture;
use entrpo::replay::ReplayBuffer;
use entrpo::trainer::{collect_epoch, fit_value, train, Adam};
use entrpo::trust_region::{self, policy_distributions, trpo_step, PolicyBatch};
use entrpo::{Algo, CartPole, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ORACLE_BUDGET_SECS: f64 = 10.0;
const NUMERICS_BUDGET_SECS: f64 = 30.0;
const EPOCH_LIMIT: f64 = 200.0;

#[derive(PartialEq)]
enum Gate {
    Hard,
    Informational,
}

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    gate: Gate,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, id: u32, name: &'static str, passed: bool, detail: String) {
    results.push(Outcome {
        id,
        name,
        passed,
        gate: Gate::Hard,
        detail,
    });
}

fn oracle_suite(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let r = metrics::run_verify(100, 7).expect("verification runs");
    let secs = start.elapsed().as_secs_f64();
    let within = secs < ORACLE_BUDGET_SECS;
    let line = |c: &metrics::CheckResult| {
        format!(
            "{}/{} passed, worst {:.3e} (tolerance {:.0e}), suite {secs:.2}s",
            c.checked - c.failed,
            c.checked,
            c.worst,
            c.tolerance
        )
    };
    report(results, 1, "performance-difference identity", r.performance_difference.passed() && within, line(&r.performance_difference));
    report(results, 2, "trust-region lower bound", r.lower_bound.passed() && within, line(&r.lower_bound));
    report(results, 3, "surrogate equals return at the anchor policy", r.m_identity.passed() && within, line(&r.m_identity));
    report(results, 4, "penalized policy iteration is monotone", r.policy_iteration.passed() && within, line(&r.policy_iteration));
    report(results, 5, "visitation mass", r.visitation_mass.passed() && within, line(&r.visitation_mass));
}

fn numerics_suite(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let policy = (0..25).map(common::policy_gradient_error).fold(0.0, f64::max);
    let value = (0..25).map(|s| common::value_gradient_error(100 + s)).fold(0.0, f64::max);
    let fisher = (0..10).map(common::fisher_product_error).fold(0.0, f64::max);
    let cg = (0..50).map(common::cg_error).fold(0.0, f64::max);
    let (kl_ok, kl_detail) = accepted_steps_respect_kl();
    let (bits_ok, bits_detail) = zero_temperature_matches_trpo();
    let (clear_ok, clear_detail) = replay_clear_rule();
    let secs = start.elapsed().as_secs_f64();
    let within = secs < NUMERICS_BUDGET_SECS;
    let grad = policy.max(value);
    report(
        results,
        6,
        "network gradients match central differences",
        grad <= 1e-5 && within,
        format!("50 draws, worst policy {policy:.3e}, value {value:.3e} (tolerance 1e-5)"),
    );
    report(
        results,
        7,
        "Fisher-vector product matches KL Hessian",
        fisher <= 1e-4 && within,
        format!("10 draws, worst {fisher:.3e} (tolerance 1e-4)"),
    );
    report(results, 8, "conjugate gradient matches dense solve", cg <= 1e-6 && within, format!("50 systems, worst {cg:.3e} (tolerance 1e-6)"));
    report(results, 9, "accepted steps stay inside the KL radius", kl_ok && within, kl_detail);
    report(results, 10, "zero temperature reproduces TRPO bit for bit", bits_ok && within, bits_detail);
    report(
        results,
        11,
        "replay memory clears strictly above 195",
        clear_ok && within,
        format!("{clear_detail}, suite {secs:.1}s"),
    );
}

/// Replays the trainer's epoch loop and measures the KL of every accepted
/// step independently of the update's own bookkeeping.
fn accepted_steps_respect_kl() -> (bool, String) {
    let cfg = TrainConfig {
        algo: Algo::Entrpo,
        gamma: 0.85,
        seed: 0,
        ..TrainConfig::default()
    };
    let arch = MlpArchitecture::policy();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = arch.init_params(&mut rng);
    let mut value = MlpArchitecture::value().init_params(&mut rng);
    let mut env = CartPole::new(cfg.env).unwrap();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.buffer_clear_threshold);
    let mut adam = Adam::new(value.len(), cfg.value_lr);
    let (mut accepted, mut worst, mut epochs) = (0, 0.0f64, 0);
    let mut window = VecDeque::new();
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        let trajs = collect_epoch(&mut env, &policy, &value, &cfg, &mut buffer, &mut rng).unwrap();
        fit_value(&mut value, &mut adam, &buffer, &cfg, &mut rng).unwrap();
        let batch = PolicyBatch::from_trajectories(&trajs, cfg.normalize_advantages).unwrap();
        let old = policy_distributions(&arch, &policy, batch.states.view()).unwrap();
        let (next, diag) = trpo_step(&arch, &policy, &batch, &cfg.trust_region, true, cfg.gamma).unwrap();
        if diag.step_accepted {
            accepted += 1;
            worst = worst.max(trust_region::mean_kl(&arch, &old, &next, batch.states.view()).unwrap());
        }
        policy = next;
        for t in &trajs {
            if window.len() == cfg.solved_window {
                window.pop_front();
            }
            window.push_back(t.total_reward());
        }
        if window.len() == cfg.solved_window && window.iter().sum::<f64>() / window.len() as f64 >= cfg.solved_threshold {
            break;
        }
    }
    (
        accepted > 0 && worst <= cfg.trust_region.kl_delta,
        format!(
            "{accepted}/{epochs} steps accepted, largest KL {worst:.3e} (radius {:.0e})",
            cfg.trust_region.kl_delta
        ),
    )
}

fn zero_temperature_matches_trpo() -> (bool, String) {
    let base = TrainConfig {
        gamma: 0.85,
        seed: 3,
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let trpo = train(TrainConfig { algo: Algo::Trpo, ..base.clone() }).unwrap();
    let mut zero = TrainConfig { algo: Algo::Entrpo, ..base };
    zero.trust_region.entropy_coef = 0.0;
    let entrpo = train(zero).unwrap();
    let same_records = format!("{:?}", trpo.records) == format!("{:?}", entrpo.records);
    let same_params = trpo.policy.iter().zip(entrpo.policy.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    (
        same_records && same_params && !trpo.records.is_empty(),
        format!("{} epochs compared, records identical: {same_records}, parameters identical: {same_params}", trpo.records.len()),
    )
}

fn replay_clear_rule() -> (bool, String) {
    let below = [0.0, 150.0, 194.5, 195.0];
    let above = [f64::from_bits(195f64.to_bits() + 1), 195.5, 196.0, 200.0];
    let mut ok = true;
    for (ret, expect) in below.iter().map(|&r| (r, false)).chain(above.iter().map(|&r| (r, true))) {
        let mut buf = ReplayBuffer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env = CartPole::new(Default::default()).unwrap();
        let cfg = TrainConfig {
            epoch_min_timesteps: 1,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::policy();
        let trajs = collect_epoch(
            &mut env,
            &arch.zero_params(),
            &MlpArchitecture::value().zero_params(),
            &cfg,
            &mut buf,
            &mut rng,
        )
        .unwrap();
        let stored = buf.len();
        let cleared = buf.clear_if_solved(ret);
        ok &= cleared == expect && (buf.is_empty() == expect) && (stored == trajs[0].len());
    }
    (ok, format!("{} returns probed around the threshold", below.len() + above.len()))
}

fn sweep_dir() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("ENTRPO_ACCEPTANCE_OUT") {
        Some(p) => (PathBuf::from(p), None),
        None => {
            let tmp = tempfile::tempdir().expect("temporary directory");
            (tmp.path().to_path_buf(), Some(tmp))
        }
    }
}

fn cell(summary: &[SummaryRow], algo: Algo, gamma: f64) -> &SummaryRow {
    summary.iter().find(|r| r.algo == algo && r.gamma == gamma).expect("cell present")
}

fn describe(row: &SummaryRow) -> String {
    format!(
        "{} solved {}/{}, median epochs {}, range {}",
        row.algo,
        row.solved,
        row.runs,
        row.median_epochs.map_or("unsolved".into(), |m| m.to_string()),
        match (row.min_epochs, row.max_epochs) {
            (Some(a), Some(b)) => format!("{a}..{b}"),
            _ => "none".into(),
        }
    )
}

fn sweep_suite(results: &mut Vec<Outcome>) {
    let (out_root, _guard) = sweep_dir();
    let start = Instant::now();
    let plan = SweepPlan {
        base: TrainConfig::default(),
        algos: vec![Algo::Trpo, Algo::Entrpo],
        gammas: vec![0.8, 0.85, 0.9],
        seeds: 5,
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        out_root: out_root.clone(),
    };
    let (outcomes, summary) = metrics::run_compare(&plan).expect("sweep runs");
    let secs = start.elapsed().as_secs_f64();

    let en85 = cell(&summary, Algo::Entrpo, 0.85);
    report(
        results,
        12,
        "entropy-regularized, discount 0.85, solves within 200 epochs",
        en85.median_epochs.is_some_and(|m| m <= EPOCH_LIMIT),
        format!("{}; sweep {secs:.0}s", describe(en85)),
    );
    let tr85 = cell(&summary, Algo::Trpo, 0.85);
    report(
        results,
        13,
        "plain TRPO, discount 0.85, solves within 200 epochs",
        tr85.median_epochs.is_some_and(|m| m <= EPOCH_LIMIT),
        describe(tr85),
    );
    let (en90, tr90) = (cell(&summary, Algo::Entrpo, 0.9), cell(&summary, Algo::Trpo, 0.9));
    results.push(Outcome {
        id: 14,
        name: "discount 0.9 solve rates (entropy-regularized at least plain)",
        passed: en90.solve_rate() >= tr90.solve_rate(),
        gate: Gate::Informational,
        detail: format!("{}; {}", describe(en90), describe(tr90)),
    });
    let curves_ok = outcomes.iter().filter(|o| o.gamma == 0.8).all(complete_curve);
    let (en80, tr80) = (cell(&summary, Algo::Entrpo, 0.8), cell(&summary, Algo::Trpo, 0.8));
    report(
        results,
        15,
        "discount 0.8 runs complete with full curves",
        curves_ok && en80.runs == 5 && tr80.runs == 5,
        format!("{}; {}", describe(en80), describe(tr80)),
    );
}

fn complete_curve(o: &RunOutcome) -> bool {
    o.halted.is_none()
        && read_metrics(&o.dir.join("metrics.csv"))
            .map(|rows| rows.len() == o.epochs && rows.iter().enumerate().all(|(i, r)| r.epoch == i + 1))
            .unwrap_or(false)
}

fn main() -> ExitCode {
    // The harness passes test-runner flags; only a listing request matters.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut results = Vec::new();
    oracle_suite(&mut results);
    numerics_suite(&mut results);
    sweep_suite(&mut results);

    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        let note = if r.gate == Gate::Informational { " [informational]" } else { "" };
        println!("{tag} {:>2} {}{note}: {}", r.id, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed && r.gate == Gate::Hard).count();
    println!("acceptance: {} criteria, {failed} gating failures", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
