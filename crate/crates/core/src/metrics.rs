//! Run directories, metrics CSVs, sweeps and the exact-oracle report.
//!
//! A run directory holds:
//!
//! * `config`: the fully resolved [`TrainConfig`] as `key = value` lines,
//! * `metrics.csv`: one row per epoch under [`METRICS_HEADER`],
//! * `manifest`: run id, output path and start/finish timestamps,
//! * `policy.ckpt` / `value.ckpt`: parameter checkpoints, written once the
//!   run is solved.
//!
//! A sweep root holds one run directory per `algo_gammaXXX_seedY` plus
//! `summary.csv` under [`SUMMARY_HEADER`].

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{self, fmt_real};
use crate::nn::{write_checkpoint, MlpArchitecture};
use crate::tabular::{self, TabularMdp, TabularPolicy};
use crate::trainer::{train_with, Algo, EpochRecord, TrainConfig, TrainRun};

pub const METRICS_HEADER: &str =
    "epoch,episodes,mean_return,min_return,max_return,policy_kl,entropy,surrogate_before,surrogate_after,value_loss,solved";

pub const SUMMARY_HEADER: &str =
    "algo,gamma,runs,solved,unsolved,solve_rate,median_epochs_to_solve,min_epochs_to_solve,max_epochs_to_solve";

/// Environment variable that supplies the default output root.
pub const OUT_ROOT_ENV: &str = "ENTRPO_OUT_ROOT";

pub fn metrics_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.episodes,
        fmt_real(r.mean_return),
        fmt_real(r.min_return),
        fmt_real(r.max_return),
        fmt_real(r.diag.mean_kl),
        fmt_real(r.diag.mean_entropy),
        fmt_real(r.diag.surrogate_before),
        fmt_real(r.diag.surrogate_after),
        r.value_loss.map(fmt_real).unwrap_or_default(),
        r.solved,
    )
}

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub policy_kl: f64,
    pub entropy: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub value_loss: Option<f64>,
    pub solved: bool,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().context("empty metrics file")??;
    if header != METRICS_HEADER {
        bail!("{}: unexpected header {header:?}", path.display());
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            bail!("{}: row {} has {} fields", path.display(), i + 2, f.len());
        }
        let real = |s: &str| s.parse::<f64>().with_context(|| format!("bad real {s:?}"));
        rows.push(MetricsRow {
            epoch: f[0].parse()?,
            episodes: f[1].parse()?,
            mean_return: real(f[2])?,
            min_return: real(f[3])?,
            max_return: real(f[4])?,
            policy_kl: real(f[5])?,
            entropy: real(f[6])?,
            surrogate_before: real(f[7])?,
            surrogate_after: real(f[8])?,
            value_loss: if f[9].is_empty() { None } else { Some(real(f[9])?) },
            solved: f[10].parse()?,
        });
    }
    Ok(rows)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `algo_gammaXXX_seedY`, with `XXX` the discount in hundredths.
pub fn run_id(cfg: &TrainConfig) -> String {
    format!("{}_gamma{:03}_seed{}", cfg.algo, (cfg.gamma * 100.0).round() as u64, cfg.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub output_path: PathBuf,
    pub started: u64,
    pub finished: Option<u64>,
}

impl RunManifest {
    fn write(&self) -> Result<()> {
        let mut text = format!(
            "run_id = {}\noutput_path = {}\nstarted_unix = {}\n",
            self.run_id,
            self.output_path.display(),
            self.started
        );
        if let Some(f) = self.finished {
            text.push_str(&format!("finished_unix = {f}\n"));
        }
        fs::write(self.output_path.join("manifest"), text)?;
        Ok(())
    }
}

/// Trains once into `out`, streaming epoch rows to `metrics.csv`.
pub fn run_training(cfg: &TrainConfig, out: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config"), config::to_text(cfg))?;
    let mut manifest = RunManifest {
        run_id: run_id(cfg),
        config: cfg.clone(),
        output_path: out.to_path_buf(),
        started: unix_now(),
        finished: None,
    };
    manifest.write()?;

    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut io_error = None;
    let run = train_with(cfg.clone(), |r| {
        if io_error.is_none() {
            if let Err(e) = writeln!(csv, "{}", metrics_row(r)) {
                io_error = Some(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    csv.flush()?;

    if run.epochs_to_solve().is_some() {
        write_checkpoint(BufWriter::new(File::create(out.join("policy.ckpt"))?), &MlpArchitecture::policy(), &run.policy)?;
        write_checkpoint(BufWriter::new(File::create(out.join("value.ckpt"))?), &MlpArchitecture::value(), &run.value)?;
    }
    manifest.finished = Some(unix_now());
    manifest.write()?;
    Ok(run)
}

/// Algorithm × discount × seed grid.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: TrainConfig,
    pub algos: Vec<Algo>,
    pub gammas: Vec<f64>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
    pub jobs: usize,
    pub out_root: PathBuf,
}

/// Outcome of one run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub algo: Algo,
    pub gamma: f64,
    pub seed: u64,
    pub epochs: usize,
    pub epochs_to_solve: Option<usize>,
    pub halted: Option<String>,
    pub dir: PathBuf,
}

/// Epochs-to-solve statistics of one `(algo, gamma)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: Algo,
    pub gamma: f64,
    pub runs: usize,
    pub solved: usize,
    /// Median over all seeds with unsolved runs ranked last; `None` when
    /// the median seed did not solve.
    pub median_epochs: Option<f64>,
    pub min_epochs: Option<usize>,
    pub max_epochs: Option<usize>,
}

impl SummaryRow {
    pub fn unsolved(&self) -> usize {
        self.runs - self.solved
    }

    pub fn solve_rate(&self) -> f64 {
        self.solved as f64 / self.runs as f64
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.algo,
            self.gamma,
            self.runs,
            self.solved,
            self.unsolved(),
            self.solve_rate(),
            opt(self.median_epochs.map(|m| m.to_string())),
            opt(self.min_epochs.map(|m| m.to_string())),
            opt(self.max_epochs.map(|m| m.to_string())),
        )
    }
}

/// Median of epochs-to-solve with unsolved runs treated as infinitely late.
pub fn median_epochs(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|e| e.map_or(f64::INFINITY, |x| x as f64)).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

pub fn summarize(outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut cells: Vec<(Algo, f64)> = Vec::new();
    for o in outcomes {
        if !cells.iter().any(|&(a, g)| a == o.algo && g == o.gamma) {
            cells.push((o.algo, o.gamma));
        }
    }
    cells
        .into_iter()
        .map(|(algo, gamma)| {
            let epochs: Vec<Option<usize>> = outcomes
                .iter()
                .filter(|o| o.algo == algo && o.gamma == gamma)
                .map(|o| o.epochs_to_solve)
                .collect();
            let solved: Vec<usize> = epochs.iter().flatten().copied().collect();
            SummaryRow {
                algo,
                gamma,
                runs: epochs.len(),
                solved: solved.len(),
                median_epochs: median_epochs(&epochs),
                min_epochs: solved.iter().min().copied(),
                max_epochs: solved.iter().max().copied(),
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs the whole grid, then writes `summary.csv` once every run finished.
pub fn run_compare(plan: &SweepPlan) -> Result<(Vec<RunOutcome>, Vec<SummaryRow>)> {
    if plan.gammas.is_empty() || plan.algos.is_empty() || plan.seeds == 0 {
        bail!("compare needs at least one algorithm, discount and seed");
    }
    let mut grid = Vec::new();
    for &algo in &plan.algos {
        for &gamma in &plan.gammas {
            for seed in 0..plan.seeds {
                let cfg = TrainConfig {
                    algo,
                    gamma,
                    seed,
                    ..plan.base.clone()
                };
                cfg.validate()?;
                grid.push(cfg);
            }
        }
    }
    fs::create_dir_all(&plan.out_root)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.jobs.max(1)).build()?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        grid.par_iter()
            .map(|cfg| {
                let dir = plan.out_root.join(run_id(cfg));
                let run = run_training(cfg, &dir)?;
                log::info!("{} finished: {} epochs, solved at {:?}", run_id(cfg), run.records.len(), run.epochs_to_solve());
                Ok(RunOutcome {
                    algo: cfg.algo,
                    gamma: cfg.gamma,
                    seed: cfg.seed,
                    epochs: run.records.len(),
                    epochs_to_solve: run.epochs_to_solve(),
                    halted: run.halted,
                    dir,
                })
            })
            .collect::<Result<_>>()
    })?;
    let summary = summarize(&outcomes);
    write_summary(&plan.out_root.join("summary.csv"), &summary)?;
    Ok((outcomes, summary))
}

/// Worst case of one oracle check over all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Largest residual, or for the lower bound the smallest slack.
    pub worst: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub failed: usize,
}

impl CheckResult {
    fn residual(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            worst: 0.0,
            tolerance,
            checked: 0,
            failed: 0,
        }
    }

    fn record_residual(&mut self, r: f64) {
        self.checked += 1;
        self.worst = self.worst.max(r);
        if r.is_nan() || r > self.tolerance {
            self.failed += 1;
        }
    }

    fn record_slack(&mut self, slack: f64) {
        if self.checked == 0 {
            self.worst = slack;
        }
        self.checked += 1;
        self.worst = self.worst.min(slack);
        if slack.is_nan() || slack < -self.tolerance {
            self.failed += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub instances: usize,
    pub performance_difference: CheckResult,
    pub lower_bound: CheckResult,
    pub m_identity: CheckResult,
    pub policy_iteration: CheckResult,
    pub visitation_mass: CheckResult,
    /// Informational: how often each reading of the entropy-augmented bound
    /// held, out of the policy pairs checked.
    pub entropy_bound_kl_squared_held: usize,
    pub entropy_bound_entropy_coef_held: usize,
    pub entropy_bound_pairs: usize,
}

impl VerifyReport {
    pub fn checks(&self) -> [&CheckResult; 5] {
        [
            &self.performance_difference,
            &self.lower_bound,
            &self.m_identity,
            &self.policy_iteration,
            &self.visitation_mass,
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed())
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances: {}", self.instances)?;
        for c in self.checks() {
            let what = if c.name == "lower_bound" { "min slack" } else { "worst residual" };
            writeln!(
                f,
                "{:<24} {} {}/{} passed, {what} {:.3e} (tolerance {:.0e})",
                c.name,
                if c.passed() { "PASS" } else { "FAIL" },
                c.checked - c.failed,
                c.checked,
                c.worst,
                c.tolerance
            )?;
        }
        writeln!(
            f,
            "entropy-augmented bound (informational): held {}/{} with max-KL squared, {}/{} with temperature squared",
            self.entropy_bound_kl_squared_held,
            self.entropy_bound_pairs,
            self.entropy_bound_entropy_coef_held,
            self.entropy_bound_pairs
        )
    }
}

pub const POLICY_ITERATION_MDPS: usize = 20;
pub const POLICY_ITERATION_STEPS: usize = 10;
pub const POLICY_ITERATION_PENALTIES: [f64; 3] = [0.0, 1.0, 10.0];
const POLICY_PAIRS: usize = 3;
const ENTROPY_TEMPERATURE: f64 = 1e-4;

/// Random instance `i` of a verification sweep: up to 5 states, up to 3
/// actions, and three policy pairs.
pub fn verify_instance(seed: u64, i: usize) -> (TabularMdp, Vec<(TabularPolicy, TabularPolicy)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let ns = rng.random_range(2..=5);
    let na = rng.random_range(2..=3);
    let mdp = tabular::random_mdp(&mut rng, ns, na);
    let pairs = (0..POLICY_PAIRS)
        .map(|_| {
            (
                tabular::random_policy(&mut rng, ns, na, 2.0),
                tabular::random_policy(&mut rng, ns, na, 2.0),
            )
        })
        .collect();
    (mdp, pairs)
}

/// Runs every exact check over `instances` random MDPs.
pub fn run_verify(instances: usize, seed: u64) -> Result<VerifyReport> {
    if instances == 0 {
        bail!("need at least one instance");
    }
    let mut report = VerifyReport {
        instances,
        performance_difference: CheckResult::residual("performance_difference", 1e-8),
        lower_bound: CheckResult::residual("lower_bound", 1e-9),
        m_identity: CheckResult::residual("m_identity", 1e-10),
        policy_iteration: CheckResult::residual("policy_iteration", 1e-12),
        visitation_mass: CheckResult::residual("visitation_mass", 1e-10),
        entropy_bound_kl_squared_held: 0,
        entropy_bound_entropy_coef_held: 0,
        entropy_bound_pairs: 0,
    };
    for i in 0..instances {
        let (mdp, pairs) = verify_instance(seed, i);
        let mass = 1.0 / (1.0 - mdp.gamma());
        for (pi, pi_tilde) in &pairs {
            report
                .performance_difference
                .record_residual(tabular::check_performance_difference(&mdp, pi, pi_tilde)?);
            report.lower_bound.record_slack(tabular::check_lower_bound(&mdp, pi, pi_tilde)?.slack());
            for p in [pi, pi_tilde] {
                report.m_identity.record_residual(tabular::check_m_identity(&mdp, p)?);
                let rho = tabular::visitation(&mdp, p)?;
                report.visitation_mass.record_residual((rho.iter().sum::<f64>() - mass).abs());
            }
            let readings = tabular::entropy_bound_readings(&mdp, pi, pi_tilde, ENTROPY_TEMPERATURE)?;
            report.entropy_bound_pairs += 1;
            if readings.eta_new >= readings.rhs_kl_squared - 1e-9 {
                report.entropy_bound_kl_squared_held += 1;
            }
            if readings.eta_new >= readings.rhs_entropy_coef - 1e-9 {
                report.entropy_bound_entropy_coef_held += 1;
            }
        }
        if i < POLICY_ITERATION_MDPS {
            for c in POLICY_ITERATION_PENALTIES {
                let mut pi = pairs[0].0.clone();
                let mut prev = tabular::eta(&mdp, &pi)?;
                for _ in 0..POLICY_ITERATION_STEPS {
                    pi = tabular::exact_policy_iteration_step(&mdp, &pi, c)?;
                    let next = tabular::eta(&mdp, &pi)?;
                    report.policy_iteration.record_residual((prev - next).max(0.0));
                    prev = next;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust_region::UpdateDiagnostics;

    #[test]
    fn header_is_exact() {
        assert_eq!(
            METRICS_HEADER,
            "epoch,episodes,mean_return,min_return,max_return,policy_kl,entropy,surrogate_before,surrogate_after,value_loss,solved"
        );
    }

    #[test]
    fn run_ids() {
        let cfg = TrainConfig {
            algo: Algo::Trpo,
            gamma: 0.85,
            seed: 3,
            ..TrainConfig::default()
        };
        assert_eq!(run_id(&cfg), "trpo_gamma085_seed3");
        let cfg = TrainConfig { gamma: 0.9, ..cfg };
        assert_eq!(run_id(&cfg), "trpo_gamma090_seed3");
    }

    #[test]
    fn medians_rank_unsolved_last() {
        assert_eq!(median_epochs(&[Some(10), None, Some(30)]), Some(30.0));
        assert_eq!(median_epochs(&[Some(10), None, None]), None);
        assert_eq!(median_epochs(&[Some(10), Some(20)]), Some(15.0));
        assert_eq!(median_epochs(&[]), None);
    }

    #[test]
    fn unsolved_cells_have_empty_epochs() {
        let o = |algo, seed, e| RunOutcome {
            algo,
            gamma: 0.9,
            seed,
            epochs: 200,
            epochs_to_solve: e,
            halted: None,
            dir: PathBuf::new(),
        };
        let rows = summarize(&[o(Algo::Trpo, 0, None), o(Algo::Trpo, 1, None), o(Algo::Entrpo, 0, Some(120))]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].to_csv(), "trpo,0.9,2,0,2,0,,,");
        assert_eq!(rows[1].to_csv(), "entrpo,0.9,1,1,0,1,120,120,120");
    }

    #[test]
    fn metrics_rows_round_trip() {
        let rec = EpochRecord {
            epoch: 4,
            episodes: 7,
            timesteps: 1100,
            mean_return: 157.142857142857,
            min_return: 20.0,
            max_return: 200.0,
            diag: UpdateDiagnostics {
                surrogate_before: 0.0,
                surrogate_after: 0.0123,
                mean_kl: 0.0091,
                mean_entropy: 0.61,
                step_accepted: true,
                backtrack_count: 1,
                cg_residual: 1e-3,
            },
            value_loss: None,
            solved: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        fs::write(&path, format!("{METRICS_HEADER}\n{}\n", metrics_row(&rec))).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows[0].mean_return.to_bits(), rec.mean_return.to_bits());
        assert_eq!(rows[0].policy_kl, 0.0091);
        assert_eq!(rows[0].value_loss, None);
        assert!(!rows[0].solved);
    }

    #[test]
    fn verify_is_deterministic() {
        let a = run_verify(5, 7).unwrap();
        assert_eq!(a, run_verify(5, 7).unwrap());
        assert!(a.all_passed(), "{a}");
        assert!(run_verify(0, 7).is_err());
    }
}
