//! Exact policy evaluation on small finite MDPs.
//!
//! Everything here is computed by direct linear solves, so the identities and
//! bounds behind trust-region updates can be checked to near machine
//! precision: value functions, discounted visitation, the
//! performance-difference identity, the KL-penalized lower bound and the
//! monotone penalized policy-iteration scheme.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::TabularError;

pub type Result<T> = std::result::Result<T, TabularError>;

const SUM_TOL: f64 = 1e-12;

/// Finite MDP with `P[s][a][s']`, `r[s][a]`, `rho0[s]` and discount `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
}

fn check_distribution(row: &[f64]) -> bool {
    row.iter().all(|&p| p >= 0.0 && p.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
}

impl TabularMdp {
    /// `transitions` is laid out `[s][a][s']`, `rewards` `[s][a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(TabularError::InvalidMdp(m));
        if n_states == 0 || n_actions == 0 {
            return bad("empty state or action space".into());
        }
        if transitions.len() != n_states * n_actions * n_states {
            return bad(format!("transition table has {} entries", transitions.len()));
        }
        if rewards.len() != n_states * n_actions || rewards.iter().any(|r| !r.is_finite()) {
            return bad("reward table has wrong size or non-finite entries".into());
        }
        if initial.len() != n_states || !check_distribution(&initial) {
            return bad("initial distribution is not a probability vector".into());
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {gamma}"));
        }
        for (i, row) in transitions.chunks(n_states).enumerate() {
            if !check_distribution(row) {
                return bad(format!("P[{}][{}] is not a distribution", i / n_actions, i % n_actions));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            initial,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// Same dynamics with a different reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            rewards,
            self.initial.clone(),
            self.gamma,
        )
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(TabularError::InvalidPolicy(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// State-to-state transition matrix under `pi`.
    fn policy_transitions(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_states, |s, next| {
            (0..self.n_actions).map(|a| pi.prob(s, a) * self.p(s, a, next)).sum()
        })
    }

    fn policy_rewards(&self, pi: &TabularPolicy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions).map(|a| pi.prob(s, a) * self.r(s, a)).sum()
        })
    }
}

/// Stochastic policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(TabularError::InvalidPolicy("shape mismatch".into()));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if !check_distribution(row) {
                return Err(TabularError::InvalidPolicy(format!("row {s} is not a distribution")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, choices: &[usize]) -> Result<Self> {
        if choices.iter().any(|&a| a >= n_actions) {
            return Err(TabularError::InvalidPolicy("action out of range".into()));
        }
        let mut probs = vec![0.0; choices.len() * n_actions];
        for (s, &a) in choices.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(choices.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

/// `KL(p ‖ q)` between two action distributions; infinite when `q` misses
/// support of `p`.
pub fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

pub fn entropy_row(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `max_s KL(old(·|s) ‖ new(·|s))`.
pub fn max_kl(old: &TabularPolicy, new: &TabularPolicy) -> f64 {
    (0..old.n_states)
        .map(|s| kl_rows(old.row(s), new.row(s)))
        .fold(0.0, f64::max)
}

/// `V`, `Q` and `A = Q − V` of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactValues {
    pub v: Vec<f64>,
    q: Vec<f64>,
    n_actions: usize,
}

impl ExactValues {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn advantage(&self, s: usize, a: usize) -> f64 {
        self.q(s, a) - self.v[s]
    }

    /// `max_{s,a} |A(s, a)|`.
    pub fn max_abs_advantage(&self) -> f64 {
        (0..self.v.len())
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.advantage(s, a).abs())
            .fold(0.0, f64::max)
    }
}

fn solve(m: DMatrix<f64>, b: DVector<f64>) -> Result<Vec<f64>> {
    let x = m.lu().solve(&b).ok_or(TabularError::Singular)?;
    Ok(x.iter().copied().collect())
}

/// Solves `(I − γ P_π) V = r_π` and derives `Q` and `A`.
pub fn exact_values(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<ExactValues> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let m = DMatrix::identity(n, n) - mdp.policy_transitions(pi) * mdp.gamma;
    let v = solve(m, mdp.policy_rewards(pi))?;
    let q = (0..n)
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .map(|(s, a)| mdp.r(s, a) + mdp.gamma * (0..n).map(|t| mdp.p(s, a, t) * v[t]).sum::<f64>())
        .collect();
    Ok(ExactValues {
        v,
        q,
        n_actions: mdp.n_actions,
    })
}

/// Discounted visitation `ρ = ρ0 + γ P_πᵀ ρ`.
pub fn visitation(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let m = DMatrix::identity(n, n) - mdp.policy_transitions(pi).transpose() * mdp.gamma;
    solve(m, DVector::from_column_slice(&mdp.initial))
}

/// Expected discounted return from the initial distribution, `ρ0 · V`.
pub fn eta(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let values = exact_values(mdp, pi)?;
    Ok(mdp.initial.iter().zip(&values.v).map(|(p, v)| p * v).sum())
}

/// The same quantity through the visitation measure,
/// `Σ_s ρ_π(s) Σ_a π(a|s) r(s, a)`.
pub fn eta_from_visitation(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let rho = visitation(mdp, pi)?;
    Ok((0..mdp.n_states)
        .map(|s| rho[s] * (0..mdp.n_actions).map(|a| pi.prob(s, a) * mdp.r(s, a)).sum::<f64>())
        .sum())
}

/// `Σ_s ρ(s) Σ_a π̃(a|s) A(s, a)` for a given visitation and advantage.
fn weighted_advantage(rho: &[f64], pi_tilde: &TabularPolicy, values: &ExactValues) -> f64 {
    (0..rho.len())
        .map(|s| {
            rho[s]
                * (0..pi_tilde.n_actions)
                    .map(|a| pi_tilde.prob(s, a) * values.advantage(s, a))
                    .sum::<f64>()
        })
        .sum()
}

/// Local approximation `L_π(π̃) = η(π) + Σ_s ρ_π(s) Σ_a π̃(a|s) A_π(s, a)`.
pub fn local_approximation(mdp: &TabularMdp, pi: &TabularPolicy, pi_tilde: &TabularPolicy) -> Result<f64> {
    mdp.check_policy(pi_tilde)?;
    let values = exact_values(mdp, pi)?;
    let rho = visitation(mdp, pi)?;
    let eta_pi: f64 = mdp.initial.iter().zip(&values.v).map(|(p, v)| p * v).sum();
    Ok(eta_pi + weighted_advantage(&rho, pi_tilde, &values))
}

/// `4 ε γ / (1 − γ)²`.
pub fn penalty_coefficient(epsilon: f64, gamma: f64) -> f64 {
    4.0 * epsilon * gamma / ((1.0 - gamma) * (1.0 - gamma))
}

/// `|η(π̃) − η(π) − Σ_s ρ_π̃(s) Σ_a π̃(a|s) A_π(s, a)|`.
pub fn check_performance_difference(mdp: &TabularMdp, pi: &TabularPolicy, pi_tilde: &TabularPolicy) -> Result<f64> {
    let values = exact_values(mdp, pi)?;
    let rho_tilde = visitation(mdp, pi_tilde)?;
    let rhs = eta(mdp, pi)? + weighted_advantage(&rho_tilde, pi_tilde, &values);
    Ok((eta(mdp, pi_tilde)? - rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundCheck {
    /// `η(π_new)`
    pub lhs: f64,
    /// `L_{π_old}(π_new) − 4εγ/(1−γ)² · max KL`
    pub rhs: f64,
    pub holds: bool,
    pub epsilon: f64,
    pub max_kl: f64,
}

impl LowerBoundCheck {
    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Evaluates `η(π_new) ≥ L_{π_old}(π_new) − 4εγ/(1−γ)² · max_s KL(π_old ‖ π_new)`
/// with `ε = max |A_{π_old}|`.
pub fn check_lower_bound(mdp: &TabularMdp, pi_old: &TabularPolicy, pi_new: &TabularPolicy) -> Result<LowerBoundCheck> {
    let values = exact_values(mdp, pi_old)?;
    let epsilon = values.max_abs_advantage();
    let kl = max_kl(pi_old, pi_new);
    let surrogate = local_approximation(mdp, pi_old, pi_new)?;
    let penalty = if epsilon == 0.0 { 0.0 } else { penalty_coefficient(epsilon, mdp.gamma) * kl };
    let lhs = eta(mdp, pi_new)?;
    let rhs = surrogate - penalty;
    Ok(LowerBoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-9,
        epsilon,
        max_kl: kl,
    })
}

/// The entropy-augmented bound under its two possible readings of the
/// quadratic penalty's argument. Reported only; neither is asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBoundReadings {
    pub eta_new: f64,
    /// `L − C · (max KL)²`, the penalty argument read as the max KL.
    pub rhs_kl_squared: f64,
    /// `L + α Σ_s ρ_old(s) H(π_new(·|s)) − C · α²`, the argument read as
    /// the entropy temperature `α`.
    pub rhs_entropy_coef: f64,
}

pub fn entropy_bound_readings(
    mdp: &TabularMdp,
    pi_old: &TabularPolicy,
    pi_new: &TabularPolicy,
    alpha: f64,
) -> Result<EntropyBoundReadings> {
    let values = exact_values(mdp, pi_old)?;
    let c = penalty_coefficient(values.max_abs_advantage(), mdp.gamma);
    let surrogate = local_approximation(mdp, pi_old, pi_new)?;
    let rho = visitation(mdp, pi_old)?;
    let discounted_entropy: f64 = (0..mdp.n_states).map(|s| rho[s] * entropy_row(pi_new.row(s))).sum();
    let kl = max_kl(pi_old, pi_new);
    Ok(EntropyBoundReadings {
        eta_new: eta(mdp, pi_new)?,
        rhs_kl_squared: surrogate - c * kl * kl,
        rhs_entropy_coef: surrogate + alpha * discounted_entropy - c * alpha * alpha,
    })
}

/// `|M_π(π) − η(π)|` with zero entropy weight, where
/// `M_π(π̃) = L_π(π̃) − C · max KL(π, π̃)` and the KL term vanishes at `π̃ = π`.
pub fn check_m_identity(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let values = exact_values(mdp, pi)?;
    let c = penalty_coefficient(values.max_abs_advantage(), mdp.gamma);
    let m = local_approximation(mdp, pi, pi)? - c * max_kl(pi, pi);
    Ok((m - eta(mdp, pi)?).abs())
}

/// `L_{π_i}(π) − C · max KL(π_i, π)`.
pub fn penalized_objective(mdp: &TabularMdp, pi_i: &TabularPolicy, pi: &TabularPolicy, c: f64) -> Result<f64> {
    let l = local_approximation(mdp, pi_i, pi)?;
    Ok(if c == 0.0 { l } else { l - c * max_kl(pi_i, pi) })
}

/// Coordinate-ascent state for maximizing the penalized objective over
/// per-state action distributions.
struct PenalizedSearch<'a> {
    base: &'a TabularPolicy,
    /// `ρ_{π_i}(s) A_{π_i}(s, a)`
    weights: Vec<f64>,
    c: f64,
    n_actions: usize,
}

impl PenalizedSearch<'_> {
    fn row_linear(&self, s: usize, row: &[f64]) -> f64 {
        row.iter().zip(&self.weights[s * self.n_actions..]).map(|(p, w)| p * w).sum()
    }

    fn penalty(&self, kl: f64) -> f64 {
        if self.c == 0.0 {
            0.0
        } else {
            self.c * kl
        }
    }

    /// Objective minus the constant `η(π_i)`.
    fn evaluate(&self, pi: &TabularPolicy) -> f64 {
        let lin: f64 = (0..pi.n_states).map(|s| self.row_linear(s, pi.row(s))).sum();
        lin - self.penalty(max_kl(self.base, pi))
    }

    fn ascend(&self, mut pi: TabularPolicy) -> TabularPolicy {
        const SWEEPS: usize = 60;
        const GOLDEN_ITERS: usize = 60;
        let n = pi.n_states;
        let mut kl: Vec<f64> = (0..n).map(|s| kl_rows(self.base.row(s), pi.row(s))).collect();
        let mut current = self.evaluate(&pi);
        for _ in 0..SWEEPS {
            let start = current;
            for s in 0..n {
                let other_kl = (0..n).filter(|&t| t != s).map(|t| kl[t]).fold(0.0, f64::max);
                let other_lin: f64 = (0..n).filter(|&t| t != s).map(|t| self.row_linear(t, pi.row(t))).sum();
                for a in 0..self.n_actions {
                    for b in a + 1..self.n_actions {
                        let row = pi.row(s).to_vec();
                        // move t units of mass from a to b, t in [-row[b], row[a]]
                        let moved = |t: f64| {
                            let mut r = row.clone();
                            r[a] = (row[a] - t).max(0.0);
                            r[b] = (row[b] + t).max(0.0);
                            r
                        };
                        let f = |t: f64| {
                            let r = moved(t);
                            let k = kl_rows(self.base.row(s), &r);
                            other_lin + self.row_linear(s, &r) - self.penalty(other_kl.max(k))
                        };
                        let (lo, hi) = (-row[b], row[a]);
                        if hi - lo <= 0.0 {
                            continue;
                        }
                        let t_star = golden_section_max(&f, lo, hi, GOLDEN_ITERS);
                        let (best_t, best_f) = [t_star, lo, hi]
                            .into_iter()
                            .map(|t| (t, f(t)))
                            .fold((0.0, f(0.0)), |acc, x| if x.1 > acc.1 { x } else { acc });
                        if best_f > current && best_t != 0.0 {
                            let r = moved(best_t);
                            kl[s] = kl_rows(self.base.row(s), &r);
                            pi.row_mut(s).copy_from_slice(&r);
                            current = best_f;
                        }
                    }
                }
            }
            if current - start <= 1e-14 * (1.0 + current.abs()) {
                break;
            }
        }
        pi
    }

    /// Resets every state whose expected advantage is negative back to the
    /// base row. This never lowers the objective and makes every state's
    /// update an improvement.
    fn repair(&self, mut pi: TabularPolicy, advantages: &ExactValues) -> TabularPolicy {
        for s in 0..pi.n_states {
            let gain: f64 = (0..self.n_actions).map(|a| pi.prob(s, a) * advantages.advantage(s, a)).sum();
            if gain < 0.0 {
                pi.row_mut(s).copy_from_slice(self.base.row(s));
            }
        }
        pi
    }
}

fn golden_section_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic policy taking `argmax_a A(s, a)` (ties to the lowest index).
pub fn greedy_policy(values: &ExactValues, n_actions: usize) -> TabularPolicy {
    let choices: Vec<usize> = (0..values.v.len())
        .map(|s| {
            (0..n_actions)
                .fold((0, f64::NEG_INFINITY), |best, a| {
                    let adv = values.advantage(s, a);
                    if adv > best.1 {
                        (a, adv)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    TabularPolicy::deterministic(n_actions, &choices).expect("argmax is in range")
}

/// One step of `π_{i+1} = argmax_π [L_{π_i}(π) − C · max KL(π_i, π)]`,
/// approximated by restarted coordinate ascent. The result never scores
/// below `π_i` itself.
pub fn exact_policy_iteration_step(mdp: &TabularMdp, pi_i: &TabularPolicy, c: f64) -> Result<TabularPolicy> {
    mdp.check_policy(pi_i)?;
    if c.is_nan() || c < 0.0 {
        return Err(TabularError::InvalidPolicy(format!("penalty must be >= 0, got {c}")));
    }
    if c.is_infinite() {
        return Ok(pi_i.clone());
    }
    let values = exact_values(mdp, pi_i)?;
    let rho = visitation(mdp, pi_i)?;
    let na = mdp.n_actions;
    let search = PenalizedSearch {
        base: pi_i,
        weights: (0..mdp.n_states * na).map(|i| rho[i / na] * values.advantage(i / na, i % na)).collect(),
        c,
        n_actions: na,
    };
    let greedy = greedy_policy(&values, na);
    let mix = |beta: f64| {
        let probs = pi_i.probs.iter().zip(&greedy.probs).map(|(p, g)| (1.0 - beta) * p + beta * g).collect();
        TabularPolicy {
            n_states: pi_i.n_states,
            n_actions: na,
            probs,
        }
    };
    let baseline = search.evaluate(pi_i);
    let mut best = (pi_i.clone(), baseline);
    for start in [pi_i.clone(), mix(0.5), greedy.clone()] {
        let candidate = search.repair(search.ascend(start), &values);
        let score = search.evaluate(&candidate);
        if score > best.1 {
            best = (candidate, score);
        }
    }
    Ok(best.0)
}

fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Dirichlet(1, …, 1) rows for `P` and `ρ0`, rewards uniform on `[-1, 1]`,
/// `γ` uniform on `[0.5, 0.95]`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularMdp {
    let transitions = (0..n_states * n_actions).flat_map(|_| dirichlet_ones(rng, n_states)).collect();
    let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let initial = dirichlet_ones(rng, n_states);
    let gamma = rng.random_range(0.5..=0.95);
    TabularMdp::new(n_states, n_actions, transitions, rewards, initial, gamma).expect("generated MDP is valid")
}

/// Softmax of uniform logits on `[-logit_scale, logit_scale]`; every action
/// keeps positive probability.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, logit_scale: f64) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let logits: Vec<f64> = (0..n_actions).map(|_| rng.random_range(-logit_scale..=logit_scale)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        probs.extend(e.iter().map(|x| x / z));
    }
    TabularPolicy::new(n_states, n_actions, probs).expect("softmax rows are distributions")
}
