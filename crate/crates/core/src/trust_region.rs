//! KL-constrained policy updates (TRPO, and EnTRPO with a discounted entropy
//! bonus on the surrogate).
//!
//! The update maximizes the importance-sampled surrogate
//!
//! ```text
//! L(θ)  = mean_t [ π_θ(a_t|s_t) / π_old(a_t|s_t) · A_t ]
//! L'(θ) = L(θ) + α · mean_t [ γ^t · H(π_θ(·|s_t)) ]
//! ```
//!
//! subject to `mean_s KL(π_old(·|s) ‖ π_θ(·|s)) ≤ δ`. The search direction is
//! the natural gradient `F⁻¹ g` obtained by conjugate gradient on Fisher-vector
//! products; the step is scaled so the quadratic KL model hits `δ`, then
//! halved until the measured KL and the surrogate both behave.

use ndarray::{Array2, ArrayView2};

use crate::advantage::{normalize, Trajectory};
use crate::error::TrustRegionError;
use crate::nn::{distributions_from_logits, state_matrix, MlpArchitecture, ParamVector, PolicyDistribution, Tape};

pub type Result<T> = std::result::Result<T, TrustRegionError>;

/// Smallest old-policy probability the importance ratio tolerates.
pub const MIN_OLD_PROB: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionConfig {
    /// Trust-region radius on the mean KL, in nats.
    pub kl_delta: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub cg_tol: f64,
    pub backtrack_coeff: f64,
    pub backtrack_iters: usize,
    /// Entropy temperature; only used by EnTRPO updates.
    pub entropy_coef: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            kl_delta: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            cg_tol: 1e-10,
            backtrack_coeff: 0.5,
            backtrack_iters: 10,
            entropy_coef: 1e-4,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.kl_delta.is_finite() && self.kl_delta > 0.0) {
            return Err(format!("kl_delta must be > 0, got {}", self.kl_delta));
        }
        if self.cg_iters == 0 {
            return Err("cg_iters must be >= 1".into());
        }
        if !(self.cg_damping.is_finite() && self.cg_damping >= 0.0) {
            return Err(format!("cg_damping must be >= 0, got {}", self.cg_damping));
        }
        if !(self.cg_tol.is_finite() && self.cg_tol >= 0.0) {
            return Err(format!("cg_tol must be >= 0, got {}", self.cg_tol));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return Err(format!("backtrack_coeff must be in (0, 1), got {}", self.backtrack_coeff));
        }
        if self.backtrack_iters == 0 {
            return Err("backtrack_iters must be >= 1".into());
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return Err(format!("entropy_coef must be >= 0, got {}", self.entropy_coef));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateDiagnostics {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Mean KL(old ‖ new) over the batch states, nats.
    pub mean_kl: f64,
    /// Mean entropy of the resulting policy over the batch states, nats.
    pub mean_entropy: f64,
    pub step_accepted: bool,
    pub backtrack_count: usize,
    pub cg_residual: f64,
}

impl UpdateDiagnostics {
    pub fn is_finite(&self) -> bool {
        [
            self.surrogate_before,
            self.surrogate_after,
            self.mean_kl,
            self.mean_entropy,
            self.cg_residual,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `-Σ p log p`, nats.
pub fn entropy(p: &PolicyDistribution) -> f64 {
    -p.probs
        .iter()
        .zip(p.log_probs.iter())
        .map(|(&pi, &lp)| if pi > 0.0 { pi * lp } else { 0.0 })
        .sum::<f64>()
}

/// `KL(p ‖ q) = Σ p (log p − log q)`, nats.
pub fn kl_categorical(p: &PolicyDistribution, q: &PolicyDistribution) -> f64 {
    (0..2)
        .map(|a| {
            if p.probs[a] > 0.0 {
                p.probs[a] * (p.log_probs[a] - q.log_probs[a])
            } else {
                0.0
            }
        })
        .sum()
}

/// On-policy samples for one update.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    /// One state per row.
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
    /// Step index of each sample within its episode.
    pub timesteps: Vec<usize>,
}

impl PolicyBatch {
    pub fn new(states: Array2<f64>, actions: Vec<usize>, advantages: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        let n = states.nrows();
        if n == 0 {
            return Err(TrustRegionError::EmptyBatch);
        }
        if actions.len() != n || advantages.len() != n || timesteps.len() != n || actions.iter().any(|&a| a > 1) {
            return Err(TrustRegionError::RaggedBatch);
        }
        Ok(Self {
            states,
            actions,
            advantages,
            timesteps,
        })
    }

    /// Flattens episodes into a batch, optionally normalizing advantages
    /// across the whole batch.
    pub fn from_trajectories(trajectories: &[Trajectory], normalize_advantages: bool) -> Result<Self> {
        let steps = trajectories.iter().flat_map(|t| t.transitions.iter());
        let states: Vec<_> = steps.clone().map(|t| t.state).collect();
        let actions = steps.clone().map(|t| t.action).collect();
        let mut advantages: Vec<f64> = steps.clone().map(|t| t.advantage).collect();
        let timesteps = steps.map(|t| t.timestep).collect();
        if normalize_advantages && advantages.len() >= 2 {
            advantages = normalize(&advantages);
        }
        Self::new(state_matrix(&states), actions, advantages, timesteps)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Action distributions of `params` on each row of `states`.
pub fn policy_distributions(
    arch: &MlpArchitecture,
    params: &[f64],
    states: ArrayView2<'_, f64>,
) -> Result<Vec<PolicyDistribution>> {
    let logits = arch.forward_batch(params, states)?;
    Ok(distributions_from_logits(logits.view()))
}

/// The (possibly entropy-augmented) surrogate evaluated against a frozen
/// old policy.
struct Objective<'a> {
    arch: &'a MlpArchitecture,
    batch: &'a PolicyBatch,
    old: &'a [PolicyDistribution],
    /// Per-sample entropy weight `α γ^t`; `None` for the plain surrogate.
    entropy_weights: Option<Vec<f64>>,
}

impl<'a> Objective<'a> {
    fn new(
        arch: &'a MlpArchitecture,
        batch: &'a PolicyBatch,
        old: &'a [PolicyDistribution],
        gamma: f64,
        alpha: f64,
    ) -> Result<Self> {
        if old.len() != batch.len() {
            return Err(TrustRegionError::RaggedBatch);
        }
        for (i, (d, &a)) in old.iter().zip(&batch.actions).enumerate() {
            if d.probs[a].is_nan() || d.probs[a] < MIN_OLD_PROB {
                return Err(TrustRegionError::DegenerateOldPolicy {
                    index: i,
                    prob: d.probs[a],
                });
            }
        }
        let entropy_weights = (alpha != 0.0).then(|| {
            batch
                .timesteps
                .iter()
                .map(|&t| alpha * gamma.powi(t as i32))
                .collect()
        });
        Ok(Self {
            arch,
            batch,
            old,
            entropy_weights,
        })
    }

    fn ratio(&self, i: usize, new: &PolicyDistribution) -> f64 {
        let a = self.batch.actions[i];
        (new.log_probs[a] - self.old[i].log_probs[a]).exp()
    }

    fn value_of(&self, dists: &[PolicyDistribution]) -> f64 {
        let n = self.batch.len() as f64;
        let surr = dists
            .iter()
            .enumerate()
            .map(|(i, d)| self.ratio(i, d) * self.batch.advantages[i])
            .sum::<f64>()
            / n;
        match &self.entropy_weights {
            None => surr,
            Some(w) => surr + dists.iter().zip(w).map(|(d, w)| w * entropy(d)).sum::<f64>() / n,
        }
    }

    fn value(&self, params: &[f64]) -> Result<(f64, Vec<PolicyDistribution>)> {
        let dists = policy_distributions(self.arch, params, self.batch.states.view())?;
        Ok((self.value_of(&dists), dists))
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, ParamVector)> {
        let n = self.batch.len() as f64;
        let (value, grad) = self.arch.gradient(params, self.batch.states.view(), |logits| {
            let dists = distributions_from_logits(logits);
            let mut g = Array2::zeros(logits.raw_dim());
            for (i, d) in dists.iter().enumerate() {
                let a = self.batch.actions[i];
                let ra = self.ratio(i, d) * self.batch.advantages[i];
                // d log π(a) / d z_j = 1[j = a] − p_j
                for j in 0..2 {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    g[[i, j]] = ra * (onehot - d.probs[j]) / n;
                }
                if let Some(w) = &self.entropy_weights {
                    // d H / d z_j = −p_j (log p_j + H)
                    let h = entropy(d);
                    for j in 0..2 {
                        g[[i, j]] -= w[i] * d.probs[j] * (d.log_probs[j] + h) / n;
                    }
                }
            }
            (self.value_of(&dists), g)
        })?;
        Ok((value, grad))
    }
}

/// Importance-sampled surrogate `mean_t ratio_t · A_t`.
pub fn surrogate(
    arch: &MlpArchitecture,
    old: &[PolicyDistribution],
    params: &[f64],
    batch: &PolicyBatch,
) -> Result<f64> {
    Ok(Objective::new(arch, batch, old, 1.0, 0.0)?.value(params)?.0)
}

/// Surrogate plus `α · mean_t γ^t H(π_θ(·|s_t))`.
pub fn entropy_surrogate(
    arch: &MlpArchitecture,
    old: &[PolicyDistribution],
    params: &[f64],
    batch: &PolicyBatch,
    gamma: f64,
    alpha: f64,
) -> Result<f64> {
    Ok(Objective::new(arch, batch, old, gamma, alpha)?.value(params)?.0)
}

/// Gradient of [`entropy_surrogate`] with respect to `params`.
pub fn entropy_surrogate_gradient(
    arch: &MlpArchitecture,
    old: &[PolicyDistribution],
    params: &[f64],
    batch: &PolicyBatch,
    gamma: f64,
    alpha: f64,
) -> Result<ParamVector> {
    Ok(Objective::new(arch, batch, old, gamma, alpha)?.value_and_gradient(params)?.1)
}

/// Mean KL(old ‖ π_θ) over the states.
pub fn mean_kl(
    arch: &MlpArchitecture,
    old: &[PolicyDistribution],
    params: &[f64],
    states: ArrayView2<'_, f64>,
) -> Result<f64> {
    let new = policy_distributions(arch, params, states)?;
    Ok(mean_kl_of(old, &new))
}

fn mean_kl_of(old: &[PolicyDistribution], new: &[PolicyDistribution]) -> f64 {
    old.iter().zip(new).map(|(p, q)| kl_categorical(p, q)).sum::<f64>() / old.len() as f64
}

fn mean_entropy_of(dists: &[PolicyDistribution]) -> f64 {
    dists.iter().map(entropy).sum::<f64>() / dists.len() as f64
}

/// Gradient of the mean KL(old ‖ π_θ) with respect to θ.
pub fn kl_gradient(
    arch: &MlpArchitecture,
    old: &[PolicyDistribution],
    params: &[f64],
    states: ArrayView2<'_, f64>,
) -> Result<ParamVector> {
    let n = states.nrows() as f64;
    let (_, g) = arch.gradient(params, states, |logits| {
        let new = distributions_from_logits(logits);
        let g = Array2::from_shape_fn(logits.raw_dim(), |(i, j)| (new[i].probs[j] - old[i].probs[j]) / n);
        (mean_kl_of(old, &new), g)
    })?;
    Ok(g)
}

/// Matrix-free Fisher operator at fixed parameters.
///
/// At `θ = θ_old` the Hessian of the mean KL reduces to
/// `mean_s Jᵀ (diag(p) − p pᵀ) J` with `J` the logit Jacobian, so one
/// product costs a forward-mode and a reverse-mode pass.
pub struct FisherOperator<'a> {
    arch: &'a MlpArchitecture,
    params: &'a [f64],
    tape: Tape,
    probs: Vec<[f64; 2]>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(
        arch: &'a MlpArchitecture,
        params: &'a [f64],
        states: ArrayView2<'_, f64>,
        damping: f64,
    ) -> Result<Self> {
        let tape = arch.forward_tape(params, states)?;
        let probs = distributions_from_logits(tape.output())
            .into_iter()
            .map(|d| d.probs)
            .collect();
        Ok(Self {
            arch,
            params,
            tape,
            probs,
            damping,
        })
    }

    pub fn apply(&self, v: &ParamVector) -> ParamVector {
        let n = self.tape.batch_size() as f64;
        let mut u = self.arch.jvp(self.params, &self.tape, v);
        for (mut row, p) in u.outer_iter_mut().zip(&self.probs) {
            let mean = p[0] * row[0] + p[1] * row[1];
            row[0] = p[0] * (row[0] - mean) / n;
            row[1] = p[1] * (row[1] - mean) / n;
        }
        let mut out = self.arch.backward(self.params, &self.tape, u.view());
        if self.damping != 0.0 {
            out.axpy(self.damping, v);
        }
        out
    }
}

/// `(H + damping·I) v` where `H` is the Hessian of the mean KL from the
/// policy at `params`, evaluated at `params`.
pub fn fisher_vector_product(
    arch: &MlpArchitecture,
    params: &[f64],
    states: ArrayView2<'_, f64>,
    v: &ParamVector,
    damping: f64,
) -> Result<ParamVector> {
    Ok(FisherOperator::new(arch, params, states, damping)?.apply(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: ParamVector,
    /// Norm of the final recursive residual `b − A x`.
    pub residual: f64,
    pub iterations: usize,
}

/// Conjugate gradient for a symmetric positive-definite operator, stopping
/// once `‖r‖ ≤ tol·‖b‖` or after `iters` iterations.
pub fn conjugate_gradient<F>(mut apply: F, b: &ParamVector, iters: usize, tol: f64) -> CgSolution
where
    F: FnMut(&ParamVector) -> ParamVector,
{
    let mut x = ParamVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rr = r.dot(&r);
    let threshold = tol * b.norm();
    let mut iterations = 0;
    while iterations < iters && rr.sqrt() > threshold {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap.is_nan() || pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        x.axpy(step, &p);
        r.axpy(-step, &ap);
        let rr_next = r.dot(&r);
        let beta = rr_next / rr;
        p = r.add_scaled(beta, &p);
        rr = rr_next;
        iterations += 1;
    }
    CgSolution {
        x,
        residual: rr.sqrt(),
        iterations,
    }
}

/// One TRPO (or EnTRPO when `use_entropy`) update.
///
/// Rejected or degenerate steps return the input parameters unchanged with
/// `step_accepted = false`.
pub fn trpo_step(
    arch: &MlpArchitecture,
    params: &ParamVector,
    batch: &PolicyBatch,
    cfg: &TrustRegionConfig,
    use_entropy: bool,
    gamma: f64,
) -> Result<(ParamVector, UpdateDiagnostics)> {
    let alpha = if use_entropy { cfg.entropy_coef } else { 0.0 };
    let old = policy_distributions(arch, params, batch.states.view())?;
    let objective = Objective::new(arch, batch, &old, gamma, alpha)?;
    let (before, grad) = objective.value_and_gradient(params)?;

    let mut diag = UpdateDiagnostics {
        surrogate_before: before,
        surrogate_after: before,
        mean_kl: 0.0,
        mean_entropy: mean_entropy_of(&old),
        step_accepted: false,
        backtrack_count: 0,
        cg_residual: 0.0,
    };
    if !grad.is_finite() {
        log::warn!("non-finite policy gradient; keeping old parameters");
        diag.cg_residual = f64::NAN;
        return Ok((params.clone(), diag));
    }
    if grad.iter().all(|&g| g == 0.0) {
        return Ok((params.clone(), diag));
    }

    let fisher = FisherOperator::new(arch, params, batch.states.view(), cfg.cg_damping)?;
    let cg = conjugate_gradient(|v| fisher.apply(v), &grad, cfg.cg_iters, cfg.cg_tol);
    diag.cg_residual = cg.residual;
    let quad = cg.x.dot(&fisher.apply(&cg.x));
    if !(quad.is_finite() && quad > 0.0) {
        log::warn!("degenerate natural-gradient direction (xᵀFx = {quad}); keeping old parameters");
        return Ok((params.clone(), diag));
    }
    let full_step = cg.x.scaled((2.0 * cfg.kl_delta / quad).sqrt());

    let mut fraction = 1.0;
    for k in 0..cfg.backtrack_iters {
        let candidate = params.add_scaled(fraction, &full_step);
        let new = policy_distributions(arch, &candidate, batch.states.view())?;
        let after = objective.value_of(&new);
        let kl = mean_kl_of(&old, &new);
        if after.is_finite() && kl.is_finite() && kl <= cfg.kl_delta && after > before {
            diag.surrogate_after = after;
            diag.mean_kl = kl;
            diag.mean_entropy = mean_entropy_of(&new);
            diag.step_accepted = true;
            diag.backtrack_count = k;
            return Ok((candidate, diag));
        }
        fraction *= cfg.backtrack_coeff;
    }
    diag.backtrack_count = cfg.backtrack_iters;
    Ok((params.clone(), diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(p0: f64) -> PolicyDistribution {
        PolicyDistribution {
            probs: [p0, 1.0 - p0],
            log_probs: [p0.ln(), (1.0 - p0).ln()],
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> PolicyBatch {
        let states = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        let actions = (0..n).map(|_| rng.random_range(0..2)).collect();
        let advantages = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let timesteps = (0..n).map(|_| rng.random_range(0..6)).collect();
        PolicyBatch::new(states, actions, advantages, timesteps).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&dist(0.5)) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((entropy(&dist(0.75)) - 0.562335).abs() < 1e-6);
        assert!(entropy(&dist(1.0 - 1e-12)) < 1e-10);
    }

    #[test]
    fn kl_examples() {
        let p = dist(0.5);
        assert_eq!(kl_categorical(&p, &p), 0.0);
        assert!((kl_categorical(&p, &dist(0.25)) - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn surrogate_at_old_params_is_mean_advantage() {
        let arch = MlpArchitecture::new(vec![4, 8, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = arch.init_params(&mut rng);
        let mut batch = random_batch(&mut rng, 16);
        let old = policy_distributions(&arch, &params, batch.states.view()).unwrap();
        let mean = batch.advantages.iter().sum::<f64>() / 16.0;
        assert!((surrogate(&arch, &old, &params, &batch).unwrap() - mean).abs() < 1e-14);
        batch.advantages = normalize(&batch.advantages);
        assert!(surrogate(&arch, &old, &params, &batch).unwrap().abs() < 1e-14);
        batch.advantages = vec![0.0; 16];
        let other = arch.init_params(&mut rng);
        assert_eq!(surrogate(&arch, &old, &other, &batch).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_single_sample_arithmetic() {
        // Single-layer net with zero weights: logits are the biases.
        let arch = MlpArchitecture::new(vec![4, 2]).unwrap();
        let params = arch.zero_params();
        // new policy puts 0.5 on action 0, ratio 2
        let old = vec![dist(0.25)];
        let batch = PolicyBatch::new(Array2::zeros((1, 4)), vec![0], vec![0.5], vec![0]).unwrap();
        assert!((surrogate(&arch, &old, &params, &batch).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn entropy_surrogate_examples() {
        let arch = MlpArchitecture::new(vec![4, 2]).unwrap();
        let params = arch.zero_params();
        let old = vec![dist(0.5); 2];
        let batch = PolicyBatch::new(Array2::zeros((2, 4)), vec![0, 1], vec![0.0, 0.0], vec![0, 0]).unwrap();
        let v = entropy_surrogate(&arch, &old, &params, &batch, 1.0, 1.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let batch = PolicyBatch::new(Array2::zeros((1, 4)), vec![0], vec![0.0], vec![2]).unwrap();
        let v = entropy_surrogate(&arch, &old[..1], &params, &batch, 0.5, 1.0).unwrap();
        assert!((v - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = MlpArchitecture::new(vec![4, 8, 2]).unwrap();
        let p = arch.init_params(&mut rng);
        let batch = random_batch(&mut rng, 10);
        let old = policy_distributions(&arch, &arch.init_params(&mut rng), batch.states.view()).unwrap();
        assert_eq!(
            entropy_surrogate(&arch, &old, &p, &batch, 0.9, 0.0).unwrap(),
            surrogate(&arch, &old, &p, &batch).unwrap()
        );
    }

    #[test]
    fn degenerate_old_policy_is_rejected() {
        let arch = MlpArchitecture::new(vec![4, 2]).unwrap();
        let old = vec![PolicyDistribution {
            probs: [1e-13, 1.0 - 1e-13],
            log_probs: [(1e-13f64).ln(), 0.0],
        }];
        let batch = PolicyBatch::new(Array2::zeros((1, 4)), vec![0], vec![1.0], vec![0]).unwrap();
        assert!(matches!(
            surrogate(&arch, &old, &arch.zero_params(), &batch),
            Err(TrustRegionError::DegenerateOldPolicy { index: 0, .. })
        ));
    }

    #[test]
    fn ragged_batches_are_rejected() {
        assert!(PolicyBatch::new(Array2::zeros((2, 4)), vec![0], vec![0.0, 0.0], vec![0, 0]).is_err());
        assert!(PolicyBatch::new(Array2::zeros((0, 4)), vec![], vec![], vec![]).is_err());
        assert!(PolicyBatch::new(Array2::zeros((1, 4)), vec![2], vec![0.0], vec![0]).is_err());
    }

    #[test]
    fn fisher_product_basics() {
        let arch = MlpArchitecture::new(vec![4, 8, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = arch.init_params(&mut rng);
        let states = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let zero = ParamVector::zeros(p.len());
        let out = fisher_vector_product(&arch, &p, states.view(), &zero, 0.1).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));

        // With all-zero params the logits are the output biases; moving both
        // by the same amount leaves the softmax unchanged, so H v = 0.
        let zero_params = arch.zero_params();
        let mut v = ParamVector::zeros(p.len());
        let n = v.len();
        v[n - 1] = 0.3;
        v[n - 2] = 0.3;
        let out = fisher_vector_product(&arch, &zero_params, Array2::zeros((3, 4)).view(), &v, 0.5).unwrap();
        for (a, b) in out.iter().zip(v.iter()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn cg_examples() {
        let b = ParamVector::from_vec(vec![1.0, -2.0, 3.0]);
        let sol = conjugate_gradient(|v| v.clone(), &b, 10, 1e-12);
        assert_eq!(sol.x, b);
        assert_eq!(sol.iterations, 1);
        let zero = ParamVector::zeros(3);
        let sol = conjugate_gradient(|v| v.scaled(2.0), &zero, 10, 1e-12);
        assert_eq!(sol.x, zero);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn zero_gradient_step_is_noop() {
        let arch = MlpArchitecture::new(vec![4, 8, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = arch.init_params(&mut rng);
        let mut batch = random_batch(&mut rng, 12);
        batch.advantages = vec![0.0; 12];
        let cfg = TrustRegionConfig {
            entropy_coef: 0.0,
            ..Default::default()
        };
        let (new, diag) = trpo_step(&arch, &params, &batch, &cfg, true, 0.9).unwrap();
        assert_eq!(new, params);
        assert_eq!(diag.mean_kl, 0.0);
        assert!(!diag.step_accepted);
    }

    #[test]
    fn accepted_steps_respect_the_trust_region() {
        let arch = MlpArchitecture::new(vec![4, 16, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = TrustRegionConfig::default();
        let mut accepted = 0;
        for _ in 0..20 {
            let params = arch.init_params(&mut rng);
            let batch = random_batch(&mut rng, 64);
            for use_entropy in [false, true] {
                let (new, diag) = trpo_step(&arch, &params, &batch, &cfg, use_entropy, 0.9).unwrap();
                if diag.step_accepted {
                    accepted += 1;
                    assert!(diag.mean_kl <= cfg.kl_delta);
                    assert!(diag.surrogate_after >= diag.surrogate_before);
                    let old = policy_distributions(&arch, &params, batch.states.view()).unwrap();
                    assert_eq!(mean_kl(&arch, &old, &new, batch.states.view()).unwrap(), diag.mean_kl);
                } else {
                    assert_eq!(new, params);
                }
                assert!(diag.mean_entropy >= 0.0 && diag.mean_entropy <= std::f64::consts::LN_2);
            }
        }
        assert!(accepted > 30, "only {accepted} steps accepted");
    }

    #[test]
    fn entropy_flag_with_zero_alpha_is_bit_identical() {
        let arch = MlpArchitecture::new(vec![4, 16, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = arch.init_params(&mut rng);
        let batch = random_batch(&mut rng, 40);
        let cfg = TrustRegionConfig {
            entropy_coef: 0.0,
            ..Default::default()
        };
        let a = trpo_step(&arch, &params, &batch, &cfg, false, 0.85).unwrap();
        let b = trpo_step(&arch, &params, &batch, &cfg, true, 0.85).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_is_reported() {
        let bad = TrustRegionConfig {
            backtrack_coeff: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrustRegionConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn entropy_bounded(p in 1e-9f64..1.0) {
            let h = entropy(&dist(p.min(1.0 - 1e-9)));
            prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-15).contains(&h));
        }

        #[test]
        fn kl_is_nonnegative(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0, d in -10.0f64..10.0) {
            let p = PolicyDistribution::from_logits([a, b]);
            let q = PolicyDistribution::from_logits([c, d]);
            prop_assert!(kl_categorical(&p, &q) >= -1e-12);
            prop_assert!(kl_categorical(&p, &p).abs() <= 1e-12);
        }
    }
}
