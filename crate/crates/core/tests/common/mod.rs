//! Numerical checks shared by the integration tests and the acceptance
//! target. Each returns the worst error it measured.

#![allow(dead_code)]

use entrpo::nn::MlpArchitecture;
use entrpo::trust_region::{
    conjugate_gradient, entropy_surrogate, entropy_surrogate_gradient, fisher_vector_product, kl_gradient,
    policy_distributions, PolicyBatch,
};
use entrpo::ParamVector;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const COORDS_PER_DRAW: usize = 40;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn random_states(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.5..1.5))
}

fn perturbed(rng: &mut ChaCha8Rng, p: &ParamVector, scale: f64) -> ParamVector {
    ParamVector::from_vec(p.iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect())
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, params: &ParamVector, coord: usize) -> f64 {
    let mut p = params.to_vec();
    p[coord] += FD_STEP;
    let up = f(&p);
    p[coord] -= 2.0 * FD_STEP;
    let down = f(&p);
    (up - down) / (2.0 * FD_STEP)
}

/// Entropy-augmented surrogate gradient of the policy network against
/// central differences on a random coordinate subset.
pub fn policy_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = MlpArchitecture::policy();
    let old_params = arch.init_params(&mut rng);
    let n = 24;
    let batch = PolicyBatch::new(
        random_states(&mut rng, n),
        (0..n).map(|_| rng.random_range(0..2)).collect(),
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..n).map(|_| rng.random_range(0..200)).collect(),
    )
    .unwrap();
    let old = policy_distributions(&arch, &old_params, batch.states.view()).unwrap();
    let params = perturbed(&mut rng, &old_params, 0.05);
    let (gamma, alpha) = (0.85, 0.1);
    let g = entropy_surrogate_gradient(&arch, &old, &params, &batch, gamma, alpha).unwrap();
    let f = |p: &[f64]| entropy_surrogate(&arch, &old, p, &batch, gamma, alpha).unwrap();
    let coords: Vec<usize> = (0..COORDS_PER_DRAW).map(|_| rng.random_range(0..params.len())).collect();
    let analytic: Vec<f64> = coords.iter().map(|&c| g[c]).collect();
    let numeric: Vec<f64> = coords.iter().map(|&c| central_difference(f, &params, c)).collect();
    relative_error(&analytic, &numeric)
}

/// Mean squared error gradient of the value network against central
/// differences on a random coordinate subset.
pub fn value_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = MlpArchitecture::value();
    let params = arch.init_params(&mut rng);
    let n = 16;
    let states = random_states(&mut rng, n);
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let mse = |out: &Array2<f64>| {
        out.column(0).iter().zip(&targets).map(|(v, y)| (v - y).powi(2)).sum::<f64>() / n as f64
    };
    let (_, g) = arch
        .gradient(&params, states.view(), |out| {
            let out = out.to_owned();
            let grad = Array2::from_shape_fn((n, 1), |(i, _)| 2.0 * (out[[i, 0]] - targets[i]) / n as f64);
            (mse(&out), grad)
        })
        .unwrap();
    let f = |p: &[f64]| mse(&arch.forward_batch(p, states.view()).unwrap());
    let coords: Vec<usize> = (0..COORDS_PER_DRAW).map(|_| rng.random_range(0..params.len())).collect();
    let analytic: Vec<f64> = coords.iter().map(|&c| g[c]).collect();
    let numeric: Vec<f64> = coords.iter().map(|&c| central_difference(f, &params, c)).collect();
    relative_error(&analytic, &numeric)
}

/// Fisher-vector product against a central difference of the KL gradient
/// along the same direction.
pub fn fisher_product_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = MlpArchitecture::policy();
    let params = arch.init_params(&mut rng);
    let states = random_states(&mut rng, 32);
    let v = ParamVector::from_vec((0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
    let fvp = fisher_vector_product(&arch, &params, states.view(), &v, 0.0).unwrap();
    let old = policy_distributions(&arch, &params, states.view()).unwrap();
    let h = 1e-5;
    let up = kl_gradient(&arch, &old, &params.add_scaled(h, &v), states.view()).unwrap();
    let down = kl_gradient(&arch, &old, &params.add_scaled(-h, &v), states.view()).unwrap();
    let hvp: Vec<f64> = up.iter().zip(down.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    relative_error(&fvp, &hvp)
}

/// Conjugate gradient on a random 20×20 SPD system against an LU solve.
pub fn cg_error(seed: u64) -> f64 {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let exact = a.clone().lu().solve(&b).unwrap();
    let sol = conjugate_gradient(
        |v| ParamVector::from_vec((&a * DVector::from_column_slice(v)).iter().copied().collect()),
        &ParamVector::from_vec(b.iter().copied().collect()),
        10 * n,
        1e-14,
    );
    (DVector::from_column_slice(&sol.x) - &exact).norm() / exact.norm()
}
