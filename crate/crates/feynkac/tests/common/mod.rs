//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use feynkac::net::{Architecture, Mode, StackGrads, SubnetStack};
use feynkac::tensor::{Matrix, RngStream};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference tolerance used by all gradient suites.
pub const FD_REL_TOL: f64 = 1e-5;

pub fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng.standard_normals(rows * cols)).unwrap()
}

fn weighted_sum(out: &Matrix, weights: &Matrix) -> f64 {
    out.as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(o, w)| o * w)
        .sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Worst relative entry error between an analytic gradient vector and its
/// finite-difference counterpart. Entries far below the vector's own scale
/// are measured against that scale instead of their tiny magnitudes, which
/// keeps central-difference cancellation noise out of the comparison.
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let floor = 1e-4 * max_abs(analytic).max(1e-12);
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0f64, f64::max)
}

/// Finite-difference check of the parameter gradients of one subnet under
/// the weighted-sum loss `sum(weights .* output)`. Returns the worst
/// relative entry error.
pub fn param_grad_fd_error(seed: u64, arch: Architecture, mode: Mode) -> f64 {
    let mut rng = RngStream::new(seed, 0);
    let mut stack = SubnetStack::init(&mut rng, arch, 1);
    let batch = 5;
    let x = random_matrix(&mut rng, batch, arch.input_dim);
    let weights = random_matrix(&mut rng, batch, arch.output_dim);

    // Move the running statistics off their (0, 1) defaults so eval mode
    // exercises non-trivial normalization.
    for _ in 0..3 {
        let warm = random_matrix(&mut rng, batch, arch.input_dim);
        stack.subnets[0].forward(&warm, Mode::Train).unwrap();
    }

    let (_, cache) = stack.subnets[0].forward_cached(&x, mode).unwrap();
    let (grads, _) = stack.subnets[0].backward(&cache, &weights).unwrap();
    let analytic = StackGrads {
        subnets: vec![grads],
        u0: None,
        grad0: None,
    }
    .flatten();

    let theta = stack.flatten();
    let mut fd = vec![0.0; theta.len()];
    let mut probe = theta.clone();
    for k in 0..theta.len() {
        probe[k] = theta[k] + FD_STEP;
        stack.unflatten(&probe).unwrap();
        let up = weighted_sum(&stack.subnets[0].forward(&x, mode).unwrap(), &weights);
        probe[k] = theta[k] - FD_STEP;
        stack.unflatten(&probe).unwrap();
        let down = weighted_sum(&stack.subnets[0].forward(&x, mode).unwrap(), &weights);
        probe[k] = theta[k];
        fd[k] = (up - down) / (2.0 * FD_STEP);
    }
    max_rel_error(&analytic, &fd)
}

/// Finite-difference check of the per-sample input gradient of a
/// scalar-output subnet, against the pure eval-mode forward pass. Returns
/// the worst relative entry error.
///
/// Train mode is only checked without batch norm: with it, the per-sample
/// gradient deliberately freezes the batch statistics, which no pure
/// forward function reproduces under input perturbations.
pub fn input_grad_fd_error(seed: u64, d: usize, mode: Mode, batch_norm: bool) -> f64 {
    assert!(
        mode == Mode::Eval || !batch_norm,
        "train-mode input gradients freeze batch statistics"
    );
    let arch = Architecture::value_net(d)
        .with_activation(feynkac::net::Activation::Tanh)
        .with_batch_norm(batch_norm);
    let mut rng = RngStream::new(seed, 0);
    let mut stack = SubnetStack::init(&mut rng, arch, 1);
    let batch = 4;
    if batch_norm {
        for _ in 0..3 {
            let warm = random_matrix(&mut rng, batch, d);
            stack.subnets[0].forward(&warm, Mode::Train).unwrap();
        }
    }
    let x = random_matrix(&mut rng, batch, d);
    let analytic = stack.subnets[0].input_gradient(&x, mode).unwrap();

    let net = &stack.subnets[0];
    let mut fd = Matrix::zeros(batch, d);
    let mut probe = x.clone();
    for m in 0..batch {
        for i in 0..d {
            let base = x.get(m, i);
            probe.set(m, i, base + FD_STEP);
            let up = net.forward_eval(&probe).unwrap().get(m, 0);
            probe.set(m, i, base - FD_STEP);
            let down = net.forward_eval(&probe).unwrap().get(m, 0);
            probe.set(m, i, base);
            fd.set(m, i, (up - down) / (2.0 * FD_STEP));
        }
    }
    max_rel_error(analytic.as_slice(), fd.as_slice())
}
