//! Central-difference gradients and the random-configuration check that
//! compares them with the analytic backward pass.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::batch::{batch_forward, loss_and_grad, Batch, Gradients, LossOptions};
use super::train::pair_samples;
use super::{Activation, ModelParams};
use crate::error::Result;
use crate::synth::{seeded_rng, STREAM_GRAD_CHECK};

/// Central differences of `loss` with respect to every scalar parameter.
pub fn finite_diff_grad(
    loss: impl Fn(&ModelParams) -> Result<f64>,
    params: &ModelParams,
    step: f64,
) -> Result<Gradients> {
    let mut work = params.clone();
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(3);
    for t in 0..3 {
        let shape = params.tensors()[t].1.dim();
        let mut grad = Array2::<f64>::zeros(shape);
        for idx in ndarray::indices(shape) {
            let orig = work.tensors()[t].1[idx];
            work.tensors_mut()[t].1[idx] = orig + step;
            let plus = loss(&work)?;
            work.tensors_mut()[t].1[idx] = orig - step;
            let minus = loss(&work)?;
            work.tensors_mut()[t].1[idx] = orig;
            grad[idx] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    let w = out.pop().expect("three tensors");
    let w_m = out.pop().expect("three tensors");
    let w_e = out.pop().expect("three tensors");
    Ok(Gradients { w_e, w_m, w })
}

/// Per tensor: `max|a - n| / max(max|a|, max|n|)`.
pub fn relative_error(analytic: &Gradients, numeric: &Gradients) -> [(&'static str, f64); 3] {
    let mut out = [("", 0.0); 3];
    for (slot, ((name, a), (_, n))) in out
        .iter_mut()
        .zip(analytic.tensors().into_iter().zip(numeric.tensors()))
    {
        let diff = a
            .iter()
            .zip(n.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let scale = a
            .iter()
            .chain(n.iter())
            .map(|v| v.abs())
            .fold(1e-12, f64::max);
        *slot = (name, diff / scale);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub params: ModelParams,
    pub batch: Batch,
}

/// The `index`-th random configuration: dimensions in 4..=32, 4..=16
/// identities, 4..=12 samples, both encoder activations and both debias
/// variants.
pub fn random_check_case(seed: u64, index: u64) -> Result<GradCheckCase> {
    let mut rng = seeded_rng(seed, STREAM_GRAD_CHECK);
    rng.set_word_pos(u128::from(index) << 32);
    let d_in = rng.random_range(4..=32);
    let d_k = rng.random_range(4..=32);
    let d_f = rng.random_range(4..=32);
    let n_id = rng.random_range(4..=16);
    let b = rng.random_range(4..=12);
    let mut params = ModelParams::init(d_in, d_k, d_f, n_id, rng.random())?;
    params.encoder_activation = if index % 2 == 0 {
        Activation::Tanh
    } else {
        Activation::Softplus
    };
    if index % 4 == 3 {
        params.debias_activation = Activation::Tanh;
    }
    let x = Array2::from_shape_fn((b, d_in), |_| rng.sample::<f64, _>(StandardNormal));
    let mut y: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_id)).collect();
    if y.iter().all(|&v| v == y[0]) {
        y[0] = (y[0] + 1) % n_id;
    }
    let partner = pair_samples(&y, rng.random(), 0)?;
    Ok(GradCheckCase {
        params,
        batch: Batch { x, y, partner },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub configs: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negative control: corrupts the analytic gradient.
    pub inject_sign_flip: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            configs: 20,
            step: 1e-6,
            tolerance: 1e-5,
            seed: 0,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub index: usize,
    /// `[d_in, d_k, d_f, n_id, batch]`.
    pub shape: [usize; 5],
    pub errors: Vec<(String, f64)>,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: Vec<CaseResult>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let opts = LossOptions {
        flip_eps_branch: cfg.inject_sign_flip,
        ..Default::default()
    };
    let mut cases = Vec::with_capacity(cfg.configs);
    for index in 0..cfg.configs {
        let case = random_check_case(cfg.seed, index as u64)?;
        let (_, analytic) = loss_and_grad(&case.params, &case.batch, &opts)?;
        let numeric = finite_diff_grad(
            |p| Ok(batch_forward(p, &case.batch, &opts)?.loss),
            &case.params,
            cfg.step,
        )?;
        let errors = relative_error(&analytic, &numeric);
        let max_error = errors.iter().map(|e| e.1).fold(0.0, f64::max);
        let p = &case.params;
        cases.push(CaseResult {
            index,
            shape: [p.d_in(), p.d_k(), p.d_f(), p.n_id(), case.batch.len()],
            errors: errors.iter().map(|(n, e)| (n.to_string(), *e)).collect(),
            max_error,
        });
    }
    let max_error = cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_error < cfg.tolerance,
        cases,
        max_error,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let params = ModelParams::init(3, 2, 2, 2, 4).unwrap();
        let loss = |p: &ModelParams| -> Result<f64> {
            Ok(p.w_e.iter().map(|v| 1.5 * v * v).sum::<f64>() + p.w.iter().sum::<f64>())
        };
        let g = finite_diff_grad(loss, &params, 1e-3).unwrap();
        for (a, v) in g.w_e.iter().zip(params.w_e.iter()) {
            assert!((a - 3.0 * v).abs() < 1e-9);
        }
        assert!(g.w.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!(g.w_m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_matches_numeric() {
        let cfg = GradCheckConfig { configs: 4, ..Default::default() };
        let report = grad_check(&cfg).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = GradCheckConfig { configs: 2, inject_sign_flip: true, ..Default::default() };
        assert!(!grad_check(&cfg).unwrap().passed);
    }

    #[test]
    fn step_halving_shrinks_error_quadratically() {
        let case = random_check_case(11, 0).unwrap();
        let opts = LossOptions::default();
        let (_, analytic) = loss_and_grad(&case.params, &case.batch, &opts).unwrap();
        let err = |h: f64| {
            let n = finite_diff_grad(
                |p| Ok(batch_forward(p, &case.batch, &opts)?.loss),
                &case.params,
                h,
            )
            .unwrap();
            relative_error(&analytic, &n).iter().map(|e| e.1).fold(0.0, f64::max)
        };
        let (coarse, half) = (err(1e-2), err(5e-3));
        let ratio = coarse / half;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn symmetric_critical_point_has_zero_gradient() {
        // two samples with identical inputs, two identical prototypes and no
        // margin: the cosface loss sits at ln 2 with vanishing gradient
        let mut params = ModelParams::init(3, 3, 3, 2, 5).unwrap();
        params.m = 0.0;
        let row = params.w.row(0).to_owned();
        params.w.row_mut(1).assign(&row);
        let x = Array2::from_shape_fn((2, 3), |(_, c)| 0.3 + c as f64 * 0.2);
        let batch = Batch { x, y: vec![0, 1], partner: vec![1, 0] };
        let opts = LossOptions { mode: super::super::LossMode::CosFace, ..Default::default() };
        let (out, g) = loss_and_grad(&params, &batch, &opts).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        for (_, t) in g.tensors() {
            assert!(t.iter().all(|v| v.abs() < 1e-10));
        }
    }
}
