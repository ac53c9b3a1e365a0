//! Toy training stack for the MixFair adapter.
//!
//! Per sample: `k = act_E(W_Eᵀ x)` (encoder), `g = act_M(W_Mᵀ k)` (debias
//! layer, affine by default) and `f̂ = g / |g|`. Class prototypes are the
//! normalized rows of `W`. The adapter mixes two encoder features,
//! `k_mix = (k_i + k_j) / 2`, and reads the bias difference
//! `ε = cos²(g_mix, g_i) − cos²(g_mix, g_j)`; the loss is a large-margin
//! cosine softmax whose target logit is `s (cos_y − m + ε)`.
//!
//! Everything runs in f64 so the hand-written gradients can be checked
//! against central differences.

mod batch;
mod gradcheck;
mod io;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{seeded_rng, STREAM_INIT};

pub use batch::{batch_forward, loss_and_grad, Batch, BatchOutput, EpsGradient, Gradients, LossMode, LossOptions};
pub use gradcheck::{
    finite_diff_grad, grad_check, random_check_case, relative_error, GradCheckCase,
    GradCheckConfig, GradCheckReport,
};
pub use io::{decode_params, encode_params, load_params, save_params, FFMP_MAGIC, FFMP_VERSION};
pub use train::{
    encode_partition, pair_samples, scaled_decay_epochs, toy_eval, train, BiasTrace, TrainConfig,
    TrainOutcome,
};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            // ln(1 + e^z) without overflow
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    /// Derivative at the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Softplus => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (identity, tanh, softplus)"
            ))),
        }
    }
}

/// Encoder, debias layer and prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `d_in × d_k`.
    pub w_e: Array2<f64>,
    /// `d_k × d_f`.
    pub w_m: Array2<f64>,
    /// `n_id × d_f`, rows normalized at use.
    pub w: Array2<f64>,
    pub s: f64,
    pub m: f64,
    pub encoder_activation: Activation,
    pub debias_activation: Activation,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

impl ModelParams {
    /// Xavier-uniform initialization of all three tensors.
    pub fn init(d_in: usize, d_k: usize, d_f: usize, n_id: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_k == 0 || d_f == 0 || n_id == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = seeded_rng(seed, STREAM_INIT);
        let params = Self {
            w_e: xavier(&mut rng, d_in, d_k),
            w_m: xavier(&mut rng, d_k, d_f),
            w: xavier(&mut rng, n_id, d_f),
            s: 64.0,
            m: 0.35,
            encoder_activation: Activation::Tanh,
            debias_activation: Activation::Identity,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn d_in(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.w_e.ncols()
    }

    pub fn d_f(&self) -> usize {
        self.w_m.ncols()
    }

    pub fn n_id(&self) -> usize {
        self.w.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_m.nrows() != self.d_k() || self.w.ncols() != self.d_f() {
            return Err(Error::Domain(format!(
                "tensor shapes disagree: W_E {:?}, W_M {:?}, W {:?}",
                self.w_e.dim(),
                self.w_m.dim(),
                self.w.dim()
            )));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Domain(format!("scale s must be positive, got {}", self.s)));
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(Error::Domain(format!("margin m must be non-negative, got {}", self.m)));
        }
        for (name, t) in [("W_E", &self.w_e), ("W_M", &self.w_m), ("W", &self.w)] {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        if let Some(j) = self
            .w
            .rows()
            .into_iter()
            .position(|r| r.iter().all(|&v| v == 0.0))
        {
            return Err(Error::Domain(format!("prototype {j} is zero")));
        }
        Ok(())
    }

    /// The tensors in a fixed order, for generic per-parameter loops.
    pub fn tensors(&self) -> [(&'static str, &Array2<f64>); 3] {
        [("W_E", &self.w_e), ("W_M", &self.w_m), ("W", &self.w)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 3] {
        [
            ("W_E", &mut self.w_e),
            ("W_M", &mut self.w_m),
            ("W", &mut self.w),
        ]
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Domain(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

pub(crate) fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `act_E(W_Eᵀ x)`.
pub fn encoder_forward(x: &[f64], params: &ModelParams) -> Result<Array1<f64>> {
    check_len("input", x.len(), params.d_in())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("input has non-finite entries".into()));
    }
    let z = params.w_e.t().dot(&ArrayView1::from(x));
    Ok(z.mapv(|v| params.encoder_activation.apply(v)))
}

/// `act_M(W_Mᵀ k)` before normalization.
pub fn debias_raw(k: &[f64], params: &ModelParams) -> Result<Array1<f64>> {
    check_len("encoder feature", k.len(), params.d_k())?;
    let h = params.w_m.t().dot(&ArrayView1::from(k));
    Ok(h.mapv(|v| params.debias_activation.apply(v)))
}

/// Unit-norm face feature `f̂`.
pub fn debias_forward(k: &[f64], params: &ModelParams) -> Result<Array1<f64>> {
    let g = debias_raw(k, params)?;
    let n = norm(g.view());
    if n == 0.0 {
        return Err(Error::Degenerate("debias output is the zero vector".into()));
    }
    Ok(g / n)
}

pub fn mix(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("second feature", b.len(), a.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "bias difference of a zero debias output".into(),
        ));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Bias difference of sample `i` against `j`, in `[-1, 1]`.
pub fn epsilon(k_i: &[f64], k_j: &[f64], params: &ModelParams) -> Result<f64> {
    let k_mix = mix(k_i, k_j)?;
    let g_i = debias_raw(k_i, params)?;
    let g_j = debias_raw(k_j, params)?;
    let g_mix = debias_raw(&k_mix, params)?;
    let c_i = cosine(g_mix.view(), g_i.view())?;
    let c_j = cosine(g_mix.view(), g_j.view())?;
    Ok(c_i * c_i - c_j * c_j)
}

/// Cosines of `f̂` to every normalized prototype.
pub fn prototype_cosines(f_hat: &[f64], params: &ModelParams) -> Result<Array1<f64>> {
    check_len("face feature", f_hat.len(), params.d_f())?;
    let f = ArrayView1::from(f_hat);
    params
        .w
        .rows()
        .into_iter()
        .map(|row| {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Domain("zero prototype".into()));
            }
            Ok(row.dot(&f) / n)
        })
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// `-log softmax_y` of the given logits, max-subtracted.
pub(crate) fn softmax_nll(logits: ArrayView1<f64>, y: usize) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[y]
}

fn margin_loss(f_hat: &[f64], y: usize, shift: f64, params: &ModelParams) -> Result<f64> {
    if y >= params.n_id() {
        return Err(Error::Domain(format!(
            "label {y} out of range [0, {})",
            params.n_id()
        )));
    }
    let cos = prototype_cosines(f_hat, params)?;
    let mut logits = cos * params.s;
    logits[y] += params.s * (shift - params.m);
    Ok(softmax_nll(logits.view(), y))
}

/// Large-margin cosine softmax loss of one sample.
pub fn cosface_loss(f_hat: &[f64], y: usize, params: &ModelParams) -> Result<f64> {
    margin_loss(f_hat, y, 0.0, params)
}

/// Cosine softmax loss with the bias difference added to the target logit.
pub fn mixfair_loss(f_hat: &[f64], y: usize, eps: f64, params: &ModelParams) -> Result<f64> {
    if !(-1.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("bias difference {eps} outside [-1, 1]")));
    }
    margin_loss(f_hat, y, eps, params)
}
