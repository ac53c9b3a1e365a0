//! Batched forward pass and hand-written backward pass of the mean batch
//! loss.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{softmax_nll, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Bias difference added to the target logit.
    MixFair,
    /// Plain margin loss; the bias difference is still measured.
    CosFace,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixfair" => Ok(LossMode::MixFair),
            "cosface" => Ok(LossMode::CosFace),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (mixfair, cosface)"
            ))),
        }
    }
}

/// Whether the loss gradient flows into the bias-difference branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsGradient {
    Flow,
    Detach,
}

impl std::str::FromStr for EpsGradient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(EpsGradient::Flow),
            "detach" => Ok(EpsGradient::Detach),
            other => Err(Error::Config(format!(
                "unknown eps_gradient `{other}` (flow, detach)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossOptions {
    pub mode: LossMode,
    pub eps_gradient: EpsGradient,
    /// Test hook: negates the bias-difference branch of the backward pass.
    #[doc(hidden)]
    pub flip_eps_branch: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            mode: LossMode::MixFair,
            eps_gradient: EpsGradient::Flow,
            flip_eps_branch: false,
        }
    }
}

/// Samples with labels; sample `i` is paired with `partner[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B × d_in`.
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub partner: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if self.x.dim() != (b, params.d_in()) || self.partner.len() != b {
            return Err(Error::Domain(format!(
                "batch shapes disagree: x {:?}, {} labels, {} partners, d_in {}",
                self.x.dim(),
                b,
                self.partner.len(),
                params.d_in()
            )));
        }
        if let Some(&y) = self.y.iter().find(|&&y| y >= params.n_id()) {
            return Err(Error::Domain(format!("label {y} out of range")));
        }
        if let Some(i) = (0..b).find(|&i| self.partner[i] >= b || self.partner[i] == i) {
            return Err(Error::Domain(format!("sample {i} has an invalid partner")));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("batch input has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Bias difference of each sample against its partner.
    pub eps: Vec<f64>,
    pub mean_abs_eps: f64,
    /// Unit face features, `B × d_f`.
    pub f_hat: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_e: Array2<f64>,
    pub w_m: Array2<f64>,
    pub w: Array2<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> [(&'static str, &Array2<f64>); 3] {
        [("W_E", &self.w_e), ("W_M", &self.w_m), ("W", &self.w)]
    }

    fn check_finite(&self) -> Result<()> {
        for (tensor, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { tensor });
            }
        }
        Ok(())
    }
}

fn row_norms(a: &Array2<f64>, what: &str) -> Result<Array1<f64>> {
    let n = a.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = n.iter().position(|&v| v == 0.0) {
        return Err(Error::Degenerate(format!("{what} of sample {i} is the zero vector")));
    }
    Ok(n)
}

fn div_rows(a: &Array2<f64>, n: &Array1<f64>) -> Array2<f64> {
    a / &n.view().insert_axis(Axis(1))
}

/// Gradient of `u = v / |v|` pulled back to `v`, row by row.
fn unnormalize_grad(du: &Array2<f64>, u: &Array2<f64>, n: &Array1<f64>) -> Array2<f64> {
    let proj = (du * u).sum_axis(Axis(1));
    let mut dv = du - &(u * &proj.view().insert_axis(Axis(1)));
    dv /= &n.view().insert_axis(Axis(1));
    dv
}

/// Forward pass only.
pub fn batch_forward(params: &ModelParams, batch: &Batch, opts: &LossOptions) -> Result<BatchOutput> {
    Ok(run(params, batch, opts, false)?.0)
}

/// Mean batch loss and its gradient with respect to `W_E`, `W_M` and `W`.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    opts: &LossOptions,
) -> Result<(BatchOutput, Gradients)> {
    let (out, grads) = run(params, batch, opts, true)?;
    Ok((out, grads.expect("requested")))
}

fn run(
    params: &ModelParams,
    batch: &Batch,
    opts: &LossOptions,
    want_grad: bool,
) -> Result<(BatchOutput, Option<Gradients>)> {
    params.validate()?;
    batch.validate(params)?;
    let b = batch.len();
    let (s, m) = (params.s, params.m);
    let act_e = params.encoder_activation;
    let act_m = params.debias_activation;
    let p = &batch.partner;

    // forward
    let z = batch.x.dot(&params.w_e);
    let k = z.mapv(|v| act_e.apply(v));
    let h = k.dot(&params.w_m);
    let g = h.mapv(|v| act_m.apply(v));
    let k_mix = Array2::from_shape_fn(k.dim(), |(i, c)| 0.5 * (k[[i, c]] + k[[p[i], c]]));
    let h_mix = k_mix.dot(&params.w_m);
    let g_mix = h_mix.mapv(|v| act_m.apply(v));

    let gn = row_norms(&g, "debias output")?;
    let f = div_rows(&g, &gn);
    let mn = row_norms(&g_mix, "mixed debias output")?;
    let fm = div_rows(&g_mix, &mn);
    let c1: Vec<f64> = (0..b).map(|i| fm.row(i).dot(&f.row(i))).collect();
    let c2: Vec<f64> = (0..b).map(|i| fm.row(i).dot(&f.row(p[i]))).collect();
    let eps: Vec<f64> = (0..b).map(|i| c1[i] * c1[i] - c2[i] * c2[i]).collect();

    let wn = row_norms(&params.w, "prototype")?;
    let w_hat = div_rows(&params.w, &wn);
    let cos = f.dot(&w_hat.t());
    let mut logits = &cos * s;
    for (i, &y) in batch.y.iter().enumerate() {
        let shift = match opts.mode {
            LossMode::MixFair => eps[i],
            LossMode::CosFace => 0.0,
        };
        logits[[i, y]] += s * (shift - m);
    }
    let loss = logits
        .rows()
        .into_iter()
        .zip(&batch.y)
        .map(|(row, &y)| softmax_nll(row, y))
        .sum::<f64>()
        / b as f64;
    let out = BatchOutput {
        loss,
        mean_abs_eps: eps.iter().map(|e| e.abs()).sum::<f64>() / b as f64,
        eps,
        f_hat: f.clone(),
    };
    if !want_grad {
        return Ok((out, None));
    }

    // backward: dL/dlogits = (softmax - onehot) / B
    let mut dlogits = logits;
    for (mut row, &y) in dlogits.rows_mut().into_iter().zip(&batch.y) {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
        row[y] -= 1.0;
        row /= b as f64;
    }
    let dcos = &dlogits * s;
    let eps_active = opts.mode == LossMode::MixFair && opts.eps_gradient == EpsGradient::Flow;
    let sign = if opts.flip_eps_branch { -1.0 } else { 1.0 };
    let deps: Vec<f64> = (0..b)
        .map(|i| if eps_active { sign * dcos[[i, batch.y[i]]] } else { 0.0 })
        .collect();

    let dw_hat = dcos.t().dot(&f);
    let dw = unnormalize_grad(&dw_hat, &w_hat, &wn);
    let df = dcos.dot(&w_hat);

    // bias-difference branch, in terms of unit vectors
    let mut df_eps = Array2::<f64>::zeros(f.dim());
    let mut dfm = Array2::<f64>::zeros(fm.dim());
    for i in 0..b {
        let e = deps[i];
        if e == 0.0 {
            continue;
        }
        let (fi, fp, fmi) = (f.row(i), f.row(p[i]), fm.row(i));
        // d(c1²) = 2 c1 (dfm·f_i + fm·df_i), d(c2²) likewise with f_p
        Zip::from(dfm.row_mut(i))
            .and(fi)
            .and(fp)
            .for_each(|d, &a, &bp| *d += e * (2.0 * c1[i] * a - 2.0 * c2[i] * bp));
        Zip::from(df_eps.row_mut(i))
            .and(fmi)
            .for_each(|d, &v| *d += e * 2.0 * c1[i] * v);
        Zip::from(df_eps.row_mut(p[i]))
            .and(fmi)
            .for_each(|d, &v| *d -= e * 2.0 * c2[i] * v);
    }
    let df_total = df + &df_eps;
    let dg = unnormalize_grad(&df_total, &f, &gn);
    let dg_mix = unnormalize_grad(&dfm, &fm, &mn);

    let dh = dg * &h.mapv(|v| act_m.derivative(v));
    let dh_mix = dg_mix * &h_mix.mapv(|v| act_m.derivative(v));
    let dw_m = k.t().dot(&dh) + k_mix.t().dot(&dh_mix);
    let mut dk = dh.dot(&params.w_m.t());
    let dk_mix = dh_mix.dot(&params.w_m.t());
    for i in 0..b {
        let half = &dk_mix.row(i) * 0.5;
        dk.row_mut(i).scaled_add(1.0, &half);
        dk.row_mut(p[i]).scaled_add(1.0, &half);
    }
    let dz = dk * &z.mapv(|v| act_e.derivative(v));
    let dw_e = batch.x.t().dot(&dz);

    let grads = Gradients {
        w_e: dw_e,
        w_m: dw_m,
        w: dw,
    };
    grads.check_finite()?;
    Ok((out, Some(grads)))
}

#[cfg(test)]
mod tests {
    use super::super::{cosface_loss, debias_forward, encoder_forward, epsilon, mixfair_loss};
    use super::*;

    fn setup(b: usize) -> (ModelParams, Batch) {
        let params = ModelParams::init(5, 4, 3, 4, 3).unwrap();
        let x = Array2::from_shape_fn((b, 5), |(i, c)| ((i * 7 + c * 3) % 11) as f64 / 5.0 - 1.0);
        let y = (0..b).map(|i| i % 4).collect();
        let partner = (0..b).map(|i| (i + 1) % b).collect();
        (params, Batch { x, y, partner })
    }

    #[test]
    fn batch_matches_per_sample_ops() {
        let (params, batch) = setup(6);
        let out = batch_forward(&params, &batch, &LossOptions::default()).unwrap();
        let mut total = 0.0;
        for i in 0..6 {
            let k_i = encoder_forward(batch.x.row(i).as_slice().unwrap(), &params).unwrap();
            let k_p = encoder_forward(batch.x.row(batch.partner[i]).as_slice().unwrap(), &params).unwrap();
            let e = epsilon(k_i.as_slice().unwrap(), k_p.as_slice().unwrap(), &params).unwrap();
            assert!((e - out.eps[i]).abs() < 1e-14);
            let f = debias_forward(k_i.as_slice().unwrap(), &params).unwrap();
            total += mixfair_loss(f.as_slice().unwrap(), batch.y[i], e, &params).unwrap();
        }
        assert!((total / 6.0 - out.loss).abs() < 1e-12);
    }

    #[test]
    fn cosface_mode_ignores_eps_in_loss() {
        let (params, batch) = setup(5);
        let opts = LossOptions { mode: LossMode::CosFace, ..Default::default() };
        let out = batch_forward(&params, &batch, &opts).unwrap();
        let mut total = 0.0;
        for i in 0..5 {
            total += cosface_loss(out.f_hat.row(i).as_slice().unwrap(), batch.y[i], &params).unwrap();
        }
        assert!((total / 5.0 - out.loss).abs() < 1e-12);
        assert!(out.mean_abs_eps > 0.0);
    }

    #[test]
    fn detach_equals_cosface_gradient_shape() {
        // detached eps still shifts the logits, so only the loss differs from
        // cosface; gradients keep the eps-free structure
        let (params, batch) = setup(6);
        let detach = LossOptions { eps_gradient: EpsGradient::Detach, ..Default::default() };
        let (_, g) = loss_and_grad(&params, &batch, &detach).unwrap();
        let (_, full) = loss_and_grad(&params, &batch, &LossOptions::default()).unwrap();
        assert_ne!(g.w_e, full.w_e);
        assert_eq!(g.w.dim(), full.w.dim());
    }

    #[test]
    fn rejects_bad_batches() {
        let (params, mut batch) = setup(4);
        batch.partner[2] = 2;
        assert!(batch_forward(&params, &batch, &LossOptions::default()).is_err());
        let (params, mut batch) = setup(4);
        batch.y[0] = 9;
        assert!(batch_forward(&params, &batch, &LossOptions::default()).is_err());
    }
}
