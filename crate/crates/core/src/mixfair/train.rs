//! SGD training loop, in-batch pairing and the post-training evaluation.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::batch::{loss_and_grad, Batch, EpsGradient, LossMode, LossOptions};
use super::{debias_forward, encoder_forward, Activation, ModelParams};
use crate::embedding::{EmbeddingSet, LabelTable};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions, Evaluation};
use crate::kv::KvFile;
use crate::metrics::format_sig9;
use crate::synth::{draw_u64, epoch_order, Partition, TrainingSet, STREAM_PAIRING};

/// Pairs every sample with another sample of a different identity.
///
/// A shift `r` in `[1, B)` is drawn from `(seed, round)`; sample `i` takes
/// `(i + r) mod B`, moving on to `r + 1, r + 2, ...` while the candidate
/// shares its identity.
pub fn pair_samples(labels: &[usize], seed: u64, round: u64) -> Result<Vec<usize>> {
    let b = labels.len();
    if b < 2 || labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Domain(
            "pairing needs a batch with at least 2 identities".into(),
        ));
    }
    let shift = 1 + (draw_u64(seed, STREAM_PAIRING, round) % (b as u64 - 1)) as usize;
    Ok((0..b)
        .map(|i| {
            (0..b - 1)
                .map(|t| (i + 1 + (shift - 1 + t) % (b - 1)) % b)
                .find(|&j| labels[j] != labels[i])
                .expect("another identity exists")
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Input dimension; 0 takes it from the data.
    pub d_in: usize,
    pub d_k: usize,
    pub d_f: usize,
    /// Identity count; 0 takes it from the data.
    pub n_id: usize,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub s: f64,
    pub m: f64,
    pub mode: LossMode,
    pub eps_gradient: EpsGradient,
    pub encoder_activation: Activation,
    pub debias_activation: Activation,
}

/// Step-decay milestones of a 40-epoch schedule.
const REFERENCE_EPOCHS: usize = 40;
const REFERENCE_DECAYS: [usize; 4] = [8, 18, 30, 34];

/// Milestones scaled proportionally to `epochs`.
pub fn scaled_decay_epochs(epochs: usize) -> Vec<usize> {
    REFERENCE_DECAYS
        .iter()
        .map(|&e| (e * epochs + REFERENCE_EPOCHS / 2) / REFERENCE_EPOCHS)
        .collect()
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 40;
        Self {
            d_in: 0,
            d_k: 32,
            d_f: 32,
            n_id: 0,
            lr: 0.1,
            decay_epochs: scaled_decay_epochs(epochs),
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs,
            seed: 0,
            s: 64.0,
            m: 0.35,
            mode: LossMode::MixFair,
            eps_gradient: EpsGradient::Flow,
            encoder_activation: Activation::Tanh,
            debias_activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    /// Overrides defaults with any keys present. Setting `epochs` without
    /// `decay_epochs` rescales the milestones.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let d = Self::default();
        let epochs = kv.get_or("epochs", d.epochs)?;
        let cfg = Self {
            d_in: kv.get_or("d_in", d.d_in)?,
            d_k: kv.get_or("d_k", d.d_k)?,
            d_f: kv.get_or("d_f", d.d_f)?,
            n_id: kv.get_or("n_id", d.n_id)?,
            lr: kv.get_or("lr", d.lr)?,
            decay_epochs: kv
                .get_list("decay_epochs")?
                .unwrap_or_else(|| scaled_decay_epochs(epochs)),
            decay_factor: kv.get_or("decay_factor", d.decay_factor)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            weight_decay: kv.get_or("weight_decay", d.weight_decay)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            epochs,
            seed: kv.get_or("seed", d.seed)?,
            s: kv.get_or("s", d.s)?,
            m: kv.get_or("m", d.m)?,
            mode: kv.get_or("mode", d.mode)?,
            eps_gradient: kv.get_or("eps_gradient", d.eps_gradient)?,
            encoder_activation: kv.get_or("encoder_activation", d.encoder_activation)?,
            debias_activation: kv.get_or("debias_activation", d.debias_activation)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 || self.d_f == 0 {
            return Err(Error::Config("d_k and d_f must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("decay_factor", self.decay_factor),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("m", self.m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Config("s must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions {
            mode: self.mode,
            eps_gradient: self.eps_gradient,
            flip_eps_branch: false,
        }
    }
}

/// Per-iteration mean |ε| and batch loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasTrace {
    pub mean_abs_eps: Vec<f64>,
    pub loss: Vec<f64>,
}

impl BiasTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// Mean of `mean_abs_eps` over the last `n` iterations.
    pub fn tail_mean_abs_eps(&self, n: usize) -> Option<f64> {
        let len = self.mean_abs_eps.len();
        if len == 0 {
            return None;
        }
        let tail = &self.mean_abs_eps[len - n.min(len)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Writes `iteration,mean_abs_eps,loss` rows.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,mean_abs_eps,loss")?;
        for (i, (e, l)) in self.mean_abs_eps.iter().zip(&self.loss).enumerate() {
            writeln!(out, "{i},{},{}", format_sig9(*e), format_sig9(*l))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: BiasTrace,
    /// Batches skipped because they held a single identity.
    pub skipped_batches: usize,
}

fn gather(part: &Partition, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let x = Array2::from_shape_fn((idx.len(), part.dim), |(r, c)| part.x[idx[r] * part.dim + c]);
    (x, idx.iter().map(|&i| part.y[i]).collect())
}

/// Trains on `data.train` with SGD, momentum and weight decay (decay added
/// to the gradient before the momentum update). Each epoch visits a seeded
/// permutation in full batches; a trailing partial batch is dropped.
/// `progress` is called once per epoch with `(epoch, last loss)`.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainingSet,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d_in = data.dim();
    if cfg.d_in != 0 && cfg.d_in != d_in {
        return Err(Error::Config(format!(
            "config d_in {} but data has dimension {d_in}",
            cfg.d_in
        )));
    }
    if cfg.n_id != 0 && cfg.n_id != data.num_identities {
        return Err(Error::Config(format!(
            "config n_id {} but data has {} identities",
            cfg.n_id, data.num_identities
        )));
    }
    let train = &data.train;
    if train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }
    let mut params = ModelParams::init(d_in, cfg.d_k, cfg.d_f, data.num_identities, cfg.seed)?;
    params.s = cfg.s;
    params.m = cfg.m;
    params.encoder_activation = cfg.encoder_activation;
    params.debias_activation = cfg.debias_activation;
    params.validate()?;

    let opts = cfg.loss_options();
    let mut velocity = [
        Array2::<f64>::zeros(params.w_e.dim()),
        Array2::<f64>::zeros(params.w_m.dim()),
        Array2::<f64>::zeros(params.w.dim()),
    ];
    let mut trace = BiasTrace::default();
    let mut skipped = 0;
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch as u64);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let (x, y) = gather(train, chunk);
            let partner = match pair_samples(&y, cfg.seed, iteration as u64) {
                Ok(p) => p,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            let batch = Batch { x, y, partner };
            let (out, grads) = loss_and_grad(&params, &batch, &opts).map_err(|e| match e {
                Error::Degenerate(message) => Error::Divergence { iteration, message },
                other => other,
            })?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    message: format!("loss is {}", out.loss),
                });
            }
            trace.mean_abs_eps.push(out.mean_abs_eps);
            trace.loss.push(out.loss);

            for ((_, p), (g, v)) in params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors().into_iter().map(|t| t.1).zip(velocity.iter_mut()))
            {
                ndarray::Zip::from(&mut *p).and(g).and(&mut *v).for_each(|p, &g, v| {
                    let g = g + cfg.weight_decay * *p;
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                });
            }
            if params.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    iteration,
                    message: "parameters became non-finite".into(),
                });
            }
            iteration += 1;
        }
        progress(epoch, trace.loss.last().copied().unwrap_or(f64::NAN));
    }
    Ok(TrainOutcome {
        params,
        trace,
        skipped_batches: skipped,
    })
}

/// Unit face features of every row of `part`, as an embedding set.
pub fn encode_partition(
    params: &ModelParams,
    part: &Partition,
    identity_attribute: &[u16],
    num_attributes: usize,
    labels: &LabelTable,
) -> Result<EmbeddingSet> {
    let mut vectors = Vec::with_capacity(part.len() * params.d_f());
    for i in 0..part.len() {
        let k = encoder_forward(part.row(i), params)?;
        let f = debias_forward(k.as_slice().expect("contiguous"), params)?;
        vectors.extend(f.iter().map(|&v| v as f32));
    }
    let identity: Vec<u32> = part.y.iter().map(|&y| y as u32).collect();
    let attribute = part.y.iter().map(|&y| identity_attribute[y]).collect();
    // labels are indexed by raw identity; keep only those present
    let mut present: Vec<u32> = identity.clone();
    present.sort_unstable();
    present.dedup();
    let names = if present.len() == labels.identities.len() {
        labels.identities.clone()
    } else {
        Vec::new()
    };
    EmbeddingSet::new(
        params.d_f(),
        vectors,
        identity,
        attribute,
        num_attributes,
        LabelTable {
            identities: names,
            attributes: labels.attributes.clone(),
        },
    )
}

/// Encodes the eval partition and runs the full evaluation on it. `K` is
/// clamped to the number of other identities.
pub fn toy_eval(params: &ModelParams, data: &TrainingSet, opts: &EvalOptions) -> Result<Evaluation> {
    let set = encode_partition(
        params,
        &data.eval,
        &data.identity_attribute,
        data.num_attributes,
        &data.labels,
    )?;
    let opts = EvalOptions {
        k: opts.k.min(set.num_identities().saturating_sub(1)).max(1),
        ..opts.clone()
    };
    evaluate(&set, &opts)
}
