//! Mini-batch optimization loop, base training and MAE evaluation.

use serde::{Deserialize, Serialize};

use crate::data::WindowDataset;
use crate::diffcore::{ParamVector, ParamView, RngStream, Segment, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{self, LatentNoise, ModelConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str, errors: &mut Vec<String>) {
        if self.batch_size == 0 {
            errors.push(format!("{section}.batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            errors.push(format!("{section}.learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errors.push(format!("{section} Adam betas must lie in [0, 1)"));
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            lr: S::lit(cfg.learning_rate),
            beta1: S::lit(cfg.beta1),
            beta2: S::lit(cfg.beta2),
            eps: S::lit(cfg.epsilon),
            step: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }

    pub fn update(&mut self, params: &mut [S], grad: &[S]) {
        self.step += 1;
        let one = S::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One mini-batch, already cast to the model scalar.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub inputs: Tensor<S>,
    pub targets: Tensor<S>,
    pub noise: LatentNoise<S>,
    pub epoch: usize,
    pub index: usize,
}

/// Loss node of one step plus named scalars to average into the epoch log.
pub struct StepOutcome {
    pub loss: Var,
    pub metrics: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch means of the step metrics, in step order.
    pub metrics: Vec<(String, f64)>,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    /// Total loss of the very first optimizer step.
    pub first_batch_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last_val_mae(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_mae)
    }
}

pub(crate) fn batch_stream(seed: u64, epoch: usize, index: usize) -> RngStream {
    RngStream::new(seed).derive("batch", ((epoch as u64) << 32) | index as u64)
}

/// Runs `epochs` of mini-batch Adam from `init`, calling `step` to build the
/// loss of every batch on a fresh tape. Batch order, latent noise and any
/// randomness `step` draws from the batch stream are fixed by `seed`.
pub fn fit<S, F>(
    init: ParamVector<S>,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
    mut step: F,
) -> Result<(ParamVector<S>, TrainLog)>
where
    S: Scalar,
    F: FnMut(&mut Tape<S>, ParamView<'_>, &Batch<S>, &mut RngStream) -> Result<StepOutcome>,
{
    if train.is_empty() {
        return Err(Error::Data("training split holds no windows".into()));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut params = init;
    let segments: Vec<Segment> = params.segments().to_vec();
    let mut adam = Adam::new(params.len(), tcfg);
    let mut log = TrainLog {
        seed,
        ..Default::default()
    };
    let root = RngStream::new(seed);

    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive("shuffle", epoch as u64).shuffle(&mut order);
        let mut sums: Vec<(&'static str, f64)> = Vec::new();
        let mut batches = 0usize;

        for (index, rows) in order.chunks(tcfg.batch_size).enumerate() {
            let mut rng = batch_stream(seed, epoch, index);
            let batch = Batch {
                inputs: train.inputs.gather_leading(rows)?.cast(),
                targets: train.targets.gather_leading(rows)?.cast(),
                noise: LatentNoise::sample(cfg, rows.len(), &mut rng),
                epoch,
                index,
            };
            let mut tape = Tape::new();
            let flat = tape.param(params.as_tensor());
            let view = ParamView::new(flat, &segments);
            let outcome = step(&mut tape, view, &batch, &mut rng)?;
            let loss = tape.value(outcome.loss).item()?.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}, batch {index}"),
                });
            }
            log.first_batch_loss.get_or_insert(loss);
            tape.backward(outcome.loss)?;
            let grad = tape
                .grad(flat)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![S::zero(); params.len()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}, batch {index} (gradient)"),
                });
            }
            adam.update(params.values_mut(), &grad);

            if sums.is_empty() {
                sums.push(("loss", 0.0));
                sums.extend(outcome.metrics.iter().map(|(k, _)| (*k, 0.0)));
            }
            sums[0].1 += loss;
            for (slot, (_, v)) in sums[1..].iter_mut().zip(&outcome.metrics) {
                slot.1 += v;
            }
            batches += 1;
        }

        let train_mae = evaluate_mae(&params, train, cfg, 0.0, 0)?;
        let val_mae = match val {
            Some(v) if !v.is_empty() => evaluate_mae(&params, v, cfg, 0.0, 0)?,
            _ => f64::NAN,
        };
        log.epochs.push(EpochRecord {
            epoch,
            metrics: sums
                .into_iter()
                .map(|(k, s)| (k.to_string(), s / batches.max(1) as f64))
                .collect(),
            train_mae,
            val_mae,
        });
    }
    Ok((params, log))
}

/// Base-objective step: forward with the batch's latent noise, `L_o + L_IB`.
pub fn base_step<S: Scalar>(
    tape: &mut Tape<S>,
    params: ParamView<'_>,
    batch: &Batch<S>,
    cfg: &ModelConfig,
) -> Result<StepOutcome> {
    let x = tape.constant(batch.inputs.clone());
    let y = tape.constant(batch.targets.clone());
    let out = model::forward(tape, x, &params, cfg, Some(&batch.noise))?;
    let parts = model::base_loss(tape, &out, y, cfg)?;
    Ok(StepOutcome {
        loss: parts.total,
        metrics: vec![
            ("regression", tape.value(parts.regression).item()?.to_f64_lossy()),
            ("bottleneck", tape.value(parts.bottleneck).item()?.to_f64_lossy()),
        ],
    })
}

/// Base training continued from given parameters.
pub fn train_from<S: Scalar>(
    init: ParamVector<S>,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamVector<S>, TrainLog)> {
    fit(init, train, val, cfg, tcfg, seed, |tape, view, batch, _| {
        base_step(tape, view, batch, cfg)
    })
}

/// Base training from a seeded initialization.
pub fn train<S: Scalar>(
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamVector<S>, TrainLog)> {
    if train.is_empty() {
        return Err(Error::Data("training split holds no windows".into()));
    }
    let init = model::init_params(cfg, seed)?;
    train_from(init, train, val, cfg, tcfg, seed)
}

/// Normalized and denormalized mean absolute error over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub normalized: f64,
    pub denormalized: f64,
}

const EVAL_CHUNK: usize = 256;

/// Deterministic-mode MAE over every window. With `noise_sigma > 0`, each
/// normalized input window `k` receives `N(0, sigma²)` noise drawn from a
/// stream derived from `(seed, k)`; targets are never perturbed.
pub fn evaluate<S: Scalar>(
    params: &ParamVector<S>,
    data: &WindowDataset,
    cfg: &ModelConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<MaeReport> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    if data.is_empty() {
        return Err(Error::Data(format!("{} split holds no windows", data.split)));
    }
    let root = RngStream::new(seed);
    let (h, c) = (data.horizon(), data.channels());
    let mut abs_sum = 0.0;
    let mut denorm_sum = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let count = EVAL_CHUNK.min(data.len() - start);
        let mut inputs = data.inputs.slice_leading(start, count)?;
        if noise_sigma > 0.0 {
            let per = inputs.len() / count;
            for (k, window) in inputs.data_mut().chunks_mut(per).enumerate() {
                let mut rng = root.derive("input-noise", (start + k) as u64);
                for v in window {
                    *v += noise_sigma * rng.standard_normal();
                }
            }
        }
        let y_hat = model::predict(params, &inputs.cast::<S>(), cfg)?;
        let targets = data.targets.slice_leading(start, count)?;
        for (i, (p, t)) in y_hat.data().iter().zip(targets.data()).enumerate() {
            let err = (p.to_f64_lossy() - t).abs();
            abs_sum += err;
            denorm_sum += err * data.normalizer.std[i % c];
        }
    }
    let n = (data.len() * h * c) as f64;
    Ok(MaeReport {
        normalized: abs_sum / n,
        denormalized: denorm_sum / n,
    })
}

/// Normalized-space MAE; see [`evaluate`].
pub fn evaluate_mae<S: Scalar>(
    params: &ParamVector<S>,
    data: &WindowDataset,
    cfg: &ModelConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<f64> {
    evaluate(params, data, cfg, noise_sigma, seed).map(|r| r.normalized)
}
