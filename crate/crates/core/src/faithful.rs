//! Weight-space faithfulness: distances between model outputs, a projected
//! gradient-ascent adversary over parameter perturbations, the composite
//! fine-tuning objective, and an empirical certification report.
//!
//! A perturbation `delta` has one entry per parameter and is confined to the
//! L∞ ball of radius `R`. The adversary maximizes
//!
//! ```text
//! J(delta) = D1(ĉA(w), ĉA(w + delta)) + D1(ĉD(w), ĉD(w + delta)) + D3(ŷ(w), ŷ(w + delta))
//! ```
//!
//! by plain gradient ascent with step `gamma` followed by coordinatewise
//! clamping, with `w` held fixed. Fine-tuning then minimizes
//! `L_o + L_IB + λ1·L1 + λ2·L2 + λ3·L3` over `w` at the adversarial `delta`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::WindowDataset;
use crate::diffcore::{ParamVector, ParamView, ReduceKind, RngStream, Segment, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::ifcb::IbOutput;
use crate::model::{self, ForecastOutput, LatentNoise, ModelConfig, APPROX_BLOCK, DETAIL_BLOCK};
use crate::scalar::Scalar;
use crate::train::{self, Batch, StepOutcome, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Mean of squared differences over every element.
    Mse,
    /// Batch mean of the per-sample squared Euclidean distance.
    L2Mean,
    /// Batch mean of `KL[N(mu_a, var_a) || N(mu_b, var_b)]` over latent
    /// statistics laid out as `[batch, means | log-variances]`.
    GaussianKl,
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(DistanceKind::Mse),
            "l2-mean" => Ok(DistanceKind::L2Mean),
            "gaussian-kl" => Ok(DistanceKind::GaussianKl),
            other => Err(Error::Config(format!("unknown distance kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaInit {
    Zeros,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbScope {
    /// Every parameter segment.
    All,
    /// Only the two bottleneck blocks; the head is left untouched.
    IfcbOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaithfulConfig {
    /// L∞ radius of the perturbation ball.
    pub radius: f64,
    pub pgd_step: f64,
    pub pgd_iters: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Bound on D1 in bottleneck space.
    pub beta1: f64,
    /// Bound on D2 between fine-tuned and base forecasts.
    pub alpha1: f64,
    /// Bound on D3 under perturbation.
    pub alpha2: f64,
    /// Offset paired with the D3 term in the min-max objective; reported only.
    pub beta2: f64,
    pub d1: DistanceKind,
    pub d2: DistanceKind,
    pub d3: DistanceKind,
    pub delta_init: DeltaInit,
    pub scope: PerturbScope,
    /// Independent adversary restarts used by certification.
    pub n_probes: usize,
}

impl Default for FaithfulConfig {
    fn default() -> Self {
        FaithfulConfig {
            radius: 0.1,
            pgd_step: 1.0 / 255.0,
            pgd_iters: 10,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            beta1: 0.1,
            alpha1: 0.1,
            alpha2: 0.1,
            beta2: 0.1,
            d1: DistanceKind::L2Mean,
            d2: DistanceKind::Mse,
            d3: DistanceKind::Mse,
            delta_init: DeltaInit::Uniform,
            scope: PerturbScope::All,
            n_probes: 8,
        }
    }
}

impl FaithfulConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let nonneg = [
            ("radius", self.radius),
            ("pgd_step", self.pgd_step),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("beta1", self.beta1),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta2", self.beta2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                errors.push(format!("faithful.{name} must be >= 0, got {v}"));
            }
        }
        if self.pgd_iters == 0 {
            errors.push("faithful.pgd_iters must be >= 1".into());
        }
        if self.n_probes == 0 {
            errors.push("faithful.n_probes must be >= 1".into());
        }
        if self.d2 == DistanceKind::GaussianKl || self.d3 == DistanceKind::GaussianKl {
            errors.push("faithful.d2 and faithful.d3 compare forecasts and cannot be gaussian-kl".into());
        }
    }

    pub fn checked(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }
}

/// Differentiable distance between two same-shaped nodes.
pub fn distance<S: Scalar>(tape: &mut Tape<S>, kind: DistanceKind, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "distance needs equal shapes, got {shape:?} and {:?}",
            tape.shape(b)
        )));
    }
    match kind {
        DistanceKind::Mse => model::mse(tape, a, b),
        DistanceKind::L2Mean => {
            let d = tape.sub(a, b)?;
            let sq = tape.square(d);
            if shape.len() < 2 {
                return Ok(tape.sum(sq));
            }
            let axes: Vec<usize> = (1..shape.len()).collect();
            let per_sample = tape.reduce(ReduceKind::Sum, sq, &axes)?;
            Ok(tape.mean(per_sample))
        }
        DistanceKind::GaussianKl => {
            if shape.len() != 2 || shape[1] % 2 != 0 {
                return Err(Error::Dimension(format!(
                    "gaussian-kl needs [batch, 2 * latent] statistics, got {shape:?}"
                )));
            }
            let latent = shape[1] / 2;
            let mu_a = tape.narrow_last(a, 0, latent)?;
            let lv_a = tape.narrow_last(a, latent, latent)?;
            let mu_b = tape.narrow_last(b, 0, latent)?;
            let lv_b = tape.narrow_last(b, latent, latent)?;
            // ½ Σ (lv_b − lv_a + exp(lv_a − lv_b) + (mu_a − mu_b)² exp(−lv_b) − 1)
            let log_ratio = tape.sub(lv_a, lv_b)?;
            let ratio = tape.exp(log_ratio);
            let dm = tape.sub(mu_a, mu_b)?;
            let dm2 = tape.square(dm);
            let neg_lv_b = tape.scale(lv_b, -S::one());
            let prec_b = tape.exp(neg_lv_b);
            let quad = tape.mul(dm2, prec_b)?;
            let t = tape.add(ratio, quad)?;
            let t = tape.sub(t, log_ratio)?;
            let t = tape.offset(t, -S::one());
            let per_sample = tape.reduce(ReduceKind::Sum, t, &[1])?;
            let m = tape.mean(per_sample);
            Ok(tape.scale(m, S::lit(0.5)))
        }
    }
}

/// D1 between two applications of the same block: over latent statistics
/// for `gaussian-kl`, over filtered coefficients otherwise.
fn block_distance<S: Scalar>(
    tape: &mut Tape<S>,
    kind: DistanceKind,
    a: &IbOutput<S>,
    b: &IbOutput<S>,
) -> Result<Var> {
    match kind {
        DistanceKind::GaussianKl => distance(tape, kind, a.stats, b.stats),
        _ => distance(tape, kind, a.filtered, b.filtered),
    }
}

/// Parameter perturbation aligned with a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<S> {
    pub delta: Vec<S>,
}

impl<S: Scalar> Perturbation<S> {
    pub fn zeros(len: usize) -> Self {
        Perturbation {
            delta: vec![S::zero(); len],
        }
    }

    /// Uniform in `[-radius, radius]` on unmasked coordinates, zero elsewhere.
    pub fn uniform(mask: &[bool], radius: f64, rng: &mut RngStream) -> Self {
        Perturbation {
            delta: mask
                .iter()
                .map(|&m| {
                    if m {
                        S::lit(rng.uniform(-radius, radius))
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        }
    }

    pub fn init(kind: DeltaInit, mask: &[bool], radius: f64, rng: &mut RngStream) -> Self {
        match kind {
            DeltaInit::Zeros => Self::zeros(mask.len()),
            DeltaInit::Uniform => Self::uniform(mask, radius, rng),
        }
    }

    /// Euclidean projection onto the L∞ ball: coordinatewise clamping.
    pub fn project(&mut self, radius: f64) {
        let r = S::lit(radius);
        for d in &mut self.delta {
            *d = d.max(-r).min(r);
        }
    }

    pub fn linf(&self) -> S {
        self.delta.iter().fold(S::zero(), |m, d| m.max(d.abs()))
    }

    pub fn as_tensor(&self) -> Tensor<S> {
        Tensor::vector(self.delta.clone())
    }
}

/// Which coordinates a perturbation may move.
pub fn perturbation_mask(segments: &[Segment], scope: PerturbScope) -> Vec<bool> {
    let mut mask = Vec::new();
    for s in segments {
        let on = match scope {
            PerturbScope::All => true,
            PerturbScope::IfcbOnly => {
                s.name.starts_with(APPROX_BLOCK) || s.name.starts_with(DETAIL_BLOCK)
            }
        };
        mask.extend(std::iter::repeat_n(on, s.len()));
    }
    mask
}

/// Unperturbed outputs the adversary measures against.
struct Reference<S> {
    approx_filtered: Tensor<S>,
    approx_stats: Tensor<S>,
    detail_filtered: Tensor<S>,
    detail_stats: Tensor<S>,
    y_hat: Tensor<S>,
}

impl<S: Scalar> Reference<S> {
    fn compute(
        params: &ParamVector<S>,
        x: &Tensor<S>,
        cfg: &ModelConfig,
        noise: Option<&LatentNoise<S>>,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let flat = tape.constant(params.as_tensor());
        let view = ParamView::new(flat, params.segments());
        let xv = tape.constant(x.clone());
        let out = model::forward(&mut tape, xv, &view, cfg, noise)?;
        Ok(Reference {
            approx_filtered: tape.value(out.approx.filtered).clone(),
            approx_stats: tape.value(out.approx.stats).clone(),
            detail_filtered: tape.value(out.detail.filtered).clone(),
            detail_stats: tape.value(out.detail.stats).clone(),
            y_hat: tape.value(out.y_hat).clone(),
        })
    }

    fn block(&self, tape: &mut Tape<S>, approx: bool, like: &IbOutput<S>) -> IbOutput<S> {
        let (f, s) = if approx {
            (&self.approx_filtered, &self.approx_stats)
        } else {
            (&self.detail_filtered, &self.detail_stats)
        };
        let filtered = tape.constant(f.clone());
        let stats = tape.constant(s.clone());
        IbOutput {
            filtered,
            stats,
            mu: like.mu,
            log_var: like.log_var,
            z: like.z,
            eps: None,
        }
    }
}

/// The three adversarial distance nodes at `w + delta`.
#[derive(Debug, Clone, Copy)]
struct AdversarialParts {
    d1_approx: Var,
    d1_detail: Var,
    d3: Var,
}

#[allow(clippy::too_many_arguments)]
fn adversarial_parts<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamVector<S>,
    delta: Var,
    x: &Tensor<S>,
    reference: &Reference<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<AdversarialParts> {
    let base = tape.constant(params.as_tensor());
    let shifted = tape.add(base, delta)?;
    let view = ParamView::new(shifted, params.segments());
    let xv = tape.constant(x.clone());
    let out = model::forward(tape, xv, &view, cfg, noise)?;
    let ref_a = reference.block(tape, true, &out.approx);
    let ref_d = reference.block(tape, false, &out.detail);
    let ref_y = tape.constant(reference.y_hat.clone());
    Ok(AdversarialParts {
        d1_approx: block_distance(tape, fcfg.d1, &ref_a, &out.approx)?,
        d1_detail: block_distance(tape, fcfg.d1, &ref_d, &out.detail)?,
        d3: distance(tape, fcfg.d3, ref_y, out.y_hat)?,
    })
}

/// Adversarial objective `J(delta)` and its gradient w.r.t. `delta`.
pub fn adversarial_objective<S: Scalar>(
    x: &Tensor<S>,
    params: &ParamVector<S>,
    delta: &Perturbation<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<(f64, Vec<S>)> {
    let reference = Reference::compute(params, x, cfg, noise)?;
    objective_with_reference(x, params, delta, &reference, fcfg, cfg, noise)
}

fn objective_with_reference<S: Scalar>(
    x: &Tensor<S>,
    params: &ParamVector<S>,
    delta: &Perturbation<S>,
    reference: &Reference<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<(f64, Vec<S>)> {
    let mut tape = Tape::new();
    let dv = tape.param(delta.as_tensor());
    let parts = adversarial_parts(&mut tape, params, dv, x, reference, fcfg, cfg, noise)?;
    let j = tape.add(parts.d1_approx, parts.d1_detail)?;
    let j = tape.add(j, parts.d3)?;
    let value = tape.value(j).item()?.to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Divergence {
            context: "adversarial objective".into(),
        });
    }
    tape.backward(j)?;
    let grad = tape
        .grad(dv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![S::zero(); delta.delta.len()]);
    Ok((value, grad))
}

/// Objective values seen by the adversary: `J(delta_0) ..= J(delta_P)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PgdTrace {
    pub objective: Vec<f64>,
}

impl PgdTrace {
    pub fn is_non_decreasing(&self) -> bool {
        self.objective.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Runs `pgd_iters` ascent steps from `start`, projecting after each one.
/// `params` is only read.
pub fn pgd_adversary<S: Scalar>(
    x: &Tensor<S>,
    params: &ParamVector<S>,
    start: Perturbation<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<(Perturbation<S>, PgdTrace)> {
    if start.delta.len() != params.len() {
        return Err(Error::Dimension(format!(
            "perturbation has {} entries for {} parameters",
            start.delta.len(),
            params.len()
        )));
    }
    let mask = perturbation_mask(params.segments(), fcfg.scope);
    let reference = Reference::compute(params, x, cfg, noise)?;
    let gamma = S::lit(fcfg.pgd_step);
    let mut delta = start;
    delta.project(fcfg.radius);
    let mut trace = PgdTrace::default();
    for _ in 0..fcfg.pgd_iters {
        let (j, grad) = objective_with_reference(x, params, &delta, &reference, fcfg, cfg, noise)?;
        trace.objective.push(j);
        for ((d, g), &m) in delta.delta.iter_mut().zip(&grad).zip(&mask) {
            if m {
                *d += gamma * *g;
            }
        }
        delta.project(fcfg.radius);
    }
    let (j, _) = objective_with_reference(x, params, &delta, &reference, fcfg, cfg, noise)?;
    trace.objective.push(j);
    Ok((delta, trace))
}

/// Loss nodes of one fine-tuning batch.
#[derive(Debug, Clone)]
pub struct FaithfulTerms<S> {
    pub clean: ForecastOutput<S>,
    /// D1 on both coefficient streams under `delta`.
    pub l1: Var,
    /// D2 between the fine-tuned and frozen base forecasts.
    pub l2: Var,
    /// D3 between clean and perturbed forecasts.
    pub l3: Var,
}

/// Builds `L1`, `L2` and `L3` on `tape`; gradients flow to `params.flat` only.
#[allow(clippy::too_many_arguments)]
pub fn faithful_losses<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamView<'_>,
    x: Var,
    base_forecast: &Tensor<S>,
    delta: &Perturbation<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<FaithfulTerms<S>> {
    let clean = model::forward(tape, x, params, cfg, noise)?;
    let dv = tape.constant(delta.as_tensor());
    let shifted = tape.add(params.flat, dv)?;
    let shifted_view = ParamView::new(shifted, params.segments);
    let pert = model::forward(tape, x, &shifted_view, cfg, noise)?;

    let l1a = block_distance(tape, fcfg.d1, &clean.approx, &pert.approx)?;
    let l1d = block_distance(tape, fcfg.d1, &clean.detail, &pert.detail)?;
    let l1 = tape.add(l1a, l1d)?;
    let base = tape.constant(base_forecast.clone());
    let l2 = distance(tape, fcfg.d2, clean.y_hat, base)?;
    let l3 = distance(tape, fcfg.d3, clean.y_hat, pert.y_hat)?;
    Ok(FaithfulTerms { clean, l1, l2, l3 })
}

/// `λ1·L1 + λ2·L2 + λ3·L3`.
pub fn weighted_penalty<S: Scalar>(
    tape: &mut Tape<S>,
    terms: &FaithfulTerms<S>,
    fcfg: &FaithfulConfig,
) -> Result<Var> {
    let a = tape.scale(terms.l1, S::lit(fcfg.lambda1));
    let b = tape.scale(terms.l2, S::lit(fcfg.lambda2));
    let c = tape.scale(terms.l3, S::lit(fcfg.lambda3));
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// One outer step: inner adversary at the current weights, then the composite loss.
pub fn finetune_step<S: Scalar>(
    tape: &mut Tape<S>,
    params: ParamView<'_>,
    batch: &Batch<S>,
    rng: &mut RngStream,
    base: &ParamVector<S>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
) -> Result<StepOutcome> {
    let current = base.with_values(tape.value(params.flat).data().to_vec())?;
    let noise = Some(&batch.noise);
    let base_forecast = Reference::compute(base, &batch.inputs, cfg, noise)?.y_hat;

    let mask = perturbation_mask(current.segments(), fcfg.scope);
    let mut pgd_rng = rng.derive("pgd", 0);
    let start = Perturbation::init(fcfg.delta_init, &mask, fcfg.radius, &mut pgd_rng);
    let (delta, trace) = pgd_adversary(&batch.inputs, &current, start, fcfg, cfg, noise)?;

    let x = tape.constant(batch.inputs.clone());
    let y = tape.constant(batch.targets.clone());
    let terms = faithful_losses(tape, &params, x, &base_forecast, &delta, fcfg, cfg, noise)?;
    let parts = model::base_loss(tape, &terms.clean, y, cfg)?;
    let penalty = weighted_penalty(tape, &terms, fcfg)?;
    let loss = tape.add(parts.total, penalty)?;

    let v = |tape: &Tape<S>, n: Var| tape.value(n).data()[0].to_f64_lossy();
    Ok(StepOutcome {
        loss,
        metrics: vec![
            ("regression", v(tape, parts.regression)),
            ("bottleneck", v(tape, parts.bottleneck)),
            ("l1", v(tape, terms.l1)),
            ("l2", v(tape, terms.l2)),
            ("l3", v(tape, terms.l3)),
            ("pgd_objective", trace.objective.last().copied().unwrap_or(0.0)),
        ],
    })
}

/// Fine-tunes from `base`, solving a fresh adversary for every batch.
pub fn finetune<S: Scalar>(
    base: &ParamVector<S>,
    train_set: &WindowDataset,
    val: Option<&WindowDataset>,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamVector<S>, TrainLog)> {
    fcfg.checked()?;
    let expected = ParamVector::<S>::zeros(&model::param_layout(cfg))?;
    let bad = expected.layout_mismatches(base.segments());
    if !bad.is_empty() {
        return Err(Error::Checkpoint(format!(
            "base parameters do not match the model config: {}",
            bad.join(", ")
        )));
    }
    train::fit(base.clone(), train_set, val, cfg, tcfg, seed, |tape, view, batch, rng| {
        finetune_step(tape, view, batch, rng, base, fcfg, cfg)
    })
}

/// Empirical faithfulness measurements and threshold checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    /// Max over probes of D1 on the approximation stream.
    pub d1_approx: f64,
    /// Max over probes of D1 on the detail stream.
    pub d1_detail: f64,
    pub d2: f64,
    /// Max over probes of D3.
    pub d3: f64,
    pub beta1: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    /// `d1_approx <= beta1 && d1_detail <= beta1`.
    pub ib_similarity_ok: bool,
    /// `d2 <= alpha1`.
    pub forecast_closeness_ok: bool,
    /// `d3 <= alpha2`.
    pub forecast_stability_ok: bool,
    pub radius: f64,
    pub pgd_step: f64,
    pub pgd_iters: usize,
    pub n_probes: usize,
    pub d1_kind: DistanceKind,
    pub d2_kind: DistanceKind,
    pub d3_kind: DistanceKind,
    pub scope: PerturbScope,
    pub seed: u64,
    pub windows: usize,
    pub dataset_id: String,
    pub note: String,
}

pub const CERTIFY_NOTE: &str = "Worst case over the radius-R L-infinity ball is approximated by the \
maximum over n_probes projected-gradient solves from uniform random starts; values are lower \
bounds on the true supremum. Thresholds: beta1 bounds D1, alpha1 bounds D2, alpha2 bounds D3; \
beta2 is the D3 offset of the min-max objective and is echoed only.";

/// Measures the three faithfulness quantities on `data` with deterministic
/// latents. `fine` is the candidate, `base` the reference model.
pub fn certify<S: Scalar>(
    fine: &ParamVector<S>,
    base: &ParamVector<S>,
    data: &WindowDataset,
    fcfg: &FaithfulConfig,
    cfg: &ModelConfig,
    n_probes: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<FaithfulnessReport> {
    if n_probes == 0 {
        return Err(Error::Config("certify needs n_probes >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Data(format!("{} split holds no windows", data.split)));
    }
    let x: Tensor<S> = data.inputs.cast();
    let reference = Reference::compute(fine, &x, cfg, None)?;
    let mask = perturbation_mask(fine.segments(), fcfg.scope);
    let root = RngStream::new(seed);

    let (mut d1a, mut d1d, mut d3) = (0.0f64, 0.0f64, 0.0f64);
    for probe in 0..n_probes {
        let mut rng = root.derive("probe", probe as u64);
        let start = Perturbation::uniform(&mask, fcfg.radius, &mut rng);
        let (delta, _) = pgd_adversary(&x, fine, start, fcfg, cfg, None)?;
        let mut tape = Tape::new();
        let dv = tape.constant(delta.as_tensor());
        let parts = adversarial_parts(&mut tape, fine, dv, &x, &reference, fcfg, cfg, None)?;
        let val = |n: Var| tape.value(n).data()[0].to_f64_lossy();
        d1a = d1a.max(val(parts.d1_approx));
        d1d = d1d.max(val(parts.d1_detail));
        d3 = d3.max(val(parts.d3));
    }

    let base_y = Reference::compute(base, &x, cfg, None)?.y_hat;
    let mut tape = Tape::new();
    let a = tape.constant(reference.y_hat.clone());
    let b = tape.constant(base_y);
    let d2n = distance(&mut tape, fcfg.d2, a, b)?;
    let d2 = tape.value(d2n).data()[0].to_f64_lossy();

    Ok(FaithfulnessReport {
        d1_approx: d1a,
        d1_detail: d1d,
        d2,
        d3,
        beta1: fcfg.beta1,
        alpha1: fcfg.alpha1,
        alpha2: fcfg.alpha2,
        beta2: fcfg.beta2,
        ib_similarity_ok: d1a <= fcfg.beta1 && d1d <= fcfg.beta1,
        forecast_closeness_ok: d2 <= fcfg.alpha1,
        forecast_stability_ok: d3 <= fcfg.alpha2,
        radius: fcfg.radius,
        pgd_step: fcfg.pgd_step,
        pgd_iters: fcfg.pgd_iters,
        n_probes,
        d1_kind: fcfg.d1,
        d2_kind: fcfg.d2,
        d3_kind: fcfg.d3,
        scope: fcfg.scope,
        seed,
        windows: data.len(),
        dataset_id: dataset_id.to_string(),
        note: CERTIFY_NOTE.to_string(),
    })
}
