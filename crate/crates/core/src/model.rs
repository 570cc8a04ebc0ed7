//! End-to-end forecaster: wavelet split, one bottleneck block per
//! coefficient stream, reconstruction, and a per-channel prediction head.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, ParamVector, ParamView, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::ifcb::{self, IbOutput, IfcbConfig};
use crate::scalar::Scalar;
use crate::wavelet::{self, WaveletBasis, WaveletCoeffs, WaveletKind};

/// Prefix of the approximation-stream block parameters.
pub const APPROX_BLOCK: &str = "ifcb_ca";
/// Prefix of the detail-stream block parameters.
pub const DETAIL_BLOCK: &str = "ifcb_cd";
pub const HEAD: &str = "head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub ifcb: IfcbConfig,
    /// Hidden widths of the head; empty means a single linear map.
    pub head_hidden: Vec<usize>,
    pub basis: WaveletKind,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 288,
            horizon: 144,
            channels: 8,
            ifcb: IfcbConfig::default(),
            head_hidden: Vec::new(),
            basis: WaveletKind::Haar,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.lookback < 2 || self.lookback % 2 != 0 {
            errors.push(format!(
                "model lookback must be even and >= 2, got {}",
                self.lookback
            ));
        }
        if self.horizon == 0 {
            errors.push("model horizon must be >= 1".into());
        }
        if self.channels == 0 {
            errors.push("model channels must be >= 1".into());
        }
        if self.head_hidden.iter().any(|&w| w == 0) {
            errors.push("head hidden widths must be positive".into());
        }
        self.ifcb.validate(errors);
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

    /// Flattened width of one coefficient stream per sample.
    pub fn coeff_width(&self) -> usize {
        self.lookback / 2 * self.channels
    }

    fn head_widths(&self) -> Vec<usize> {
        std::iter::once(self.lookback)
            .chain(self.head_hidden.iter().copied())
            .chain(std::iter::once(self.horizon))
            .collect()
    }
}

/// Ordered `(segment, shape)` list: approximation block, detail block, head.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let width = cfg.coeff_width();
    let mut out = ifcb::layout(APPROX_BLOCK, width, &cfg.ifcb);
    out.extend(ifcb::layout(DETAIL_BLOCK, width, &cfg.ifcb));
    for (i, w) in cfg.head_widths().windows(2).enumerate() {
        out.push((format!("{HEAD}{i}.w"), vec![w[0], w[1]]));
        out.push((format!("{HEAD}{i}.b"), vec![w[1]]));
    }
    out
}

/// Fresh parameters: every weight and bias uniform in `±1/sqrt(fan_in)`.
pub fn init_params<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamVector<S>> {
    cfg.checked()?;
    let mut pv = ParamVector::zeros(&param_layout(cfg))?;
    let root = RngStream::new(seed).derive("init", 0);
    let segments = pv.segments().to_vec();
    for (i, seg) in segments.iter().enumerate() {
        // weights [fan_in, fan_out]; a bias shares its weight's fan-in
        let fan_in = if seg.shape.len() == 2 {
            seg.shape[0]
        } else {
            segments[i - 1].shape[0]
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = root.derive(&seg.name, 0);
        for v in &mut pv.values_mut()[seg.range()] {
            *v = S::lit(rng.uniform(-bound, bound));
        }
    }
    Ok(pv)
}

/// Reparameterization draws for both blocks of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise<S> {
    pub approx: Tensor<S>,
    pub detail: Tensor<S>,
}

impl<S: Scalar> LatentNoise<S> {
    pub fn sample(cfg: &ModelConfig, batch: usize, rng: &mut RngStream) -> Self {
        let shape = [batch, cfg.ifcb.latent_dim];
        LatentNoise {
            approx: crate::diffcore::gaussian_sample(&shape, rng),
            detail: crate::diffcore::gaussian_sample(&shape, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForecastOutput<S> {
    /// `[batch, H, C]`.
    pub y_hat: Var,
    pub approx: IbOutput<S>,
    pub detail: IbOutput<S>,
    /// Reconstructed window `[batch, T, C]`.
    pub x_hat: Var,
    pub coeffs: WaveletCoeffs,
}

fn check_input<S: Scalar>(tape: &Tape<S>, x: Var, cfg: &ModelConfig) -> Result<usize> {
    let shape = tape.shape(x);
    if shape.len() != 3 || shape[1] != cfg.lookback || shape[2] != cfg.channels {
        return Err(Error::Config(format!(
            "model expects input [batch, {}, {}], got {shape:?}",
            cfg.lookback, cfg.channels
        )));
    }
    Ok(shape[0])
}

/// Maps each channel's length-T window to its length-H horizon.
fn head<S: Scalar>(
    tape: &mut Tape<S>,
    x_hat: Var,
    params: &ParamView<'_>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let batch = tape.shape(x_hat)[0];
    let (t, c, h) = (cfg.lookback, cfg.channels, cfg.horizon);
    let per_channel = tape.swap_last_two(x_hat)?;
    let rows = tape.reshape(per_channel, &[batch * c, t])?;
    let out = ifcb::mlp(tape, rows, params, HEAD, &cfg.head_widths(), cfg.activation)?;
    let out = tape.reshape(out, &[batch, c, h])?;
    tape.swap_last_two(out)
}

/// Full forward pass. `noise = None` runs both blocks on their posterior means.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    params: &ParamView<'_>,
    cfg: &ModelConfig,
    noise: Option<&LatentNoise<S>>,
) -> Result<ForecastOutput<S>> {
    check_input(tape, x, cfg)?;
    let basis = WaveletBasis::new(cfg.basis);
    let coeffs = wavelet::decompose(tape, x, &basis)?;
    let act = cfg.activation;
    let approx = ifcb::ifcb_forward(
        tape,
        coeffs.approx,
        params,
        APPROX_BLOCK,
        &cfg.ifcb,
        act,
        noise.map(|n| &n.approx),
    )?;
    let detail = ifcb::ifcb_forward(
        tape,
        coeffs.detail,
        params,
        DETAIL_BLOCK,
        &cfg.ifcb,
        act,
        noise.map(|n| &n.detail),
    )?;
    let filtered = WaveletCoeffs {
        approx: approx.filtered,
        detail: detail.filtered,
    };
    let x_hat = wavelet::reconstruct(tape, &filtered, &basis)?;
    let y_hat = head(tape, x_hat, params, cfg)?;
    Ok(ForecastOutput {
        y_hat,
        approx,
        detail,
        x_hat,
        coeffs,
    })
}

/// Forward pass with both blocks replaced by the identity on coefficients.
/// Returns `(x_hat, y_hat)`.
pub fn forward_bypassed<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    params: &ParamView<'_>,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    check_input(tape, x, cfg)?;
    let basis = WaveletBasis::new(cfg.basis);
    let coeffs = wavelet::decompose(tape, x, &basis)?;
    let x_hat = wavelet::reconstruct(tape, &coeffs, &basis)?;
    let y_hat = head(tape, x_hat, params, cfg)?;
    Ok((x_hat, y_hat))
}

/// Mean squared error over all elements.
pub fn mse<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "shape mismatch {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub regression: Var,
    pub bottleneck: Var,
}

/// `MSE(y_hat, y_true) + beta_ib · Σ_blocks (kl_fwd + kl_rev)`.
pub fn base_loss<S: Scalar>(
    tape: &mut Tape<S>,
    out: &ForecastOutput<S>,
    y_true: Var,
    cfg: &ModelConfig,
) -> Result<LossParts> {
    let regression = mse(tape, out.y_hat, y_true)?;
    let bottleneck = ifcb::ib_loss(tape, &[&out.approx, &out.detail], cfg.ifcb.beta_ib)?;
    let total = tape.add(regression, bottleneck)?;
    Ok(LossParts {
        total,
        regression,
        bottleneck,
    })
}

/// Deterministic forecasts `[K, H, C]` for `inputs: [K, T, C]`.
pub fn predict<S: Scalar>(params: &ParamVector<S>, inputs: &Tensor<S>, cfg: &ModelConfig) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let flat = tape.constant(params.as_tensor());
    let view = ParamView::new(flat, params.segments());
    let x = tape.constant(inputs.clone());
    let out = forward(&mut tape, x, &view, cfg, None)?;
    Ok(tape.value(out.y_hat).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_close, numeric_grad, uniform_tensor};

    pub(crate) fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            lookback: 8,
            horizon: 2,
            channels: 1,
            ifcb: IfcbConfig {
                latent_dim: 2,
                encoder_hidden: vec![4],
                decoder_hidden: vec![4],
                beta_ib: 0.5,
            },
            head_hidden: vec![],
            basis: WaveletKind::Haar,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn output_shape_contract() {
        for (batch, channels) in [(1, 1), (3, 2), (5, 3)] {
            let cfg = ModelConfig { channels, head_hidden: vec![3], ..tiny_cfg() };
            let pv: ParamVector<f64> = init_params(&cfg, 1).unwrap();
            let mut rng = RngStream::new(2);
            let x = uniform_tensor(&[batch, 8, channels], -1.0, 1.0, &mut rng);
            let y = predict(&pv, &x, &cfg).unwrap();
            assert_eq!(y.shape(), &[batch, 2, channels]);
        }
    }

    #[test]
    fn bypassed_blocks_reconstruct_input_exactly() {
        let cfg = ModelConfig { channels: 2, ..tiny_cfg() };
        let pv: ParamVector<f64> = init_params(&cfg, 3).unwrap();
        let mut rng = RngStream::new(4);
        let x0 = uniform_tensor(&[3, 8, 2], -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let flat = tape.constant(pv.as_tensor());
        let view = ParamView::new(flat, pv.segments());
        let x = tape.constant(x0.clone());
        let (x_hat, _) = forward_bypassed(&mut tape, x, &view, &cfg).unwrap();
        assert!(tape.value(x_hat).max_abs_diff(&x0) <= 1e-12);
    }

    #[test]
    fn head_is_per_channel() {
        // channel 1 of the forecast depends only on channel 1 of the window
        let cfg = ModelConfig { channels: 2, ..tiny_cfg() };
        let pv: ParamVector<f64> = init_params(&cfg, 5).unwrap();
        let mut rng = RngStream::new(6);
        let x0 = uniform_tensor(&[1, 8, 2], -2.0, 2.0, &mut rng);
        let mut x1 = x0.clone();
        for t in 0..8 {
            x1.data_mut()[t * 2] += 1.0;
        }
        let run = |x: &Tensor<f64>| {
            let mut tape = Tape::new();
            let flat = tape.constant(pv.as_tensor());
            let view = ParamView::new(flat, pv.segments());
            let xv = tape.constant(x.clone());
            let (_, y) = forward_bypassed(&mut tape, xv, &view, &cfg).unwrap();
            tape.value(y).clone()
        };
        let (y0, y1) = (run(&x0), run(&x1));
        for h in 0..2 {
            assert_ne!(y0.data()[h * 2], y1.data()[h * 2]);
            assert_eq!(y0.data()[h * 2 + 1], y1.data()[h * 2 + 1]);
        }
    }

    #[test]
    fn same_noise_same_forecast() {
        let cfg = tiny_cfg();
        let pv: ParamVector<f64> = init_params(&cfg, 7).unwrap();
        let run = || {
            let mut rng = RngStream::new(8);
            let x0 = uniform_tensor(&[4, 8, 1], -2.0, 2.0, &mut rng);
            let noise = LatentNoise::sample(&cfg, 4, &mut rng);
            let mut tape = Tape::new();
            let flat = tape.constant(pv.as_tensor());
            let view = ParamView::new(flat, pv.segments());
            let x = tape.constant(x0);
            let out = forward(&mut tape, x, &view, &cfg, Some(&noise)).unwrap();
            tape.value(out.y_hat).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_input_shape_is_config_error() {
        let cfg = tiny_cfg();
        let pv: ParamVector<f64> = init_params(&cfg, 1).unwrap();
        let x = Tensor::zeros(&[2, 6, 1]);
        assert!(matches!(predict(&pv, &x, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn odd_lookback_rejected_at_validation() {
        let cfg = ModelConfig { lookback: 7, ..tiny_cfg() };
        assert!(matches!(init_params::<f64>(&cfg, 0), Err(Error::Config(_))));
    }

    fn loss_parts(pv: &ParamVector<f64>, cfg: &ModelConfig, x: &Tensor<f64>, y: &Tensor<f64>, noise: &LatentNoise<f64>) -> (f64, f64, f64) {
        let mut tape = Tape::new();
        let flat = tape.constant(pv.as_tensor());
        let view = ParamView::new(flat, pv.segments());
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let out = forward(&mut tape, xv, &view, cfg, Some(noise)).unwrap();
        let parts = base_loss(&mut tape, &out, yv, cfg).unwrap();
        (
            tape.value(parts.total).item().unwrap(),
            tape.value(parts.regression).item().unwrap(),
            tape.value(parts.bottleneck).item().unwrap(),
        )
    }

    #[test]
    fn base_loss_examples() {
        let cfg = ModelConfig { ifcb: IfcbConfig { beta_ib: 0.0, ..tiny_cfg().ifcb }, ..tiny_cfg() };
        let pv: ParamVector<f64> = init_params(&cfg, 9).unwrap();
        let mut rng = RngStream::new(10);
        let x = uniform_tensor(&[3, 8, 1], -1.0, 1.0, &mut rng);
        let y_hat = predict(&pv, &x, &cfg).unwrap();
        let noise = LatentNoise { approx: Tensor::zeros(&[3, 2]), detail: Tensor::zeros(&[3, 2]) };
        let (total, _, _) = loss_parts(&pv, &cfg, &x, &y_hat, &noise);
        assert_eq!(total, 0.0);
        let shifted = y_hat.map(|v| v - 1.0);
        let (total, _, _) = loss_parts(&pv, &cfg, &x, &shifted, &noise);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_loss_equals_independent_parts() {
        let cfg = tiny_cfg();
        let pv: ParamVector<f64> = init_params(&cfg, 11).unwrap();
        let mut rng = RngStream::new(12);
        let x = uniform_tensor(&[4, 8, 1], -1.0, 1.0, &mut rng);
        let y = uniform_tensor(&[4, 2, 1], -1.0, 1.0, &mut rng);
        let noise = LatentNoise::sample(&cfg, 4, &mut rng);
        let (total, _, _) = loss_parts(&pv, &cfg, &x, &y, &noise);

        // recompute each term from raw forward values with plain arithmetic
        let mut tape = Tape::new();
        let flat = tape.constant(pv.as_tensor());
        let view = ParamView::new(flat, pv.segments());
        let xv = tape.constant(x.clone());
        let out = forward(&mut tape, xv, &view, &cfg, Some(&noise)).unwrap();
        let y_hat = tape.value(out.y_hat).data();
        let mse = y_hat.iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 8.0;
        let mut kl = 0.0;
        for block in [&out.approx, &out.detail] {
            let mu = tape.value(block.mu).data();
            let lv = tape.value(block.log_var).data();
            let mut fwd = 0.0;
            let mut rev = 0.0;
            for (m, l) in mu.iter().zip(lv) {
                fwd += 0.5 * (l.exp() + m * m - 1.0 - l);
                rev += 0.5 * ((-l).exp() * (1.0 + m * m) - 1.0 + l);
            }
            kl += (fwd + rev) / 4.0;
        }
        let expected = mse + cfg.ifcb.beta_ib * kl;
        assert!((total - expected).abs() <= 1e-12, "{total} vs {expected}");
    }

    #[test]
    fn y_shape_mismatch_is_dimension_error() {
        let cfg = tiny_cfg();
        let pv: ParamVector<f64> = init_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let flat = tape.constant(pv.as_tensor());
        let view = ParamView::new(flat, pv.segments());
        let x = tape.constant(Tensor::zeros(&[2, 8, 1]));
        let y = tape.constant(Tensor::zeros(&[2, 3, 1]));
        let out = forward(&mut tape, x, &view, &cfg, None).unwrap();
        assert!(matches!(base_loss(&mut tape, &out, y, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn end_to_end_gradient_every_segment() {
        let cfg = ModelConfig { head_hidden: vec![3], ..tiny_cfg() };
        let pv: ParamVector<f64> = init_params(&cfg, 13).unwrap();
        let mut rng = RngStream::new(14);
        let x = uniform_tensor(&[3, 8, 1], -1.0, 1.0, &mut rng);
        let y = uniform_tensor(&[3, 2, 1], -1.0, 1.0, &mut rng);
        let noise = LatentNoise::sample(&cfg, 3, &mut rng);
        let loss = |tape: &mut Tape<f64>, flat: Var| {
            let view = ParamView::new(flat, pv.segments());
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let out = forward(tape, xv, &view, &cfg, Some(&noise)).unwrap();
            base_loss(tape, &out, yv, &cfg).unwrap().total
        };
        let mut tape = Tape::new();
        let flat = tape.param(pv.as_tensor());
        let l = loss(&mut tape, flat);
        tape.backward(l).unwrap();
        let analytic = tape.grad(flat).unwrap().to_f64_vec();
        let numeric = numeric_grad(pv.values(), 1e-5, |p| {
            let mut tape = Tape::new();
            let flat = tape.constant(Tensor::vector(p.to_vec()));
            let l = loss(&mut tape, flat);
            tape.value(l).item().unwrap()
        });
        for seg in pv.segments() {
            assert_grad_close(&analytic[seg.range()], &numeric[seg.range()], 1e-4);
        }
    }
}
