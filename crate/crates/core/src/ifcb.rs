//! Information filtering and compression block: a Gaussian variational
//! encoder, a reparameterized latent, a decoder back to coefficient space,
//! and the two closed-form KL penalties of the bottleneck loss.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, ParamView, ReduceKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfcbConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Weight of the KL terms in the training loss.
    pub beta_ib: f64,
}

impl Default for IfcbConfig {
    fn default() -> Self {
        IfcbConfig {
            latent_dim: 16,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            beta_ib: 1e-3,
        }
    }
}

impl IfcbConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.latent_dim == 0 {
            errors.push("ifcb latent_dim must be >= 1".into());
        }
        if !(self.beta_ib >= 0.0) {
            errors.push(format!("ifcb beta_ib must be >= 0, got {}", self.beta_ib));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            errors.push("ifcb hidden widths must be positive".into());
        }
    }
}

/// Widths of every linear layer of an MLP, input first.
fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

fn mlp_layout(prefix: &str, widths: &[usize], out: &mut Vec<(String, Vec<usize>)>) {
    for (i, w) in widths.windows(2).enumerate() {
        out.push((format!("{prefix}{i}.w"), vec![w[0], w[1]]));
        out.push((format!("{prefix}{i}.b"), vec![w[1]]));
    }
}

/// Parameter segments of one block whose coefficients flatten to `input_width`.
pub fn layout(prefix: &str, input_width: usize, cfg: &IfcbConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let enc = widths(input_width, &cfg.encoder_hidden, 2 * cfg.latent_dim);
    let dec = widths(cfg.latent_dim, &cfg.decoder_hidden, input_width);
    mlp_layout(&format!("{prefix}.enc"), &enc, &mut out);
    mlp_layout(&format!("{prefix}.dec"), &dec, &mut out);
    out
}

/// Linear layers with `act` between them (none after the last).
pub(crate) fn mlp<S: Scalar>(
    tape: &mut Tape<S>,
    input: Var,
    params: &ParamView<'_>,
    prefix: &str,
    widths: &[usize],
    act: Activation,
) -> Result<Var> {
    let mut h = input;
    let layers = widths.len() - 1;
    for (i, w) in widths.windows(2).enumerate() {
        let weight = params.get(tape, &format!("{prefix}{i}.w"), &[w[0], w[1]])?;
        let bias = params.get(tape, &format!("{prefix}{i}.b"), &[w[1]])?;
        h = tape.linear(h, weight, bias)?;
        if i + 1 < layers {
            h = tape.activation(act, h);
        }
    }
    Ok(h)
}

/// Result of one block application.
#[derive(Debug, Clone)]
pub struct IbOutput<S> {
    /// Filtered coefficients, same shape as the block input.
    pub filtered: Var,
    /// Raw encoder output `[batch, 2 * latent]`: means then log-variances.
    pub stats: Var,
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    /// Standard-normal draw used for `z`; `None` in deterministic mode.
    pub eps: Option<Tensor<S>>,
}

/// Encodes `coeffs: [batch, K, C]`, samples the latent and decodes it back.
///
/// With `eps = None` the latent is the posterior mean (`z == mu`).
pub fn ifcb_forward<S: Scalar>(
    tape: &mut Tape<S>,
    coeffs: Var,
    params: &ParamView<'_>,
    prefix: &str,
    cfg: &IfcbConfig,
    act: Activation,
    eps: Option<&Tensor<S>>,
) -> Result<IbOutput<S>> {
    let shape = tape.shape(coeffs).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "block input must be [batch, K, C], got {shape:?}"
        )));
    }
    let batch = shape[0];
    let width = shape[1] * shape[2];
    let latent = cfg.latent_dim;

    let flat = tape.reshape(coeffs, &[batch, width])?;
    let enc = widths(width, &cfg.encoder_hidden, 2 * latent);
    let stats = mlp(tape, flat, params, &format!("{prefix}.enc"), &enc, act)?;
    let mu = tape.narrow_last(stats, 0, latent)?;
    let log_var = tape.narrow_last(stats, latent, latent)?;

    let z = match eps {
        None => mu,
        Some(e) => {
            if e.shape() != [batch, latent] {
                return Err(Error::Dimension(format!(
                    "latent noise has shape {:?}, expected {:?}",
                    e.shape(),
                    [batch, latent]
                )));
            }
            let half = tape.scale(log_var, S::lit(0.5));
            let sigma = tape.exp(half);
            let noise = tape.constant(e.clone());
            let spread = tape.mul(sigma, noise)?;
            tape.add(mu, spread)?
        }
    };

    let dec = widths(latent, &cfg.decoder_hidden, width);
    let out = mlp(tape, z, params, &format!("{prefix}.dec"), &dec, act)?;
    let filtered = tape.reshape(out, &shape)?;
    Ok(IbOutput {
        filtered,
        stats,
        mu,
        log_var,
        z,
        eps: eps.cloned(),
    })
}

/// Closed-form diagonal-Gaussian KL terms, summed over latent dimensions and
/// averaged over the batch:
///
/// * forward: `KL[N(mu, exp(log_var)) || N(0, I)] = ½ Σ (exp(lv) + mu² − 1 − lv)`
/// * reverse: `KL[N(0, I) || N(mu, exp(log_var))] = ½ Σ (exp(−lv)(1 + mu²) − 1 + lv)`
pub fn kl_terms<S: Scalar>(tape: &mut Tape<S>, mu: Var, log_var: Var) -> Result<(Var, Var)> {
    let (sm, sl) = (tape.shape(mu), tape.shape(log_var));
    if sm != sl || sm.len() != 2 {
        return Err(Error::Dimension(format!(
            "kl_terms needs matching [batch, latent] shapes, got {sm:?} and {sl:?}"
        )));
    }
    let half = S::lit(0.5);
    let mu_sq = tape.square(mu);

    let var = tape.exp(log_var);
    let fwd = tape.add(var, mu_sq)?;
    let fwd = tape.sub(fwd, log_var)?;
    let fwd = tape.offset(fwd, -S::one());
    let fwd = tape.reduce(ReduceKind::Sum, fwd, &[1])?;
    let fwd = tape.mean(fwd);
    let fwd = tape.scale(fwd, half);

    let neg = tape.scale(log_var, -S::one());
    let precision = tape.exp(neg);
    let spread = tape.offset(mu_sq, S::one());
    let rev = tape.mul(precision, spread)?;
    let rev = tape.add(rev, log_var)?;
    let rev = tape.offset(rev, -S::one());
    let rev = tape.reduce(ReduceKind::Sum, rev, &[1])?;
    let rev = tape.mean(rev);
    let rev = tape.scale(rev, half);
    Ok((fwd, rev))
}

/// `beta_ib · Σ_blocks (kl_fwd + kl_rev)`.
pub fn ib_loss<S: Scalar>(tape: &mut Tape<S>, outputs: &[&IbOutput<S>], beta_ib: f64) -> Result<Var> {
    let Some((first, rest)) = outputs.split_first() else {
        return Err(Error::Contract("ib_loss needs at least one block output".into()));
    };
    let block = |tape: &mut Tape<S>, o: &IbOutput<S>| -> Result<Var> {
        let (f, r) = kl_terms(tape, o.mu, o.log_var)?;
        tape.add(f, r)
    };
    let mut total = block(tape, first)?;
    for o in rest {
        let b = block(tape, o)?;
        total = tape.add(total, b)?;
    }
    Ok(tape.scale(total, S::lit(beta_ib)))
}
