//! Text-conditioned cross-attention refiner with a tanh gate and
//! confidence-gated blending.
//!
//! Image tokens of the top decoder level attend to `m` key/value tokens
//! expanded from the text embedding. The attended features are projected
//! back to `F`'s width, added under the gate `tanh(γ)`, and passed through
//! the shared segmentation head. The refined logits replace the base logits
//! only where `σ(y_base) > τ`, and only by a fraction `α`.

use lesionseg_autodiff::{sigmoid, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::backbone::Backbone;
use crate::config::RefinerConfig;
use crate::error::{Error, Result};
use crate::guidance::TextEmbedding;
use crate::params::{self, Bound, ParamStore};

pub const PREFIX: &str = "refiner/";
pub const Q_WEIGHT: &str = "refiner/q.weight";
pub const K_WEIGHT: &str = "refiner/k.weight";
pub const K_BIAS: &str = "refiner/k.bias";
pub const V_WEIGHT: &str = "refiner/v.weight";
pub const V_BIAS: &str = "refiner/v.bias";
pub const O_WEIGHT: &str = "refiner/o.weight";
pub const GATE: &str = "refiner/gate";

pub fn is_refiner_param(name: &str) -> bool {
    name.starts_with(PREFIX)
}

/// Adds refiner parameters to `store`; `γ` starts at `cfg.gate_init`.
pub fn init_params(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &RefinerConfig,
    channels: usize,
    text_dim: usize,
) -> Result<()> {
    cfg.validate()?;
    let (dh, m) = (cfg.hidden, cfg.text_tokens);
    store.insert(Q_WEIGHT, params::conv_kernel(rng, dh, channels, 1));
    store.insert(K_WEIGHT, params::he_uniform(rng, &[text_dim, m * dh], text_dim));
    store.insert(K_BIAS, Tensor::zeros([m * dh])?);
    store.insert(V_WEIGHT, params::he_uniform(rng, &[text_dim, m * dh], text_dim));
    store.insert(V_BIAS, Tensor::zeros([m * dh])?);
    store.insert(O_WEIGHT, params::conv_kernel(rng, channels, dh, 1));
    store.insert(GATE, Tensor::full([1], cfg.gate_init as Real)?);
    Ok(())
}

/// Multi-head cross-attention outputs.
pub struct Attention {
    /// Concatenated head outputs before the output projection, `[B, d_h, D, H, W]`.
    pub attended: Var,
    /// Output projection of `attended`, shaped like `F`.
    pub delta: Var,
}

fn tile(tape: &mut Tape, x: Var, times: usize) -> Result<Var> {
    if times == 1 {
        return Ok(x);
    }
    Ok(tape.concat(&vec![x; times], 0)?)
}

/// Text tokens: `t̃ W + b`, split into `m` tokens of width `d_h`, laid out
/// as `[heads, m, d_h / heads]`.
fn text_tokens(tape: &mut Tape, bound: &Bound, cfg: &RefinerConfig, t: Var, w: &str, b: &str) -> Result<Var> {
    let (m, h, dk) = (cfg.text_tokens, cfg.heads, cfg.head_dim());
    let proj = tape.matmul(t, bound.get(w)?)?;
    let proj = tape.add_last(proj, bound.get(b)?)?;
    let tokens = tape.reshape(proj, &[m, h, dk])?;
    Ok(tape.permute(tokens, &[1, 0, 2])?)
}

pub fn cross_attend(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &RefinerConfig,
    features: Var,
    text: &TextEmbedding,
) -> Result<Attention> {
    cfg.validate()?;
    let shape = tape.shape(features).to_vec();
    let [b, _, d, hh, w]: [usize; 5] = shape
        .clone()
        .try_into()
        .map_err(|_| Error::Invalid(format!("refiner input {shape:?} is not 5-D")))?;
    let tokens = d * hh * w;
    let (heads, dk, dh) = (cfg.heads, cfg.head_dim(), cfg.hidden);

    let q = tape.conv3d(features, bound.get(Q_WEIGHT)?, [1; 3], [0; 3])?;
    let q = tape.reshape(q, &[b, heads, dk, tokens])?;
    let q = tape.permute(q, &[0, 1, 3, 2])?;
    let q = tape.reshape(q, &[b * heads, tokens, dk])?;

    let t = tape.constant(text.as_tensor().reshape([1, text.dim()])?);
    let k = text_tokens(tape, bound, cfg, t, K_WEIGHT, K_BIAS)?;
    let k = tape.permute(k, &[0, 2, 1])?;
    let k = tile(tape, k, b)?;
    let v = text_tokens(tape, bound, cfg, t, V_WEIGHT, V_BIAS)?;
    let v = tile(tape, v, b)?;

    let scores = tape.bmm(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dk as Real).sqrt())?;
    let weights = tape.softmax_last(scores)?;
    let out = tape.bmm(weights, v)?;
    let out = tape.reshape(out, &[b, heads, tokens, dk])?;
    let out = tape.permute(out, &[0, 1, 3, 2])?;
    let attended = tape.reshape(out, &[b, dh, d, hh, w])?;
    let delta = tape.conv3d(attended, bound.get(O_WEIGHT)?, [1; 3], [0; 3])?;
    Ok(Attention { attended, delta })
}

/// `F' = F + tanh(γ)·Δ`.
pub fn gated_residual(tape: &mut Tape, features: Var, delta: Var, gamma: Var) -> Result<Var> {
    let g = tape.tanh(gamma)?;
    let scaled = tape.scale_by(delta, g)?;
    Ok(tape.add(features, scaled)?)
}

/// `1{σ(y_base) > τ}` from the values of `y_base`; carries no gradient.
pub fn confidence_mask(y_base: &Tensor, tau: Real) -> Tensor {
    y_base.map(|v| if sigmoid(v) > tau { 1.0 } else { 0.0 })
}

/// `y = y_base + α(y_ref − y_base)⊙M_conf`, with `y == y_base` verbatim
/// wherever `M_conf` is 0.
pub fn confidence_blend(tape: &mut Tape, y_base: Var, y_ref: Var, tau: Real, alpha: Real) -> Result<(Var, Tensor)> {
    if !(0.0..=1.0).contains(&alpha) || !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("blend needs α ∈ [0,1] and τ ∈ (0,1), got α={alpha}, τ={tau}")));
    }
    let mask = confidence_mask(tape.value(y_base), tau);
    let y = tape.masked_lerp(y_base, y_ref, &mask, alpha)?;
    Ok((y, mask))
}

pub struct RefineOutput {
    pub y_ref: Var,
    pub y: Var,
    pub m_conf: Tensor,
    /// ‖tanh(γ)·Δ‖₂ over the batch.
    pub delta_norm: Real,
}

/// Full refiner path from the top-level features and base logits.
pub fn refine(
    tape: &mut Tape,
    bound: &Bound,
    backbone: &Backbone,
    cfg: &RefinerConfig,
    features: Var,
    y_base: Var,
    text: &TextEmbedding,
) -> Result<RefineOutput> {
    let att = cross_attend(tape, bound, cfg, features, text)?;
    let gamma = bound.get(GATE)?;
    let refined = gated_residual(tape, features, att.delta, gamma)?;
    let g = tape.value(gamma).item().tanh();
    let delta_norm = g.abs() * tape.value(att.delta).data().iter().map(|v| v * v).sum::<Real>().sqrt();
    let y_ref = backbone.head(tape, bound, refined)?;
    let (y, m_conf) = confidence_blend(tape, y_base, y_ref, cfg.tau as Real, cfg.alpha as Real)?;
    Ok(RefineOutput {
        y_ref,
        y,
        m_conf,
        delta_norm,
    })
}
