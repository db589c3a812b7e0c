//! Multi-encoder U-Net.
//!
//! One encoder tower per modality (shared layout, separate weights), fusion
//! of the bottleneck towers by channel concatenation and a 1×1×1
//! projection, and a shared decoder. At every decoder level the upsampled
//! stream is concatenated with the skips of all towers and projected back
//! to the level width. A 1×1×1 head turns the top-level features `F` into
//! one logit channel.
//!
//! Every conv block is `conv3d 3×3×3 → instance norm → per-channel affine →
//! leaky ReLU(0.01)`. The convolution carries no bias because the norm
//! removes it.

use lesionseg_autodiff::{Real, Tape, Tensor, Var};
use rand::Rng;

use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::{self, Bound, ParamStore};

pub const NORM_EPS: Real = 1e-5;
pub const LEAKY_SLOPE: Real = 0.01;
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

fn enc_prefix(m: usize, l: usize, j: usize) -> String {
    format!("enc{m}/l{l}/block{j}")
}

fn dec_prefix(l: usize, part: &str) -> String {
    format!("dec/l{l}/{part}")
}

fn init_block(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, ci: usize, co: usize, bias: bool) {
    store.insert(format!("{prefix}.conv.weight"), params::conv_kernel(rng, co, ci, 3));
    store.insert(format!("{prefix}.norm.weight"), Tensor::ones([co]).expect("shape"));
    if bias {
        store.insert(format!("{prefix}.norm.bias"), Tensor::zeros([co]).expect("shape"));
    }
}

fn init_pointwise(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, ci: usize, co: usize, bias: bool) {
    store.insert(format!("{prefix}.weight"), params::conv_kernel(rng, co, ci, 1));
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros([co]).expect("shape"));
    }
}

/// Per-level skip features of every tower: `skips[level][modality]`.
pub type Skips = Vec<Vec<Var>>;

pub struct Backbone {
    pub cfg: BackboneConfig,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = &self.cfg;
        let levels = c.levels;
        for m in 0..c.modalities {
            for l in 0..levels {
                let ci = if l == 0 { 1 } else { c.channels(l - 1) };
                init_block(store, rng, &enc_prefix(m, l, 0), ci, c.channels(l), c.bias);
                init_block(store, rng, &enc_prefix(m, l, 1), c.channels(l), c.channels(l), c.bias);
            }
        }
        let cb = c.channels(levels - 1);
        init_pointwise(store, rng, "fuse", c.modalities * cb, cb, c.bias);
        for l in (0..levels - 1).rev() {
            let cl = c.channels(l);
            init_block(store, rng, &dec_prefix(l, "up"), c.channels(l + 1), cl, c.bias);
            init_pointwise(store, rng, &dec_prefix(l, "merge"), cl * (1 + c.modalities), cl, c.bias);
            init_block(store, rng, &dec_prefix(l, "block0"), cl, cl, c.bias);
            init_block(store, rng, &dec_prefix(l, "block1"), cl, cl, c.bias);
        }
        init_pointwise(store, rng, "head", c.channels(0), 1, true);
    }

    fn block(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let w = bound.get(&format!("{prefix}.conv.weight"))?;
        let y = tape.conv3d(x, w, [stride; 3], [1; 3])?;
        let y = tape.instance_norm(y, NORM_EPS)?;
        let g = bound.get(&format!("{prefix}.norm.weight"))?;
        let mut y = tape.mul_channel(y, g)?;
        if self.cfg.bias {
            let b = bound.get(&format!("{prefix}.norm.bias"))?;
            y = tape.add_channel(y, b)?;
        }
        Ok(tape.leaky_relu(y, LEAKY_SLOPE)?)
    }

    fn pointwise(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, bias: bool) -> Result<Var> {
        let w = bound.get(&format!("{prefix}.weight"))?;
        let y = tape.conv3d(x, w, [1; 3], [0; 3])?;
        if bias {
            let b = bound.get(&format!("{prefix}.bias"))?;
            return Ok(tape.add_channel(y, b)?);
        }
        Ok(y)
    }

    /// Runs every tower on its modality (`[B, 1, D, H, W]` each) and fuses
    /// the bottlenecks. Returns the skips of levels `0..levels-1` and the
    /// fused bottleneck `f`.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, inputs: &[Var]) -> Result<(Skips, Var)> {
        let c = &self.cfg;
        if inputs.len() != c.modalities {
            return Err(Error::Invalid(format!(
                "backbone expects {} modalities, got {}",
                c.modalities,
                inputs.len()
            )));
        }
        for &x in inputs {
            let shape = tape.shape(x);
            if shape.len() != 5 || shape[1] != 1 || shape[2..] != c.input_extents {
                return Err(Error::Invalid(format!(
                    "modality input {shape:?} does not match [B, 1, {:?}]",
                    c.input_extents
                )));
            }
        }
        let mut skips: Skips = vec![Vec::with_capacity(c.modalities); c.levels - 1];
        let mut bottlenecks = Vec::with_capacity(c.modalities);
        for (m, &x) in inputs.iter().enumerate() {
            let mut h = x;
            for l in 0..c.levels {
                let stride = if l == 0 { 1 } else { 2 };
                h = self.block(tape, bound, &enc_prefix(m, l, 0), h, stride)?;
                h = self.block(tape, bound, &enc_prefix(m, l, 1), h, 1)?;
                if l + 1 < c.levels {
                    skips[l].push(h);
                }
            }
            bottlenecks.push(h);
        }
        let cat = tape.concat(&bottlenecks, 1)?;
        let f = self.pointwise(tape, bound, "fuse", cat, c.bias)?;
        Ok((skips, f))
    }

    /// Decodes to the top-level features `F` (`[B, c0, D, H, W]`).
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, skips: &Skips, f: Var) -> Result<Var> {
        let c = &self.cfg;
        if skips.len() != c.levels - 1 || skips.iter().any(|s| s.len() != c.modalities) {
            return Err(Error::Invalid("skip pyramid does not match the configuration".into()));
        }
        let mut h = f;
        for l in (0..c.levels - 1).rev() {
            let up = tape.resize_trilinear(h, c.extents_at(l))?;
            let up = self.block(tape, bound, &dec_prefix(l, "up"), up, 1)?;
            let mut parts = vec![up];
            parts.extend_from_slice(&skips[l]);
            let cat = tape.concat(&parts, 1)?;
            h = self.pointwise(tape, bound, &dec_prefix(l, "merge"), cat, c.bias)?;
            h = self.block(tape, bound, &dec_prefix(l, "block0"), h, 1)?;
            h = self.block(tape, bound, &dec_prefix(l, "block1"), h, 1)?;
        }
        Ok(h)
    }

    /// Segmentation head: `[B, c0, ...]` features to `[B, 1, ...]` logits.
    pub fn head(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
        self.pointwise(tape, bound, "head", features, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_extents() {
        let c = BackboneConfig::default();
        assert_eq!(c.bottleneck_extents(), [4, 8, 8]);
    }
}
