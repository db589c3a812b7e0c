//! Segmentation, alignment and heatmap losses and their weighted sum.

use std::fmt;

use lesionseg_autodiff::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const DICE_SMOOTH: Real = 1e-5;
pub const HEAT_CLAMP: Real = 1e-6;

/// Block max-pooling of a binary `D×H×W` mask: an output voxel is 1 iff
/// any source voxel of its block is 1.
pub fn downsample_mask(mask: &[u8], extents: [usize; 3], target: [usize; 3]) -> Result<Vec<u8>> {
    if mask.len() != extents.iter().product::<usize>() {
        return Err(Error::Invalid(format!("mask length {} does not match {extents:?}", mask.len())));
    }
    if (0..3).any(|a| target[a] == 0 || extents[a] % target[a] != 0) {
        return Err(Error::Invalid(format!(
            "mask extents {extents:?} are not an integer multiple of {target:?}"
        )));
    }
    let f: [usize; 3] = std::array::from_fn(|a| extents[a] / target[a]);
    let mut out = vec![0u8; target.iter().product()];
    for z in 0..extents[0] {
        for y in 0..extents[1] {
            for x in 0..extents[2] {
                if mask[(z * extents[1] + y) * extents[2] + x] != 0 {
                    out[((z / f[0]) * target[1] + y / f[1]) * target[2] + x / f[2]] = 1;
                }
            }
        }
    }
    Ok(out)
}

/// [`downsample_mask`] for every item of a `[B, 1, D, H, W]` 0/1 tensor.
pub fn downsample_mask_batch(mask: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    let [b, c, d, h, w] = mask.dims5("downsample_mask")?;
    let n = d * h * w;
    let mut out = Vec::with_capacity(b * c * target.iter().product::<usize>());
    for item in mask.data().chunks(n) {
        let bytes: Vec<u8> = item.iter().map(|&v| u8::from(v != 0.0)).collect();
        out.extend(downsample_mask(&bytes, [d, h, w], target)?.into_iter().map(Real::from));
    }
    Ok(Tensor::new(vec![b, c, target[0], target[1], target[2]], out)?)
}

fn check_same(tape: &Tape, s: Var, m: &Tensor, op: &str) -> Result<()> {
    if tape.shape(s) != m.shape() {
        return Err(Error::Invalid(format!(
            "{op}: heatmap {:?} vs mask {:?}",
            tape.shape(s),
            m.shape()
        )));
    }
    Ok(())
}

/// `1 − Σ s·M / (Σ M + eps)`.
pub fn align_loss(tape: &mut Tape, s: Var, mask: &Tensor, eps: Real) -> Result<Var> {
    check_same(tape, s, mask, "align_loss")?;
    if !(eps > 0.0) {
        return Err(Error::config("loss.align_eps must be > 0"));
    }
    let area = mask.sum() + eps;
    let m = tape.constant(mask.clone());
    let sm = tape.mul(s, m)?;
    let num = tape.sum(sm)?;
    let frac = tape.scale(num, 1.0 / area)?;
    Ok(tape.one_minus(frac)?)
}

/// Voxel-mean binary cross-entropy of `clamp(s, 1e-6, 1 − 1e-6)` against `M`.
pub fn heat_loss(tape: &mut Tape, s: Var, mask: &Tensor) -> Result<Var> {
    check_same(tape, s, mask, "heat_loss")?;
    let sc = tape.clamp(s, HEAT_CLAMP, 1.0 - HEAT_CLAMP)?;
    let ln_s = tape.ln(sc)?;
    let rest = tape.one_minus(sc)?;
    let ln_rest = tape.ln(rest)?;
    let m = tape.constant(mask.clone());
    let inv = tape.constant(mask.map(|v| 1.0 - v));
    let pos = tape.mul(ln_s, m)?;
    let neg = tape.mul(ln_rest, inv)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// `0.5·(1 − soft Dice) + 0.5·BCE-with-logits`, Dice taken over the whole batch.
pub fn seg_loss(tape: &mut Tape, logits: Var, mask: &Tensor) -> Result<Var> {
    check_same(tape, logits, mask, "seg_loss")?;
    let p = tape.sigmoid(logits)?;
    let m = tape.constant(mask.clone());
    let pm = tape.mul(p, m)?;
    let inter = tape.sum(pm)?;
    let num = tape.scale(inter, 2.0)?;
    let num = tape.add_scalar(num, DICE_SMOOTH)?;
    let sp = tape.sum(p)?;
    let den = tape.add_scalar(sp, mask.sum() + DICE_SMOOTH)?;
    let dice = tape.div(num, den)?;
    let dice_loss = tape.one_minus(dice)?;
    let bce = tape.bce_with_logits_mean(logits, mask)?;
    let a = tape.scale(dice_loss, 0.5)?;
    let b = tape.scale(bce, 0.5)?;
    Ok(tape.add(a, b)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub seg: Real,
    pub align: Real,
    pub heat: Real,
    pub total: Real,
    pub lambda_align: Real,
    pub lambda_heat: Real,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seg={} align={} heat={} total={} (λ_align={}, λ_heat={})",
            self.seg, self.align, self.heat, self.total, self.lambda_align, self.lambda_heat
        )
    }
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.seg, self.align, self.heat, self.total].iter().all(|v| v.is_finite())
    }
}

/// `total = seg + λ_align·align + λ_heat·heat`. A term whose weight is 0 is
/// left off the graph, so it contributes no gradient and `total` is then
/// the very `seg` node.
pub fn composite(
    tape: &mut Tape,
    seg: Var,
    align: Var,
    heat: Var,
    lambda_align: Real,
    lambda_heat: Real,
) -> Result<(Var, LossBreakdown)> {
    if lambda_align < 0.0 || lambda_heat < 0.0 {
        return Err(Error::Invalid("loss weights must be ≥ 0".into()));
    }
    let mut total = seg;
    if lambda_align > 0.0 {
        let t = tape.scale(align, lambda_align)?;
        total = tape.add(total, t)?;
    }
    if lambda_heat > 0.0 {
        let t = tape.scale(heat, lambda_heat)?;
        total = tape.add(total, t)?;
    }
    let breakdown = LossBreakdown {
        seg: tape.value(seg).item(),
        align: tape.value(align).item(),
        heat: tape.value(heat).item(),
        total: tape.value(total).item(),
        lambda_align,
        lambda_heat,
    };
    Ok((total, breakdown))
}
