//! Trilinear resampling with half-pixel centers.
//!
//! Output voxel `o` on an axis of `n_in → n_out` samples the source at
//! `(o + 0.5)·n_in/n_out − 0.5`, clamped to `[0, n_in − 1]`. Equal extents
//! give the identity and constants are preserved at any size.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// Per output index: lower source index, upper source index, upper weight.
#[derive(Clone, Debug)]
struct AxisTaps(Vec<(usize, usize, Real)>);

impl AxisTaps {
    fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as Real / n_out as Real;
        let taps = (0..n_out)
            .map(|o| {
                let src = ((o as Real + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as Real);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as Real)
            })
            .collect();
        Self(taps)
    }
}

/// Source coordinate sampled by output index `o` (exposed for oracles).
pub fn half_pixel_source(o: usize, n_in: usize, n_out: usize) -> Real {
    ((o as Real + 0.5) * n_in as Real / n_out as Real - 0.5).clamp(0.0, (n_in - 1) as Real)
}

impl Tape {
    pub fn resize_trilinear(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        let [batch, ch, d, h, w] = self.value(x).dims5("resize_trilinear")?;
        if target.contains(&0) {
            return Err(TensorError::invalid(
                "resize_trilinear",
                format!("target extents must be positive, got {target:?}"),
            ));
        }
        let [td, th, tw] = target;
        let taps = [AxisTaps::new(d, td), AxisTaps::new(h, th), AxisTaps::new(w, tw)];
        let (in_plane, out_plane) = (d * h * w, td * th * tw);
        let src = self.value(x).data();
        let mut out = vec![0.0; batch * ch * out_plane];
        for plane in 0..batch * ch {
            let s = &src[plane * in_plane..(plane + 1) * in_plane];
            let o = &mut out[plane * out_plane..(plane + 1) * out_plane];
            let mut idx = 0;
            for &(z0, z1, wz) in &taps[0].0 {
                for &(y0, y1, wy) in &taps[1].0 {
                    for &(x0, x1, wx) in &taps[2].0 {
                        let at = |z: usize, y: usize, xx: usize| s[(z * h + y) * w + xx];
                        let c00 = at(z0, y0, x0) * (1.0 - wx) + at(z0, y0, x1) * wx;
                        let c01 = at(z0, y1, x0) * (1.0 - wx) + at(z0, y1, x1) * wx;
                        let c10 = at(z1, y0, x0) * (1.0 - wx) + at(z1, y0, x1) * wx;
                        let c11 = at(z1, y1, x0) * (1.0 - wx) + at(z1, y1, x1) * wx;
                        let c0 = c00 * (1.0 - wy) + c01 * wy;
                        let c1 = c10 * (1.0 - wy) + c11 * wy;
                        o[idx] = c0 * (1.0 - wz) + c1 * wz;
                        idx += 1;
                    }
                }
            }
        }
        let value = Tensor::new([batch, ch, td, th, tw], out)?;
        let in_shape = [batch, ch, d, h, w];
        self.push("resize_trilinear", value, &[x], move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![0.0; batch * ch * in_plane];
            for plane in 0..batch * ch {
                let gp = &g[plane * out_plane..(plane + 1) * out_plane];
                let dp = &mut dx[plane * in_plane..(plane + 1) * in_plane];
                let mut idx = 0;
                for &(z0, z1, wz) in &taps[0].0 {
                    for &(y0, y1, wy) in &taps[1].0 {
                        for &(x0, x1, wx) in &taps[2].0 {
                            let gv = gp[idx];
                            idx += 1;
                            for (z, fz) in [(z0, 1.0 - wz), (z1, wz)] {
                                for (y, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                                    let row = (z * h + y) * w;
                                    dp[row + x0] += gv * fz * fy * (1.0 - wx);
                                    dp[row + x1] += gv * fz * fy * wx;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(in_shape, dx).expect("resize dx"))]
        })
    }
}
