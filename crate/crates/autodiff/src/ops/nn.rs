use crate::error::{Result, TensorError};
use crate::ops::elementwise::sigmoid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// Lower bound on the divisor in [`Tape::l2_normalize_channels`].
pub const L2_NORM_FLOOR: Real = 1e-12;

impl Tape {
    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let n = *self.shape(a).last().expect("non-empty shape");
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax_last", out, &[a], move |ctx| {
            let mut dx = ctx.grad.clone();
            for (d, y) in dx.data_mut().chunks_mut(n).zip(ctx.output.data().chunks(n)) {
                let dot: Real = d.iter().zip(y).map(|(g, y)| g * y).sum();
                for (d, y) in d.iter_mut().zip(y) {
                    *d = y * (*d - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Divides each channel vector of `x[B, C, ...]` by `max(‖x‖₂, 1e-12)`.
    pub fn l2_normalize_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("l2_normalize_channels", format!("{shape:?}")));
        }
        let (batch, channels) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let xv = self.value(x).data();
        let mut norms = vec![0.0; batch * inner];
        for b in 0..batch {
            for c in 0..channels {
                let row = &xv[(b * channels + c) * inner..(b * channels + c + 1) * inner];
                for (n, v) in norms[b * inner..(b + 1) * inner].iter_mut().zip(row) {
                    *n += v * v;
                }
            }
        }
        for n in &mut norms {
            *n = n.sqrt();
        }
        let mut out = self.value(x).clone();
        for b in 0..batch {
            for c in 0..channels {
                let start = (b * channels + c) * inner;
                for (v, n) in out.data_mut()[start..start + inner].iter_mut().zip(&norms[b * inner..]) {
                    *v /= n.max(L2_NORM_FLOOR);
                }
            }
        }
        self.push("l2_normalize_channels", out, &[x], move |ctx| {
            let (g, y) = (ctx.grad.data(), ctx.output.data());
            let mut dx = vec![0.0; g.len()];
            for b in 0..batch {
                for p in 0..inner {
                    let idx = |c: usize| (b * channels + c) * inner + p;
                    let n = norms[b * inner + p];
                    if n > L2_NORM_FLOOR {
                        let dot: Real = (0..channels).map(|c| g[idx(c)] * y[idx(c)]).sum();
                        for c in 0..channels {
                            dx[idx(c)] = (g[idx(c)] - y[idx(c)] * dot) / n;
                        }
                    } else {
                        for c in 0..channels {
                            dx[idx(c)] = g[idx(c)] / L2_NORM_FLOOR;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("l2 grad"))]
        })
    }

    /// Per-sample, per-channel standardization over the spatial axes of
    /// `x[B, C, ...]`, without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: Real) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(TensorError::shape("instance_norm", format!("{shape:?}")));
        }
        let inner: usize = shape[2..].iter().product();
        let count = inner as Real;
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(shape[0] * shape[1]);
        for row in out.data_mut().chunks_mut(inner) {
            let mean = row.iter().sum::<Real>() / count;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / count;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push("instance_norm", out, &[x], move |ctx| {
            let mut dx = ctx.grad.clone();
            for ((d, xhat), inv) in dx
                .data_mut()
                .chunks_mut(inner)
                .zip(ctx.output.data().chunks(inner))
                .zip(&inv_std)
            {
                let sum_g: Real = d.iter().sum();
                let sum_gx: Real = d.iter().zip(xhat).map(|(g, x)| g * x).sum();
                for (d, x) in d.iter_mut().zip(xhat) {
                    *d = inv / count * (count * *d - sum_g - x * sum_gx);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and constant
    /// `targets`, evaluated in the overflow-free logits form.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(TensorError::shape(
                "bce_with_logits_mean",
                format!("{:?} vs {:?}", self.shape(logits), targets.shape()),
            ));
        }
        let n = targets.len() as Real;
        let total: Real = self
            .value(logits)
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &z)| x.max(0.0) - x * z + (-x.abs()).exp().ln_1p())
            .sum();
        let targets = targets.clone();
        self.push("bce_with_logits_mean", Tensor::scalar(total / n), &[logits], move |ctx| {
            let scale = ctx.grad.item() / n;
            vec![Some(ctx.inputs[0].zip_map(&targets, |x, z| (sigmoid(x) - z) * scale))]
        })
    }
}
