use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(TensorError::shape(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

/// Stable logistic function.
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, &[a, b], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y)),
                ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "div", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push("div", out, &[a, b], |ctx| {
            let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
            let db = ctx.needs[1].then(|| {
                let mut d = ctx.grad.zip_map(x, |g, x| -g * x);
                for (d, y) in d.data_mut().iter_mut().zip(y.data()) {
                    *d /= y * y;
                }
                d
            });
            vec![ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, y| g / y)), db]
        })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: Real) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, &[a], move |ctx| {
            vec![Some(ctx.grad.map(|g| g * factor))]
        })
    }

    /// `a + alpha·(b − a)` where `gate` is nonzero and `a` verbatim elsewhere.
    /// `gate` is data: no gradient flows into it.
    pub fn masked_lerp(&mut self, a: Var, b: Var, gate: &Tensor, alpha: Real) -> Result<Var> {
        same_shape(self, "masked_lerp", a, b)?;
        if gate.shape() != self.shape(a) {
            return Err(TensorError::shape(
                "masked_lerp",
                format!("gate {:?} vs input {:?}", gate.shape(), self.shape(a)),
            ));
        }
        let on: Vec<bool> = gate.data().iter().map(|&g| g != 0.0).collect();
        let mut out = self.value(a).clone();
        for ((o, &b), &on) in out.data_mut().iter_mut().zip(self.value(b).data()).zip(&on) {
            if on {
                *o += alpha * (b - *o);
            }
        }
        self.push("masked_lerp", out, &[a, b], move |ctx| {
            let pick = |w_on: Real, w_off: Real| {
                let mut d = ctx.grad.clone();
                for (d, &on) in d.data_mut().iter_mut().zip(&on) {
                    *d *= if on { w_on } else { w_off };
                }
                d
            };
            vec![
                ctx.needs[0].then(|| pick(1.0 - alpha, 1.0)),
                ctx.needs[1].then(|| pick(alpha, 0.0)),
            ]
        })
    }

    /// Multiplies every element of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(TensorError::shape("scale_by", format!("factor {:?} is not a scalar", self.shape(s))));
        }
        let factor = self.value(s).item();
        let out = self.value(a).map(|x| x * factor);
        self.push("scale_by", out, &[a, s], |ctx| {
            let (x, s) = (ctx.inputs[0], ctx.inputs[1]);
            let f = s.item();
            let ds = ctx.needs[1].then(|| {
                let d: Real = ctx.grad.data().iter().zip(x.data()).map(|(g, x)| g * x).sum();
                Tensor::full(s.shape().to_vec(), d).expect("scalar shape")
            });
            vec![ctx.needs[0].then(|| ctx.grad.map(|g| g * f)), ds]
        })
    }

    pub fn add_scalar(&mut self, a: Var, c: Real) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, &[a], |ctx| vec![Some(ctx.grad.clone())])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push("one_minus", out, &[a], |ctx| {
            vec![Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(Real::ln);
        self.push("ln", out, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| g / x))]
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(Real::exp);
        self.push("exp", out, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.output, |g, y| g * y))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.output, |g, y| g * y * (1.0 - y)))]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(Real::tanh);
        self.push("tanh", out, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.output, |g, y| g * (1.0 - y * y)))]
        })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: Real) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", out, &[a], move |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                if x > 0.0 {
                    g
                } else {
                    slope * g
                }
            }))]
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: Real, hi: Real) -> Result<Var> {
        if lo > hi {
            return Err(TensorError::invalid("clamp", format!("lo {lo} > hi {hi}")));
        }
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push("clamp", out, &[a], move |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                if x < lo || x > hi {
                    0.0
                } else {
                    g
                }
            }))]
        })
    }

    /// Adds `b[C]` along axis 1 of `x[B, C, ...]`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (outer, channels, inner) = channel_split(self, "add_channel", x, b)?;
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for o in 0..outer {
            for (c, &bc) in bias.iter().enumerate() {
                let start = (o * channels + c) * inner;
                for v in &mut out.data_mut()[start..start + inner] {
                    *v += bc;
                }
            }
        }
        self.push("add_channel", out, &[x, b], move |ctx| {
            let db = ctx.needs[1].then(|| {
                let mut db = vec![0.0; channels];
                for o in 0..outer {
                    for (c, acc) in db.iter_mut().enumerate() {
                        let start = (o * channels + c) * inner;
                        *acc += ctx.grad.data()[start..start + inner].iter().sum::<Real>();
                    }
                }
                Tensor::new([channels], db).expect("bias gradient shape")
            });
            vec![Some(ctx.grad.clone()), db]
        })
    }

    /// Multiplies axis 1 of `x[B, C, ...]` by `w[C]`.
    pub fn mul_channel(&mut self, x: Var, w: Var) -> Result<Var> {
        let (outer, channels, inner) = channel_split(self, "mul_channel", x, w)?;
        let mut out = self.value(x).clone();
        let weight = self.value(w).data().to_vec();
        for o in 0..outer {
            for (c, &wc) in weight.iter().enumerate() {
                let start = (o * channels + c) * inner;
                for v in &mut out.data_mut()[start..start + inner] {
                    *v *= wc;
                }
            }
        }
        self.push("mul_channel", out, &[x, w], move |ctx| {
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let mut dx = ctx.needs[0].then(|| ctx.grad.clone());
            let mut dw = vec![0.0; channels];
            for o in 0..outer {
                for c in 0..channels {
                    let range = (o * channels + c) * inner..(o * channels + c + 1) * inner;
                    if let Some(dx) = dx.as_mut() {
                        for v in &mut dx.data_mut()[range.clone()] {
                            *v *= wv.data()[c];
                        }
                    }
                    if ctx.needs[1] {
                        dw[c] += ctx.grad.data()[range.clone()]
                            .iter()
                            .zip(&xv.data()[range])
                            .map(|(g, x)| g * x)
                            .sum::<Real>();
                    }
                }
            }
            let dw = ctx.needs[1].then(|| Tensor::new([channels], dw).expect("weight shape"));
            vec![dx, dw]
        })
    }

    /// Adds `b[N]` to every row of `x[..., N]`.
    pub fn add_last(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty shape");
        if self.shape(b) != [n] {
            return Err(TensorError::shape(
                "add_last",
                format!("bias {:?} for input {:?}", self.shape(b), self.shape(x)),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias) {
                *v += b;
            }
        }
        self.push("add_last", out, &[x, b], move |ctx| {
            let db = ctx.needs[1].then(|| {
                let mut db = vec![0.0; n];
                for row in ctx.grad.data().chunks(n) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                Tensor::new([n], db).expect("bias shape")
            });
            vec![Some(ctx.grad.clone()), db]
        })
    }
}

fn channel_split(tape: &Tape, op: &'static str, x: Var, per_channel: Var) -> Result<(usize, usize, usize)> {
    let shape = tape.shape(x);
    if shape.len() < 2 || tape.shape(per_channel) != [shape[1]] {
        return Err(TensorError::shape(
            op,
            format!(
                "per-channel vector {:?} for input {:?}",
                tape.shape(per_channel),
                shape
            ),
        ));
    }
    let inner: usize = shape[2..].iter().product();
    Ok((shape[0], shape[1], inner))
}
