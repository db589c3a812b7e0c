use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::{check_extents, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves `data` laid out as `shape` into the axis order `axes`.
fn permute_data(data: &[crate::Real], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<crate::Real>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += gather[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= gather[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let value = self.value(a).clone().reshape(shape.to_vec()).map_err(|_| {
            TensorError::shape("reshape", format!("cannot view {src:?} as {shape:?}"))
        })?;
        self.push("reshape", value, &[a], move |ctx| {
            vec![Some(ctx.grad.clone().reshape(src.clone()).expect("reshape back"))]
        })
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("{axes:?} is not a permutation of {} axes", shape.len()),
            ));
        }
        let (out_shape, data) = permute_data(self.value(a).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let value = Tensor::new(out_shape.clone(), data)?;
        self.push("permute", value, &[a], move |ctx| {
            let (back_shape, back) = permute_data(ctx.grad.data(), &out_shape, &inverse);
            vec![Some(Tensor::new(back_shape, back).expect("permute back"))]
        })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        check_extents("concat", &out_shape)?;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        self.push("concat", value, parts, move |ctx| {
            let g = ctx.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                if !ctx.needs[i] {
                    grads.push(None);
                    offset += w;
                    continue;
                }
                let mut d = Vec::with_capacity(outer * w * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    d.extend_from_slice(&g[start..start + w * inner]);
                }
                grads.push(Some(Tensor::new(ctx.inputs[i].shape().to_vec(), d).expect("concat part")));
                offset += w;
            }
            grads
        })
    }
}
