use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

impl Tape {
    /// Max pooling over non-padded windows of `x[B, C, D, H, W]`. The
    /// gradient is routed to the first maximal element of each window.
    pub fn max_pool3d(&mut self, x: Var, kernel: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let [batch, ch, d, h, w] = self.value(x).dims5("max_pool3d")?;
        let input = [d, h, w];
        let mut out_ext = [0; 3];
        for ax in 0..3 {
            if kernel[ax] == 0 || stride[ax] == 0 || kernel[ax] > input[ax] {
                return Err(TensorError::invalid(
                    "max_pool3d",
                    format!("kernel {kernel:?} / stride {stride:?} for extents {input:?}"),
                ));
            }
            out_ext[ax] = (input[ax] - kernel[ax]) / stride[ax] + 1;
        }
        let [od, oh, ow] = out_ext;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch * od * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..batch * ch {
            let base = plane * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut best = Real::NEG_INFINITY;
                        let mut best_idx = base;
                        for a in 0..kernel[0] {
                            for b in 0..kernel[1] {
                                for c in 0..kernel[2] {
                                    let idx = base
                                        + ((z * stride[0] + a) * h + y * stride[1] + b) * w
                                        + xo * stride[2]
                                        + c;
                                    if src[idx] > best {
                                        best = src[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        let value = Tensor::new([batch, ch, od, oh, ow], out)?;
        let in_shape = [batch, ch, d, h, w];
        self.push("max_pool3d", value, &[x], move |ctx| {
            let mut dx = vec![0.0; in_shape.iter().product()];
            for (&i, g) in argmax.iter().zip(ctx.grad.data()) {
                dx[i] += g;
            }
            vec![Some(Tensor::new(in_shape, dx).expect("pool dx"))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_blocks() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn([1, 1, 2, 2, 2], |i| i as Real).unwrap());
        let y = tape.max_pool3d(x, [2; 3], [2; 3]).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[7], 1.0);
        assert_eq!(tape.grad(x).unwrap().sum(), 1.0);
    }
}
