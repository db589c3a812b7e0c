//! 3D cross-correlation via im2col + GEMM.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

use std::cell::RefCell;

thread_local! {
    // im2col buffers reused across calls; large fresh allocations are
    // page-faulted in on every step otherwise.
    static COLS: RefCell<Vec<Real>> = const { RefCell::new(Vec::new()) };
    static DCOLS: RefCell<Vec<Real>> = const { RefCell::new(Vec::new()) };
}

fn with_scratch<R>(
    key: &'static std::thread::LocalKey<RefCell<Vec<Real>>>,
    len: usize,
    f: impl FnOnce(&mut [Real]) -> R,
) -> R {
    key.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn new(input: [usize; 3], kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Result<Self> {
        let mut output = [0; 3];
        for ax in 0..3 {
            if stride[ax] == 0 {
                return Err(TensorError::invalid("conv3d", "stride must be positive"));
            }
            let padded = input[ax] + 2 * pad[ax];
            if kernel[ax] > padded {
                return Err(TensorError::shape(
                    "conv3d",
                    format!(
                        "kernel extent {} exceeds padded input extent {padded} on axis {ax}",
                        kernel[ax]
                    ),
                ));
            }
            output[ax] = (padded - kernel[ax]) / stride[ax] + 1;
        }
        Ok(Self {
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// Output indices along `ax` whose tap `k` lands inside the input.
    fn valid_range(&self, ax: usize, k: usize) -> std::ops::Range<usize> {
        let (s, p, n, o) = (self.stride[ax], self.pad[ax], self.input[ax], self.output[ax]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(o) } else { 0 };
        lo..hi.max(lo)
    }

    /// Calls `f(col_offset, input_offset)` for every (kernel tap, output
    /// position) pair that reads a real (non-padding) input voxel, grouped
    /// by kernel row; `f` receives runs along the innermost axis.
    fn for_each_run(&self, channels: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let p_out = self.out_volume();
        let sw = self.stride[2];
        for c in 0..channels {
            for a in 0..kd {
                let d_range = self.valid_range(0, a);
                for b in 0..kh {
                    let h_range = self.valid_range(1, b);
                    for e in 0..kw {
                        let w_range = self.valid_range(2, e);
                        if w_range.is_empty() {
                            continue;
                        }
                        let row = ((c * kd + a) * kh + b) * kw + e;
                        for od in d_range.clone() {
                            let id = od * self.stride[0] + a - self.pad[0];
                            for oy in h_range.clone() {
                                let iy = oy * self.stride[1] + b - self.pad[1];
                                let col = row * p_out + (od * oh + oy) * ow + w_range.start;
                                let ix = w_range.start * sw + e - self.pad[2];
                                let src = ((c * self.input[0] + id) * ih + iy) * iw + ix;
                                f(col, src, w_range.len(), sw);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, channels: usize, src: &[Real], cols: &mut [Real]) {
        cols.fill(0.0);
        self.for_each_run(channels, |col, start, len, step| {
            let dst = &mut cols[col..col + len];
            if step == 1 {
                dst.copy_from_slice(&src[start..start + len]);
            } else {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = src[start + i * step];
                }
            }
        });
    }

    fn col2im(&self, channels: usize, cols: &[Real], dst: &mut [Real]) {
        self.for_each_run(channels, |col, start, len, step| {
            for (i, v) in cols[col..col + len].iter().enumerate() {
                dst[start + i * step] += v;
            }
        });
    }
}

impl Tape {
    /// Cross-correlates `input[B, Cin, D, H, W]` with `kernel[Cout, Cin, kd, kh, kw]`
    /// using zero padding.
    pub fn conv3d(&mut self, input: Var, kernel: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let [batch, cin, d, h, w] = self.value(input).dims5("conv3d")?;
        let [cout, kcin, kd, kh, kw] = self.value(kernel).dims5("conv3d")?;
        if kcin != cin {
            return Err(TensorError::shape(
                "conv3d",
                format!("kernel expects {kcin} input channels, input has {cin}"),
            ));
        }
        let geo = Geometry::new([d, h, w], [kd, kh, kw], stride, pad)?;
        let (p_in, p_out, rows) = (geo.in_volume(), geo.out_volume(), cin * geo.kernel_volume());

        let mut out = vec![0.0; batch * cout * p_out];
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let scratch = if geo.is_pointwise() { 0 } else { rows * p_out };
            with_scratch(&COLS, scratch, |cols| {
                for b in 0..batch {
                    let sample = &x[b * cin * p_in..(b + 1) * cin * p_in];
                    let cols: &[Real] = if geo.is_pointwise() {
                        sample
                    } else {
                        geo.im2col(cin, sample, cols);
                        cols
                    };
                    gemm(cout, rows, p_out, k, false, cols, false, &mut out[b * cout * p_out..], 0.0);
                }
            });
        }
        let [od, oh, ow] = geo.output;
        let value = Tensor::new([batch, cout, od, oh, ow], out)?;
        self.push("conv3d", value, &[input, kernel], move |ctx| {
            let (x, k, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let mut dx = ctx.needs[0].then(|| vec![0.0; x.len()]);
            let mut dk = ctx.needs[1].then(|| vec![0.0; k.len()]);
            let pointwise = geo.is_pointwise();
            let col_len = if pointwise { 0 } else { rows * p_out };
            let dcol_len = if pointwise || dx.is_none() { 0 } else { rows * p_out };
            with_scratch(&COLS, col_len, |cols| {
                with_scratch(&DCOLS, dcol_len, |dcols| {
                    for b in 0..batch {
                        let g_b = &g[b * cout * p_out..(b + 1) * cout * p_out];
                        if let Some(dk) = dk.as_mut() {
                            let sample = &x[b * cin * p_in..(b + 1) * cin * p_in];
                            let cols: &[Real] = if pointwise {
                                sample
                            } else {
                                geo.im2col(cin, sample, cols);
                                cols
                            };
                            gemm(cout, p_out, rows, g_b, false, cols, true, dk, 1.0);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dx_b = &mut dx[b * cin * p_in..(b + 1) * cin * p_in];
                            if pointwise {
                                gemm(rows, cout, p_out, k, true, g_b, false, dx_b, 0.0);
                            } else {
                                gemm(rows, cout, p_out, k, true, g_b, false, dcols, 0.0);
                                geo.col2im(cin, dcols, dx_b);
                            }
                        }
                    }
                })
            });
            vec![
                dx.map(|d| Tensor::new(ctx.inputs[0].shape().to_vec(), d).expect("conv dx")),
                dk.map(|d| Tensor::new(ctx.inputs[1].shape().to_vec(), d).expect("conv dk")),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extents_follow_stride_and_padding() {
        let g = Geometry::new([16, 32, 32], [3, 3, 3], [2, 2, 2], [1, 1, 1]).unwrap();
        assert_eq!(g.output, [8, 16, 16]);
        let g = Geometry::new([4, 4, 4], [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        assert_eq!(g.output, [4, 4, 4]);
        assert!(Geometry::new([2, 2, 2], [5, 1, 1], [1, 1, 1], [1, 0, 0]).is_err());
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 3, 3, 3]).unwrap());
        let k = tape.constant(Tensor::zeros([1, 3, 1, 1, 1]).unwrap());
        assert!(matches!(tape.conv3d(x, k, [1; 3], [0; 3]), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::new();
        let data = Tensor::from_fn([1, 1, 2, 3, 4], |i| i as Real * 0.5 - 3.0).unwrap();
        let x = tape.constant(data.clone());
        let k = tape.constant(Tensor::ones([1, 1, 1, 1, 1]).unwrap());
        let y = tape.conv3d(x, k, [1; 3], [0; 3]).unwrap();
        assert_eq!(tape.value(y), &data);
    }
}
