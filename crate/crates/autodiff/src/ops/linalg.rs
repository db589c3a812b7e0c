use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// `[M,K] × [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => {
                return Err(TensorError::shape("matmul", format!("{sa:?} × {sb:?}")));
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new([m, n], out)?;
        self.push("matmul", value, &[a, b], move |ctx| {
            let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let da = ctx.needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, false, bv, true, &mut d, 0.0);
                Tensor::new([m, k], d).expect("matmul da")
            });
            let db = ctx.needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, av, true, g, false, &mut d, 0.0);
                Tensor::new([k, n], d).expect("matmul db")
            });
            vec![da, db]
        })
    }

    /// Batched product `[B,M,K] × [B,K,N] → [B,M,N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = match (self.shape(a), self.shape(b)) {
            (&[ba, m, k], &[bb, k2, n]) if ba == bb && k == k2 => (ba, m, k, n),
            (sa, sb) => {
                return Err(TensorError::shape("bmm", format!("{sa:?} × {sb:?}")));
            }
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..],
                    false,
                    &bv[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    0.0,
                );
            }
        }
        let value = Tensor::new([batch, m, n], out)?;
        self.push("bmm", value, &[a, b], move |ctx| {
            let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let da = ctx.needs[0].then(|| {
                let mut d = vec![0.0; batch * m * k];
                for i in 0..batch {
                    gemm(m, n, k, &g[i * m * n..], false, &bv[i * k * n..], true, &mut d[i * m * k..], 0.0);
                }
                Tensor::new([batch, m, k], d).expect("bmm da")
            });
            let db = ctx.needs[1].then(|| {
                let mut d = vec![0.0; batch * k * n];
                for i in 0..batch {
                    gemm(k, m, n, &av[i * m * k..], true, &g[i * m * n..], false, &mut d[i * k * n..], 0.0);
                }
                Tensor::new([batch, k, n], d).expect("bmm db")
            });
            vec![da, db]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = tape.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(a).data());
        let bad = tape.constant(Tensor::zeros([3, 2]).unwrap());
        assert!(tape.matmul(a, bad).is_err());
    }
}
