use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

impl Tape {
    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).sum();
        let shape = self.shape(a).to_vec();
        self.push("sum", Tensor::scalar(total), &[a], move |ctx| {
            vec![Some(Tensor::full(shape.clone(), ctx.grad.item()).expect("shape"))]
        })
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as Real;
        let total = self.value(a).sum();
        let shape = self.shape(a).to_vec();
        self.push("mean", Tensor::scalar(total / n), &[a], move |ctx| {
            vec![Some(Tensor::full(shape.clone(), ctx.grad.item() / n).expect("shape"))]
        })
    }
}
