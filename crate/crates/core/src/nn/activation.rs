use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        // NaN is left in place so non-finite checks downstream still see it.
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient passes where `x > 0`; the derivative at exactly 0 is 0.
///
/// `x` may be either the pre-activation or the ReLU output: both are positive
/// at exactly the same positions.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "ReLU gradient {:?} does not match input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
