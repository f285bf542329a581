//! Max pooling (1D/2D, valid windows) and global average pooling.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Forward result of a max pool: the pooled map plus, for every output
/// element, the flat input index that won its window.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput<T: Real> {
    pub out: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn pooled_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && kernel > 0 && stride > 0).then(|| (len - kernel) / stride + 1)
}

/// `x`: `batch x ch x len`.
pub fn maxpool1d_forward<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    if x.rank() != 3 {
        return Err(Error::Rank { expected: 3, found: x.rank() });
    }
    let s = x.shape();
    let (out, argmax, _, ow) = maxpool_planes(x.data(), s[0] * s[1], 1, s[2], (1, kernel), (1, stride))?;
    Ok(MaxPoolOutput { out: Tensor::from_vec(&[s[0], s[1], ow], out)?, argmax })
}

/// `x`: `batch x ch x h x w`, square window and stride.
pub fn maxpool2d_forward<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    if x.rank() != 4 {
        return Err(Error::Rank { expected: 4, found: x.rank() });
    }
    let s = x.shape();
    let (out, argmax, oh, ow) =
        maxpool_planes(x.data(), s[0] * s[1], s[2], s[3], (kernel, kernel), (stride, stride))?;
    Ok(MaxPoolOutput { out: Tensor::from_vec(&[s[0], s[1], oh, ow], out)?, argmax })
}

fn maxpool_planes<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
) -> Result<(Vec<T>, Vec<usize>, usize, usize)> {
    let oh = pooled_len(h, kh, sh);
    let ow = pooled_len(w, kw, sw);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::shape(format!(
            "pooling window {}x{} does not fit a {}x{} map",
            kh, kw, h, w
        )));
    };
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * sh * w + ox * sw;
                for ky in 0..kh {
                    let row = base + (oy * sh + ky) * w + ox * sw;
                    for i in row..row + kw {
                        // strict comparison keeps the first maximum
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((out, argmax, oh, ow))
}

/// Routes each output gradient to the input element that won its window.
/// Overlapping windows accumulate.
pub fn maxpool_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(format!(
            "gradient has {} elements but the pool produced {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    let data = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        data[i] += g;
    }
    Ok(gx)
}

/// Mean over all spatial positions: `batch x ch x ...` to `batch x ch`.
pub fn gap_forward<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 3 {
        return Err(Error::Rank { expected: 3, found: a.rank() });
    }
    let (n, c) = (a.shape()[0], a.shape()[1]);
    let area: usize = a.shape()[2..].iter().product();
    let scale = T::one() / T::lit(area as f64);
    let out = a.data().chunks_exact(area).map(|plane| plane.iter().copied().sum::<T>() * scale).collect();
    Tensor::from_vec(&[n, c], out)
}

/// Spreads `grad_out[n, c] / area` uniformly over the spatial positions.
pub fn gap_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input_shape.len() < 3 || grad_out.shape() != &input_shape[..2] {
        return Err(Error::shape(format!(
            "GAP gradient {:?} does not match input {:?}",
            grad_out.shape(),
            input_shape
        )));
    }
    let area: usize = input_shape[2..].iter().product();
    let scale = T::one() / T::lit(area as f64);
    let mut data = Vec::with_capacity(grad_out.len() * area);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, area));
    }
    Tensor::from_vec(input_shape, data)
}
