//! Dense row-major tensors and the shape manipulations the networks need.
//!
//! Activations are channels-first: a 1D feature map is `channels x length`
//! (batched: `batch x channels x length`), a 2D one is
//! `batch x channels x height x width`.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Panics on a zero dimension; use [`Tensor::from_vec`] for untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank does not match tensor rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {:?} out of bounds for shape {:?}", index, self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Rank { expected: 2, found: self.rank() });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the largest element, lowest index on ties.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one dimension"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("all dimensions must be >= 1, got {:?}", shape)));
    }
    Ok(())
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{:?} ", T::DTYPE, self.shape)?;
        let head: Vec<_> = self.data.iter().take(PREVIEW).collect();
        if self.data.len() > PREVIEW {
            write!(f, "{:?}...", head)
        } else {
            write!(f, "{:?}", head)
        }
    }
}

/// Concatenates feature maps along the channel axis.
///
/// Accepts `channels x length` maps or batched `batch x channels x length`
/// maps; the channel axis is the second-to-last one. Input `i` occupies the
/// `i`-th channel block of the output.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.len() < 2 {
        return Err(Error::shape(format!(
            "channel concatenation needs at least 2 inputs, got {}",
            inputs.len()
        )));
    }
    let rank = inputs[0].rank();
    if rank != 2 && rank != 3 {
        return Err(Error::Rank { expected: 2, found: rank });
    }
    let batch = if rank == 3 { inputs[0].shape[0] } else { 1 };
    let length = inputs[0].shape[rank - 1];
    for (i, t) in inputs.iter().enumerate() {
        if t.rank() != rank {
            return Err(Error::Rank { expected: rank, found: t.rank() });
        }
        if t.shape[rank - 1] != length {
            return Err(Error::LengthMismatch { index: i, expected: length, found: t.shape[rank - 1] });
        }
        if rank == 3 && t.shape[0] != batch {
            return Err(Error::shape(format!(
                "batch mismatch: input {} has batch {}, expected {}",
                i, t.shape[0], batch
            )));
        }
    }
    let channels: usize = inputs.iter().map(|t| t.shape[rank - 2]).sum();
    let mut data = Vec::with_capacity(batch * channels * length);
    for n in 0..batch {
        for t in inputs {
            let block = t.shape[rank - 2] * length;
            data.extend_from_slice(&t.data[n * block..(n + 1) * block]);
        }
    }
    let shape = if rank == 3 { vec![batch, channels, length] } else { vec![channels, length] };
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_channels`]: splits the channel axis into blocks of the
/// given sizes.
pub fn split_channels<T: Real>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let rank = input.rank();
    if rank != 2 && rank != 3 {
        return Err(Error::Rank { expected: 2, found: rank });
    }
    let channels = input.shape[rank - 2];
    if sizes.iter().sum::<usize>() != channels || sizes.contains(&0) {
        return Err(Error::shape(format!(
            "split sizes {:?} do not partition {} channels",
            sizes, channels
        )));
    }
    let batch = if rank == 3 { input.shape[0] } else { 1 };
    let length = input.shape[rank - 1];
    let mut outs: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(batch * c * length)).collect();
    for n in 0..batch {
        let mut start = n * channels * length;
        for (out, &c) in outs.iter_mut().zip(sizes) {
            out.extend_from_slice(&input.data[start..start + c * length]);
            start += c * length;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(data, &c)| {
            let shape = if rank == 3 { vec![batch, c, length] } else { vec![c, length] };
            Tensor::from_vec(&shape, data)
        })
        .collect()
}

/// Views a `channels x length` feature map as a single-channel image of
/// height `channels` and width `length` (`height x width x 1`). Pixel `(i, j)`
/// is channel `i` at position `j`, so the buffer is reused unchanged.
pub fn reshape_to_image<T: Real>(l: Tensor<T>) -> Result<Tensor<T>> {
    if l.rank() != 2 {
        return Err(Error::Rank { expected: 2, found: l.rank() });
    }
    let (h, w) = (l.shape[0], l.shape[1]);
    l.reshape(&[h, w, 1])
}

/// Batched form used inside the network: `batch x channels x length` becomes
/// `batch x 1 x channels x length` (channels-first image with one plane).
pub fn batch_to_image<T: Real>(x: Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::Rank { expected: 3, found: x.rank() });
    }
    let (n, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    x.reshape(&[n, 1, c, l])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(shape: &[usize], start: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| start + i as f32).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[], vec![]).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let t = seq(&[2, 3, 4], 0.0);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
        let r = t.clone().reshape(&[6, 4]).unwrap();
        assert_eq!(r.at(&[5, 3]), 23.0);
        assert_eq!(r.reshape(&[2, 3, 4]).unwrap(), t);
    }

    #[test]
    fn concat_two_blocks() {
        let a = seq(&[2, 5], 0.0);
        let b = seq(&[3, 5], 100.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[5, 5]);
        assert_eq!(&c.data()[..10], a.data());
        assert_eq!(&c.data()[10..], b.data());
    }

    #[test]
    fn concat_three_nucleus_branches() {
        let a = Tensor::<f32>::zeros(&[64, 2000]);
        let c = concat_channels(&[&a, &a, &a]).unwrap();
        assert_eq!(c.shape(), &[192, 2000]);
    }

    #[test]
    fn concat_length_mismatch_names_input() {
        let a = seq(&[1, 4], 0.0);
        let b = seq(&[1, 3], 0.0);
        let err = concat_channels(&[&a, &b]).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
        assert!(matches!(err, Error::LengthMismatch { index: 1, .. }));
    }

    #[test]
    fn concat_needs_two_inputs() {
        let a = seq(&[1, 4], 0.0);
        assert!(concat_channels(&[&a]).is_err());
    }

    #[test]
    fn image_view_keeps_pixels() {
        let l = Tensor::from_vec(&[2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let img = reshape_to_image(l.clone()).unwrap();
        assert_eq!(img.shape(), &[2, 3, 1]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(img.at(&[i, j, 0]), l.at(&[i, j]));
            }
        }
        assert_eq!(img.at(&[0, 2, 0]), 3.0);
    }

    #[test]
    fn image_view_of_nucleus_output() {
        let l = Tensor::<f32>::zeros(&[192, 1991]);
        assert_eq!(reshape_to_image(l).unwrap().shape(), &[192, 1991, 1]);
    }

    #[test]
    fn image_view_rejects_rank3() {
        let err = reshape_to_image(Tensor::<f32>::zeros(&[1, 2, 3])).unwrap_err();
        assert!(matches!(err, Error::Rank { expected: 2, found: 3 }));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let t = seq(&[3, 7], -4.5);
        let tt = t.transpose2().unwrap();
        assert_eq!(tt.shape(), &[7, 3]);
        assert_eq!(tt.at(&[6, 2]), t.at(&[2, 6]));
        assert_eq!(tt.transpose2().unwrap(), t);
    }

    proptest! {
        #[test]
        fn concat_then_split_recovers_inputs(
            batch in 1usize..3,
            chans in proptest::collection::vec(1usize..5, 2..5),
            len in 1usize..9,
            seed in any::<u32>(),
        ) {
            let inputs: Vec<Tensor> = chans.iter().enumerate().map(|(i, &c)| {
                let n = batch * c * len;
                let data = (0..n).map(|k| ((k as u32 ^ seed).wrapping_mul(2654435761) as f32) * 1e-9 + i as f32).collect();
                Tensor::from_vec(&[batch, c, len], data).unwrap()
            }).collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let cat = concat_channels(&refs).unwrap();
            prop_assert_eq!(cat.shape(), &[batch, chans.iter().sum::<usize>(), len][..]);
            let parts = split_channels(&cat, &chans).unwrap();
            for (p, orig) in parts.iter().zip(&inputs) {
                prop_assert_eq!(p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                orig.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }

        #[test]
        fn reshape_round_trips_bitwise(h in 1usize..20, w in 1usize..20) {
            let t = seq(&[h, w], 0.25);
            let back = reshape_to_image(t.clone()).unwrap().reshape(&[h, w]).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
