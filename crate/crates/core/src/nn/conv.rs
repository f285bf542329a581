//! 1D and 2D convolution via chunked im2col + GEMM.
//!
//! Both front-ends share one kernel: a 1D map `batch x ch x len` is a 2D map
//! of height 1 and a 1D kernel is a `1 x k` kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output length `ceil(len / stride)`, zero padding split around the
    /// input with the odd element on the left.
    #[default]
    Same,
    /// No padding; output length `floor((len - k) / stride) + 1`.
    Valid,
}

impl Padding {
    pub fn out_len(self, len: usize, kernel: usize, stride: usize) -> Option<usize> {
        match self {
            Padding::Same => Some(len.div_ceil(stride)),
            Padding::Valid if len >= kernel => Some((len - kernel) / stride + 1),
            Padding::Valid => None,
        }
    }

    fn before(self, len: usize, kernel: usize, stride: usize, out: usize) -> usize {
        match self {
            Padding::Same => ((out - 1) * stride + kernel).saturating_sub(len).div_ceil(2),
            Padding::Valid => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv1dParams<T: Real = f32> {
    /// `out_channels x in_channels x kernel_size`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct Conv2dParams<T: Real = f32> {
    /// `out_channels x in_channels x kh x kw`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Conv1dParams<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv1d_forward(x, &self.weights, &self.bias, self.stride, self.padding)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv1d_backward(x, &self.weights, self.stride, self.padding, grad_out)
    }
}

impl<T: Real> Conv2dParams<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weights, &self.bias, self.stride, self.padding)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv2d_backward(x, &self.weights, self.stride, self.padding, grad_out)
    }
}

/// `x`: `batch x in_ch x len`, `w`: `out_ch x in_ch x k`, `b`: `out_ch`.
pub fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::conv1d(x.shape(), w.shape(), stride, padding)?;
    check_bias(b, g.cout)?;
    let out = g.forward(x.data(), w.data(), b.data());
    Tensor::from_vec(&[g.batch, g.cout, g.ow], out)
}

pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::conv1d(x.shape(), w.shape(), stride, padding)?;
    g.check_grad_out(grad_out.shape(), &[g.batch, g.cout, g.ow])?;
    let (gx, gw, gb) = g.backward(x.data(), w.data(), grad_out.data());
    Ok(ConvGrads {
        x: Tensor::from_vec(x.shape(), gx)?,
        w: Tensor::from_vec(w.shape(), gw)?,
        b: Tensor::from_vec(&[g.cout], gb)?,
    })
}

/// `x`: `batch x in_ch x h x w`, `w`: `out_ch x in_ch x kh x kw`, `b`: `out_ch`.
/// The stride applies to both spatial axes.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::conv2d(x.shape(), w.shape(), stride, padding)?;
    check_bias(b, g.cout)?;
    let out = g.forward(x.data(), w.data(), b.data());
    Tensor::from_vec(&[g.batch, g.cout, g.oh, g.ow], out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::conv2d(x.shape(), w.shape(), stride, padding)?;
    g.check_grad_out(grad_out.shape(), &[g.batch, g.cout, g.oh, g.ow])?;
    let (gx, gw, gb) = g.backward(x.data(), w.data(), grad_out.data());
    Ok(ConvGrads {
        x: Tensor::from_vec(x.shape(), gx)?,
        w: Tensor::from_vec(w.shape(), gw)?,
        b: Tensor::from_vec(&[g.cout], gb)?,
    })
}

fn check_bias<T: Real>(b: &Tensor<T>, cout: usize) -> Result<()> {
    if b.shape() != [cout] {
        return Err(Error::shape(format!("bias shape {:?}, expected [{}]", b.shape(), cout)));
    }
    Ok(())
}

/// Output positions per im2col chunk; bounds the column buffer.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn conv1d(x: &[usize], w: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if x.len() != 3 {
            return Err(Error::Rank { expected: 3, found: x.len() });
        }
        if w.len() != 3 {
            return Err(Error::shape(format!("conv1d weights must be rank 3, got {:?}", w)));
        }
        Self::new(x[0], x[1], 1, x[2], w[0], w[1], 1, w[2], 1, stride, padding)
    }

    fn conv2d(x: &[usize], w: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::Rank { expected: 4, found: x.len() });
        }
        if w.len() != 4 {
            return Err(Error::shape(format!("conv2d weights must be rank 4, got {:?}", w)));
        }
        Self::new(x[0], x[1], x[2], x[3], w[0], w[1], w[2], w[3], stride, stride, padding)
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        batch: usize,
        cin: usize,
        h: usize,
        wid: usize,
        cout: usize,
        w_cin: usize,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        padding: Padding,
    ) -> Result<Self> {
        if w_cin != cin {
            return Err(Error::ChannelMismatch { expected: w_cin, found: cin });
        }
        if sh == 0 || sw == 0 {
            return Err(Error::shape("stride must be >= 1"));
        }
        let too_short = || Error::shape(format!(
            "input {}x{} is smaller than kernel {}x{} under valid padding",
            h, wid, kh, kw
        ));
        let oh = padding.out_len(h, kh, sh).ok_or_else(too_short)?;
        let ow = padding.out_len(wid, kw, sw).ok_or_else(too_short)?;
        Ok(Geometry {
            batch,
            cin,
            cout,
            h,
            w: wid,
            kh,
            kw,
            sh,
            sw,
            oh,
            ow,
            pad_top: padding.before(h, kh, sh, oh),
            pad_left: padding.before(wid, kw, sw, ow),
        })
    }

    fn check_grad_out(&self, got: &[usize], want: &[usize]) -> Result<()> {
        if got != want {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match forward output {:?}",
                got, want
            )));
        }
        Ok(())
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox * sw + kx - pad_left` lies
    /// inside the image, as a half-open range.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(kx).div_ceil(self.sw);
        let reach = self.w + self.pad_left;
        let hi = if reach > kx { ((reach - kx - 1) / self.sw + 1).min(self.ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn input_row(&self, ky: usize, oy: usize) -> Option<usize> {
        let iy = (oy * self.sh + ky).checked_sub(self.pad_top)?;
        (iy < self.h).then_some(iy)
    }

    /// Fills `col` (`rows x (p1 - p0)`) with the patches for output positions
    /// `p0..p1` of one sample.
    fn im2col<T: Real>(&self, x: &[T], p0: usize, p1: usize, col: &mut [T]) {
        let cols = p1 - p0;
        let plane = self.h * self.w;
        for ci in 0..self.cin {
            let xp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[r * cols..(r + 1) * cols];
                    let (vlo, vhi) = self.valid_ox(kx);
                    let mut p = p0;
                    while p < p1 {
                        let oy = p / self.ow;
                        let ox0 = p % self.ow;
                        let run = (self.ow - ox0).min(p1 - p);
                        let seg = &mut dst[p - p0..p - p0 + run];
                        match self.input_row(ky, oy) {
                            None => seg.fill(T::zero()),
                            Some(iy) => {
                                let lo = vlo.clamp(ox0, ox0 + run);
                                let hi = vhi.clamp(lo, ox0 + run);
                                seg[..lo - ox0].fill(T::zero());
                                seg[hi - ox0..].fill(T::zero());
                                let row = &xp[iy * self.w..(iy + 1) * self.w];
                                let inner = &mut seg[lo - ox0..hi - ox0];
                                if lo < hi {
                                    let start = lo * self.sw + kx - self.pad_left;
                                    if self.sw == 1 {
                                        inner.copy_from_slice(&row[start..start + inner.len()]);
                                    } else {
                                        for (j, d) in inner.iter_mut().enumerate() {
                                            *d = row[start + j * self.sw];
                                        }
                                    }
                                }
                            }
                        }
                        p += run;
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], p0: usize, p1: usize, gx: &mut [T]) {
        let cols = p1 - p0;
        let plane = self.h * self.w;
        for ci in 0..self.cin {
            let gp = &mut gx[ci * plane..(ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[r * cols..(r + 1) * cols];
                    let (vlo, vhi) = self.valid_ox(kx);
                    let mut p = p0;
                    while p < p1 {
                        let oy = p / self.ow;
                        let ox0 = p % self.ow;
                        let run = (self.ow - ox0).min(p1 - p);
                        if let Some(iy) = self.input_row(ky, oy) {
                            let lo = vlo.clamp(ox0, ox0 + run);
                            let hi = vhi.clamp(lo, ox0 + run);
                            if lo < hi {
                                let seg = &src[p - p0 + (lo - ox0)..p - p0 + (hi - ox0)];
                                let start = iy * self.w + lo * self.sw + kx - self.pad_left;
                                if self.sw == 1 {
                                    for (g, &v) in gp[start..start + seg.len()].iter_mut().zip(seg) {
                                        *g += v;
                                    }
                                } else {
                                    for (j, &v) in seg.iter().enumerate() {
                                        gp[start + j * self.sw] += v;
                                    }
                                }
                            }
                        }
                        p += run;
                    }
                }
            }
        }
    }

    fn forward<T: Real>(&self, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
        let rows = self.rows();
        let positions = self.positions();
        let in_sample = self.cin * self.h * self.w;
        let out_sample = self.cout * positions;
        let mut out = vec![T::zero(); self.batch * out_sample];
        let mut col = vec![T::zero(); rows * CHUNK.min(positions)];
        for n in 0..self.batch {
            let xs = &x[n * in_sample..(n + 1) * in_sample];
            let os = &mut out[n * out_sample..(n + 1) * out_sample];
            for (c, &bias) in b.iter().enumerate() {
                os[c * positions..(c + 1) * positions].fill(bias);
            }
            let mut p0 = 0;
            while p0 < positions {
                let p1 = (p0 + CHUNK).min(positions);
                let cols = p1 - p0;
                self.im2col(xs, p0, p1, &mut col[..rows * cols]);
                T::gemm(
                    self.cout,
                    rows,
                    cols,
                    T::one(),
                    w,
                    rows as isize,
                    1,
                    &col[..rows * cols],
                    cols as isize,
                    1,
                    T::one(),
                    &mut os[p0..],
                    positions as isize,
                    1,
                );
                p0 = p1;
            }
        }
        out
    }

    fn backward<T: Real>(&self, x: &[T], w: &[T], go: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let rows = self.rows();
        let positions = self.positions();
        let in_sample = self.cin * self.h * self.w;
        let out_sample = self.cout * positions;
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); self.cout];
        let chunk = CHUNK.min(positions);
        let mut col = vec![T::zero(); rows * chunk];
        let mut gcol = vec![T::zero(); rows * chunk];
        for n in 0..self.batch {
            let xs = &x[n * in_sample..(n + 1) * in_sample];
            let gos = &go[n * out_sample..(n + 1) * out_sample];
            let gxs = &mut gx[n * in_sample..(n + 1) * in_sample];
            for (c, g) in gb.iter_mut().enumerate() {
                *g += gos[c * positions..(c + 1) * positions].iter().copied().sum::<T>();
            }
            let mut p0 = 0;
            while p0 < positions {
                let p1 = (p0 + CHUNK).min(positions);
                let cols = p1 - p0;
                let col = &mut col[..rows * cols];
                let gcol = &mut gcol[..rows * cols];
                self.im2col(xs, p0, p1, col);
                // grad_w += grad_out[:, p0..p1] * col^T
                T::gemm(
                    self.cout,
                    cols,
                    rows,
                    T::one(),
                    &gos[p0..],
                    positions as isize,
                    1,
                    col,
                    1,
                    cols as isize,
                    T::one(),
                    &mut gw,
                    rows as isize,
                    1,
                );
                // grad_col = w^T * grad_out[:, p0..p1]
                T::gemm(
                    rows,
                    self.cout,
                    cols,
                    T::one(),
                    w,
                    1,
                    rows as isize,
                    &gos[p0..],
                    positions as isize,
                    1,
                    T::zero(),
                    gcol,
                    cols as isize,
                    1,
                );
                self.col2im(gcol, p0, p1, gxs);
                p0 = p1;
            }
        }
        (gx, gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    /// Direct summation, independent of the im2col path.
    fn naive_conv1d(x: &[f64], w: &[f64], k: usize, stride: usize, pad_left: usize, out_len: usize) -> Vec<f64> {
        (0..out_len)
            .map(|o| {
                (0..k)
                    .map(|tau| {
                        let pos = (o * stride + tau) as isize - pad_left as isize;
                        if pos < 0 || pos as usize >= x.len() { 0.0 } else { w[tau] * x[pos as usize] }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv1d_forward(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn strided_valid_pair_sum() {
        let x = t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let w = [1.0, 1.0];
        let y = conv1d_forward(&x, &t(&[1, 1, 2], &w), &t(&[1], &[0.0]), 2, Padding::Valid).unwrap();
        let oracle = naive_conv1d(x.data(), &w, 2, 2, 0, 2);
        assert_eq!(oracle, vec![3.0, 7.0]);
        assert_eq!(y.data(), &oracle[..]);
    }

    #[test]
    fn same_padding_matches_direct_sum() {
        let x: Vec<f64> = (0..11).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = [0.3, -1.2, 0.5, 2.0];
        for stride in 1..4 {
            let out_len = 11usize.div_ceil(stride);
            let total = ((out_len - 1) * stride + 4).saturating_sub(11);
            let oracle = naive_conv1d(&x, &w, 4, stride, total.div_ceil(2), out_len);
            let y = conv1d_forward(&t(&[1, 1, 11], &x), &t(&[1, 1, 4], &w), &t(&[1], &[0.0]), stride, Padding::Same).unwrap();
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_layer_shape() {
        let x = Tensor::<f32>::zeros(&[1, 1, 32000]);
        let w = Tensor::<f32>::zeros(&[32, 1, 80]);
        let y = conv1d_forward(&x, &w, &Tensor::zeros(&[32]), 4, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 32, 8000]);
    }

    #[test]
    fn identity_backward_passes_gradient() {
        let x = t(&[1, 1, 4], &[1.0, -2.0, 3.0, 0.5]);
        let go = t(&[1, 1, 4], &[0.1, 0.2, -0.3, 0.4]);
        let g = conv1d_backward(&x, &t(&[1, 1, 1], &[1.0]), 1, Padding::Same, &go).unwrap();
        assert_eq!(g.x.data(), go.data());
    }

    #[test]
    fn bias_gradient_sums_positions() {
        let x = Tensor::<f64>::full(&[1, 2, 5], 0.3);
        let w = Tensor::<f64>::full(&[3, 2, 1], 0.1);
        let go = Tensor::<f64>::full(&[1, 3, 5], 1.0);
        let g = conv1d_backward(&x, &w, 1, Padding::Same, &go).unwrap();
        assert_eq!(g.b.data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(&[1, 2, 8]);
        let w = Tensor::<f32>::zeros(&[4, 3, 2]);
        let err = conv1d_forward(&x, &w, &Tensor::zeros(&[4]), 1, Padding::Same).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn valid_too_short_is_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3]);
        let w = Tensor::<f32>::zeros(&[1, 1, 4]);
        assert!(conv1d_forward(&x, &w, &Tensor::zeros(&[1]), 1, Padding::Valid).is_err());
    }

    #[test]
    fn grad_shape_mismatch_is_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8]);
        let w = Tensor::<f32>::zeros(&[1, 1, 2]);
        let go = Tensor::<f32>::zeros(&[1, 1, 3]);
        assert!(conv1d_backward(&x, &w, 1, Padding::Same, &go).is_err());
    }

    #[test]
    fn conv2d_pointwise_identity() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_all_ones_valid_sums() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv2d_same_3x3_border() {
        // all-ones 3x3 kernel on all-ones 3x3 image: corners see 4, edges 6, centre 9
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn chunking_does_not_change_results() {
        // more positions than one chunk
        let len = CHUNK * 2 + 37;
        let x: Vec<f64> = (0..len).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let w = [0.5, -0.25, 1.5];
        let y = conv1d_forward(&t(&[1, 1, len], &x), &t(&[1, 1, 3], &w), &t(&[1], &[0.0]), 1, Padding::Same).unwrap();
        let oracle = naive_conv1d(&x, &w, 3, 1, 1, len);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
