//! Dense tensor kernels used by the detector.
//!
//! Batched feature maps are stored as `[channels, batch * height * width]`
//! matrices, columns ordered by `(image, row, column)`. Convolutions run as
//! im2col followed by a single GEMM over the whole batch.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the detector (`f32` for training, `f64`
/// for gradient checking).
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Spatial geometry of a batch of feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn columns(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Output geometry of a `k x k` conv with padding `k / 2`.
    pub fn conv_out(&self, k: usize, stride: usize) -> Geometry {
        let pad = k / 2;
        Geometry {
            batch: self.batch,
            height: (self.height + 2 * pad - k) / stride + 1,
            width: (self.width + 2 * pad - k) / stride + 1,
        }
    }
}

/// `c = a · b` for freshly allocated `c`.
pub fn matmul<F: Real>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(F::one(), &a, &b, F::zero(), &mut c);
    c
}

/// Unfolds `k x k` patches into `[in_channels * k * k, out_columns]`.
pub fn im2col<F: Real>(x: &Array2<F>, g: Geometry, k: usize, stride: usize) -> (Array2<F>, Geometry) {
    let out = g.conv_out(k, stride);
    let channels = x.nrows();
    let pad = k / 2;
    let xs = x.as_slice().expect("standard layout");
    let in_plane = g.height * g.width;
    let out_plane = out.height * out.width;
    let ncols = out.columns();
    let mut cols = Array2::<F>::zeros((channels * k * k, ncols));
    let cs = cols.as_slice_mut().expect("standard layout");
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst_row = &mut cs[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &xs[c * g.columns() + b * in_plane..][..in_plane];
                    let dst = &mut dst_row[b * out_plane..][..out_plane];
                    for oy in 0..out.height {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.width..][..g.width];
                        let dst_row = &mut dst[oy * out.width..][..out.width];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, out)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im<F: Real>(
    cols: &Array2<F>,
    channels: usize,
    g: Geometry,
    k: usize,
    stride: usize,
) -> Array2<F> {
    let out = g.conv_out(k, stride);
    let pad = k / 2;
    let in_plane = g.height * g.width;
    let out_plane = out.height * out.width;
    let ncols = out.columns();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array2::<F>::zeros((channels, g.columns()));
    let xs = x.as_slice_mut().expect("standard layout");
    let total = g.columns();
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src_row = &cs[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut xs[c * total + b * in_plane..][..in_plane];
                    let src = &src_row[b * out_plane..][..out_plane];
                    for oy in 0..out.height {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.width..][..g.width];
                        let src_row = &src[oy * out.width..][..out.width];
                        for (ox, &v) in src_row.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn add_bias<F: Real>(y: &mut Array2<F>, bias: &Array1<F>) {
    for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
}

pub fn relu_inplace<F: Real>(y: &mut Array2<F>) {
    y.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeroes `grad` wherever the (post-activation) output was not positive.
pub fn relu_backward<F: Real>(grad: &mut Array2<F>, output: &Array2<F>) {
    ndarray::Zip::from(grad)
        .and(output)
        .for_each(|g, &o| {
            if o <= F::zero() {
                *g = F::zero();
            }
        });
}

pub const L2_EPS: f64 = 1e-12;

/// Normalizes every column to unit ℓ2 norm; returns the norms used.
pub fn l2_normalize_columns<F: Real>(x: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let eps = F::of(L2_EPS);
    let norms: Array1<F> = x
        .map_axis(Axis(0), |col| (col.iter().map(|&v| v * v).sum::<F>() + eps).sqrt());
    let mut y = x.clone();
    for (mut col, &n) in y.axis_iter_mut(Axis(1)).zip(norms.iter()) {
        col.mapv_inplace(|v| v / n);
    }
    (y, norms)
}

/// Gradient of column ℓ2 normalization: `(dy - y (y·dy)) / n`.
pub fn l2_normalize_backward<F: Real>(dy: &Array2<F>, y: &Array2<F>, norms: &Array1<F>) -> Array2<F> {
    let mut dx = dy.clone();
    for ((mut dcol, ycol), &n) in dx
        .axis_iter_mut(Axis(1))
        .zip(y.axis_iter(Axis(1)))
        .zip(norms.iter())
    {
        let dot: F = dcol.iter().zip(ycol.iter()).map(|(&a, &b)| a * b).sum();
        ndarray::Zip::from(&mut dcol)
            .and(&ycol)
            .for_each(|d, &yv| *d = (*d - yv * dot) / n);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Direct convolution, used to check im2col + GEMM.
    fn conv_direct(x: &Array2<f64>, g: Geometry, w: &Array2<f64>, k: usize, stride: usize) -> Array2<f64> {
        let out = g.conv_out(k, stride);
        let cin = x.nrows();
        let pad = (k / 2) as isize;
        let mut y = Array2::zeros((w.nrows(), out.columns()));
        for o in 0..w.nrows() {
            for b in 0..g.batch {
                for oy in 0..out.height {
                    for ox in 0..out.width {
                        let mut acc = 0.0;
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad;
                                    let ix = (ox * stride + kx) as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let col = b * g.height * g.width + iy as usize * g.width + ix as usize;
                                    acc += w[[o, (c * k + ky) * k + kx]] * x[[c, col]];
                                }
                            }
                        }
                        y[[o, b * out.height * out.width + oy * out.width + ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_matches_direct_conv() {
        let g = Geometry { batch: 2, height: 5, width: 6 };
        let x = Array2::from_shape_fn((3, g.columns()), |(c, i)| ((c * 31 + i * 7) % 11) as f64 - 5.0);
        let w = Array2::from_shape_fn((4, 27), |(o, i)| ((o * 13 + i * 3) % 7) as f64 - 3.0);
        for stride in [1, 2] {
            let (cols, _) = im2col(&x, g, 3, stride);
            let y = matmul(w.view(), cols.view());
            assert_eq!(y, conv_direct(&x, g, &w, 3, stride));
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = Geometry { batch: 2, height: 4, width: 4 };
        let x = Array2::from_shape_fn((2, g.columns()), |(c, i)| (c + 2 * i) as f64 * 0.1);
        let (cols, _) = im2col(&x, g, 3, 2);
        let c = Array2::from_shape_fn(cols.raw_dim(), |(r, i)| ((r * 5 + i) % 9) as f64 - 4.0);
        let lhs: f64 = (&cols * &c).sum();
        let rhs: f64 = (&x * &col2im(&c, 2, g, 3, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn l2_columns_have_unit_norm() {
        let x = array![[3.0f64, 0.5], [4.0, -2.0]];
        let (y, n) = l2_normalize_columns(&x);
        assert!((n[0] - 5.0).abs() < 1e-9);
        for col in y.axis_iter(Axis(1)) {
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
