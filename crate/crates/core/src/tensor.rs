//! Dense numeric storage shared by the network, the attention modules and
//! the weight blob format.
//!
//! Activations use a channel-major layout `[C][N][H][W]` so that a 3×3
//! convolution over a whole mini-batch is a single GEMM against an
//! im2col matrix whose columns run over `(sample, position)`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;

/// Floating point scalar the network is generic over.
///
/// Training runs in `f32` (the checkpoint precision); gradient checks run
/// the identical code paths in `f64`.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Sum
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::lit(0.0)
    }

    fn one() -> Self {
        Self::lit(1.0)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    /// Raw strided GEMM: `C = alpha·A·B + beta·C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major GEMM: `C (m×n) = alpha·op(A)·op(B) + beta·C`.
///
/// `A` is stored `m×k` (or `k×m` when `trans_a`), `B` is stored `k×n`
/// (or `n×k` when `trans_b`). With `beta == 0` the prior contents of `C`
/// are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths asserted above; `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A named-shape parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::lit(value); len],
        }
    }

    /// Uniform(-bound, bound) initialization.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64())).collect(),
        }
    }
}

/// Batch of feature maps in channel-major `[C][N][H][W]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.batch, self.height, self.width)
    }

    /// Spatial positions per plane.
    #[inline]
    pub fn hw(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane_offset(&self, c: usize, n: usize) -> usize {
        (c * self.batch + n) * self.hw()
    }

    #[inline]
    pub fn plane(&self, c: usize, n: usize) -> &[T] {
        let o = self.plane_offset(c, n);
        &self.data[o..o + self.hw()]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize, n: usize) -> &mut [T] {
        let o = self.plane_offset(c, n);
        let hw = self.hw();
        &mut self.data[o..o + hw]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.batch == other.batch
            && self.height == other.height
            && self.width == other.width
    }

    /// Builds a single-channel batch from sample-major images `[N][H][W]`.
    pub fn from_images(images: &[f32], batch: usize, height: usize, width: usize) -> Self {
        assert_eq!(images.len(), batch * height * width);
        FeatureMap {
            channels: 1,
            batch,
            height,
            width,
            data: images.iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }
}

/// Output spatial extent of a 3×3, pad-1 convolution.
#[inline]
pub fn conv_out_extent(extent: usize, stride: usize) -> usize {
    (extent - 1) / stride + 1
}

/// Unfolds 3×3 pad-1 patches into a `[Cin·9] × [N·Ho·Wo]` matrix.
pub fn im2col3<T: Real>(x: &FeatureMap<T>, stride: usize) -> (Vec<T>, usize, usize) {
    let ho = conv_out_extent(x.height, stride);
    let wo = conv_out_extent(x.width, stride);
    let cols_n = x.batch * ho * wo;
    let mut cols = vec![T::zero(); x.channels * 9 * cols_n];
    for ci in 0..x.channels {
        for n in 0..x.batch {
            let plane = x.plane(ci, n);
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 9 + ky * 3 + kx;
                    let base = row * cols_n + n * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        let dst = &mut cols[base + oy * wo..base + (oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < x.width as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col3`]: scatters patch gradients back onto `dx`.
pub fn col2im3<T: Real>(dcols: &[T], dx: &mut FeatureMap<T>, stride: usize) {
    let ho = conv_out_extent(dx.height, stride);
    let wo = conv_out_extent(dx.width, stride);
    let cols_n = dx.batch * ho * wo;
    let (height, width) = (dx.height, dx.width);
    for ci in 0..dx.channels {
        for n in 0..dx.batch {
            let plane = dx.plane_mut(ci, n);
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 9 + ky * 3 + kx;
                    let base = row * cols_n + n * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        let src = &dcols[base + oy * wo..base + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < width as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, n, k) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, n, k, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![f64::NAN; m * n];
            gemm(ta, tb, m, n, k, 1.0, aa, bb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), r> == <x, col2im(r)>
        let mut x = FeatureMap::<f64>::zeros(2, 2, 5, 4);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.13).sin();
        }
        for stride in [1, 2] {
            let (cols, _, _) = im2col3(&x, stride);
            let r: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.71).cos()).collect();
            let lhs: f64 = cols.iter().zip(&r).map(|(a, b)| a * b).sum();
            let mut dx = x.zeros_like();
            col2im3(&r, &mut dx, stride);
            let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
