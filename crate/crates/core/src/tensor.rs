//! Dense row-major tensors and the handful of kernels the layers are built on.
//!
//! Everything here is generic over [`Element`] so the same code runs in
//! `f64` for gradient checks and `f32` for timing.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type stored in tensors and checkpoints.
pub trait Element:
    Float + FromPrimitive + Default + Debug + Display + Sum + AddAssign + Send + Sync + 'static
{
    /// Width in bytes, as recorded in checkpoint headers.
    const WIDTH: u8;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` must be exactly `WIDTH` long.
    fn read_le(bytes: &[u8]) -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float width")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float widens to f64")
    }
}

impl Element for f32 {
    const WIDTH: u8 = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Element for f64 {
    const WIDTH: u8 = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Dense N-dimensional array. 4-D tensors are (batch, channels, height, width).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| {
            if i / n == i % n {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::of(v.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Frobenius inner product, accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.to_f64_lossless() * b.to_f64_lossless())
            .sum())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Dimension(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_ndim(&self, n: usize, what: &str) -> Result<()> {
        if self.shape.len() != n {
            return Err(Error::Dimension(format!(
                "{what} must be {n}-D, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_ndim(2, "transpose operand")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, row-major, accumulating over k in order.
pub(crate) fn gemm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored as `[k×m]`.
pub(crate) fn gemm_tn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n < 8 {
        // Narrow outputs (e.g. 1×1 feature maps): walk `a` rows contiguously.
        // Each c[i, j] still accumulates over p in increasing order.
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            for j in 0..n {
                let bpj = b[p * n + j];
                for (i, &api) in arow.iter().enumerate() {
                    c[i * n + j] += api * bpj;
                }
            }
        }
        return;
    }
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `b` is stored as `[n×k]`.
pub(crate) fn gemm_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot_lanes(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product over eight interleaved partial sums, so the loop vectorizes.
/// The summation order is fixed, so results are still deterministic.
fn dot_lanes<T: Element>(x: &[T], y: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (xc, yc) = (x.chunks_exact(LANES), y.chunks_exact(LANES));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Sliding-window geometry shared by convolution, its transpose and im2col.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output spatial size for an `h×w` input. Partial windows at the
    /// far edge are dropped (floor division).
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config(format!(
                "kernel {:?} and stride {:?} must be positive",
                self.kernel, self.stride
            )));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Config(format!(
                "kernel {:?} does not fit a {h}x{w} input with padding {:?}",
                self.kernel, self.pad
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    /// Input size whose `output_size` under the transposed map is `h×w`.
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        let full_h = (h - 1) * sh + kh;
        let full_w = (w - 1) * sw + kw;
        if full_h <= 2 * ph || full_w <= 2 * pw {
            return Err(Error::Config(format!(
                "transposed window {self:?} on {h}x{w} yields an empty output"
            )));
        }
        Ok((full_h - 2 * ph, full_w - 2 * pw))
    }
}

/// Unfold a `[C×H×W]` slice into a `[(C·kh·kw) × (Ho·Wo)]` column matrix.
pub(crate) fn im2col_into<T: Element>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    win: &Window,
    (ho, wo): (usize, usize),
    out: &mut [T],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    let cols = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatter-add columns back onto `[C×H×W]`.
/// `out` is accumulated into, not overwritten.
pub(crate) fn col2im_into<T: Element>(
    cols_data: &[T],
    (c, h, w): (usize, usize, usize),
    win: &Window,
    (ho, wo): (usize, usize),
    out: &mut [T],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    let cols = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &cols_data[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut out[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Receptive-field unfolding of a `[C×H×W]` tensor.
pub fn im2col<T: Element>(x: &Tensor<T>, win: &Window) -> Result<Tensor<T>> {
    x.expect_ndim(3, "im2col input")?;
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (ho, wo) = win.output_size(h, w)?;
    let rows = c * win.kernel.0 * win.kernel.1;
    let mut out = vec![T::zero(); rows * ho * wo];
    im2col_into(&x.data, (c, h, w), win, (ho, wo), &mut out);
    Tensor::new(vec![rows, ho * wo], out)
}

/// Sum columns back into a `[channels×height×width]` tensor; overlapping
/// windows accumulate.
pub fn col2im<T: Element>(
    cols: &Tensor<T>,
    (channels, height, width): (usize, usize, usize),
    win: &Window,
) -> Result<Tensor<T>> {
    cols.expect_ndim(2, "col2im input")?;
    let (ho, wo) = win.output_size(height, width)?;
    let rows = channels * win.kernel.0 * win.kernel.1;
    if cols.shape != [rows, ho * wo] {
        return Err(Error::Config(format!(
            "columns of shape {:?} do not match geometry {channels}x{height}x{width} \
             with {win:?} (expected [{rows}, {}])",
            cols.shape,
            ho * wo
        )));
    }
    let mut out = vec![T::zero(); channels * height * width];
    col2im_into(&cols.data, (channels, height, width), win, (ho, wo), &mut out);
    Tensor::new(vec![channels, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_dot_product() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[7, 5], 1);
        let b = random(&[5, 3], 2);
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = random(&[2, 3], 1);
        let b = random(&[2, 3], 2);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        let a = random(&[4, 6], 3);
        let b = random(&[4, 5], 4);
        let mut c = vec![0.0; 6 * 5];
        gemm_tn(a.data(), b.data(), &mut c, 6, 4, 5);
        let expect = a.transpose().unwrap().matmul(&b).unwrap();
        for (x, y) in c.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let d = random(&[3, 6], 5);
        let mut e = vec![0.0; 4 * 3];
        gemm_nt(a.data(), d.data(), &mut e, 4, 6, 3);
        let expect = a.matmul(&d.transpose().unwrap()).unwrap();
        for (x, y) in e.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn im2col_full_image_kernel_is_flatten() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, &Window::new((2, 2), (1, 1), (0, 0))).unwrap();
        assert_eq!(cols.shape(), &[4, 1]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn im2col_unit_kernel_is_reshape() {
        let x = random(&[1, 3, 3], 9);
        let cols = im2col(&x, &Window::new((1, 1), (1, 1), (0, 0))).unwrap();
        assert_eq!(cols.shape(), &[1, 9]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn im2col_conv_matches_nested_loops() {
        let x = random(&[2, 5, 5], 10);
        let filters = random(&[3, 2 * 3 * 3], 11);
        let win = Window::new((3, 3), (2, 2), (1, 1));
        let y = filters.matmul(&im2col(&x, &win).unwrap()).unwrap();
        let (ho, wo) = win.output_size(5, 5).unwrap();
        assert_eq!((ho, wo), (3, 3));
        for f in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    s += filters.data()[f * 18 + c * 9 + ki * 3 + kj]
                                        * x.data()[(c * 5 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[f * 9 + oy * 3 + ox];
                    assert!((got - s).abs() < 1e-12, "{got} vs {s}");
                }
            }
        }
    }

    #[test]
    fn col2im_inverts_unit_kernel() {
        let x = random(&[2, 3, 4], 12);
        let win = Window::new((1, 1), (1, 1), (0, 0));
        let back = col2im(&im2col(&x, &win).unwrap(), (2, 3, 4), &win).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn col2im_counts_overlaps() {
        let win = Window::new((2, 2), (1, 1), (0, 0));
        let ones = Tensor::filled(&[4, 4], 1.0);
        let img = col2im(&ones, (1, 3, 3), &win).unwrap();
        assert_eq!(
            img.data(),
            &[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn col2im_rejects_inconsistent_geometry() {
        let win = Window::new((2, 2), (1, 1), (0, 0));
        let cols = Tensor::filled(&[4, 5], 1.0);
        assert!(matches!(
            col2im(&cols, (1, 3, 3), &win),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn oversized_kernel_is_config_error() {
        let x = random(&[1, 2, 2], 1);
        let win = Window::new((5, 5), (1, 1), (0, 0));
        assert!(matches!(im2col(&x, &win), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn im2col_col2im_adjoint(
            c in 1usize..3, h in 1usize..7, w in 1usize..7,
            kh in 1usize..4, kw in 1usize..4,
            sh in 1usize..3, sw in 1usize..3,
            ph in 0usize..2, pw in 0usize..2,
            seed in any::<u64>(),
        ) {
            let win = Window::new((kh, kw), (sh, sw), (ph, pw));
            prop_assume!(win.output_size(h, w).is_ok());
            let x = random(&[c, h, w], seed);
            let cols = im2col(&x, &win).unwrap();
            let y = random(cols.shape(), seed.wrapping_add(1));
            let lhs = cols.dot(&y).unwrap();
            let rhs = x.dot(&col2im(&y, (c, h, w), &win).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn identity_matmul_is_bitwise(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
            let x = random(&[m, n], seed);
            prop_assert_eq!(Tensor::identity(m).matmul(&x).unwrap(), x);
        }

        #[test]
        fn reshape_round_trip(seed in any::<u64>()) {
            let x = random(&[2, 3, 4], seed);
            let back = x.clone().reshape(&[24]).unwrap().reshape(&[2, 3, 4]).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
