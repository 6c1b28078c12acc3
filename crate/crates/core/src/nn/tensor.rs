use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the networks can be evaluated in.
///
/// Training runs in `f32`; the `f64` instantiation exists so gradient checks
/// can compare against a double-precision finite-difference oracle.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row-major views.
    ///
    /// # Safety
    /// The strides must describe in-bounds views of the given slices.
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

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta · c`.
///
/// `a_t` means `a` is stored as `k×m`; `b_t` means `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes asserted above; strides index within the slices.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    /// Batch of `n` flat vectors of length `len`, stored as `[n, len, 1, 1]`.
    pub fn from_rows(n: usize, len: usize, data: Vec<T>) -> Self {
        Self::from_vec([n, len, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Number of values in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Self {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Concatenate along the channel axis.
    pub fn cat_channels(a: &Self, b: &Self) -> Self {
        let [n, ca, h, w] = a.shape;
        assert_eq!(b.shape[0], n);
        assert_eq!(b.shape[2..], a.shape[2..], "spatial mismatch in channel concat");
        let cb = b.shape[1];
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..n {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Self::from_vec([n, ca + cb, h, w], data)
    }

    /// Inverse of [`Tensor::cat_channels`]: split off the first `ca` channels.
    pub fn split_channels(&self, ca: usize) -> (Self, Self) {
        let [n, c, h, w] = self.shape;
        assert!(ca <= c);
        let plane = h * w;
        let mut a = Vec::with_capacity(n * ca * plane);
        let mut b = Vec::with_capacity(n * (c - ca) * plane);
        for i in 0..n {
            let item = self.item(i);
            a.extend_from_slice(&item[..ca * plane]);
            b.extend_from_slice(&item[ca * plane..]);
        }
        (
            Self::from_vec([n, ca, h, w], a),
            Self::from_vec([n, c - ca, h, w], b),
        )
    }

    /// Concatenate along the width (time) axis.
    pub fn cat_width(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let [n, c, h, _] = parts[0].shape;
        for p in parts {
            assert_eq!([p.shape[0], p.shape[1], p.shape[2]], [n, c, h], "width concat mismatch");
        }
        let total_w: usize = parts.iter().map(|p| p.shape[3]).sum();
        let mut data = Vec::with_capacity(n * c * h * total_w);
        for i in 0..n {
            for ch in 0..c {
                for row in 0..h {
                    for p in parts {
                        let w = p.shape[3];
                        let start = ((i * c + ch) * h + row) * w;
                        data.extend_from_slice(&p.data[start..start + w]);
                    }
                }
            }
        }
        Self::from_vec([n, c, h, total_w], data)
    }

    /// Columns `[start, start + width)` of every row.
    pub fn slice_width(&self, start: usize, width: usize) -> Self {
        let [n, c, h, w] = self.shape;
        assert!(start + width <= w, "width slice out of range");
        let mut data = Vec::with_capacity(n * c * h * width);
        for row in self.data.chunks_exact(w) {
            data.extend_from_slice(&row[start..start + width]);
        }
        Self::from_vec([n, c, h, width], data)
    }

    /// Stack batch-1 (or larger) tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Self {
        assert!(!items.is_empty());
        let [_, c, h, w] = items[0].shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            assert_eq!(t.shape[1..], [c, h, w], "stack shape mismatch");
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Self::from_vec([n, c, h, w], data)
    }

    /// Batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Self {
        let len = self.item_len();
        let [_, c, h, w] = self.shape;
        Self::from_vec(
            [count, c, h, w],
            self.data[start * len..(start + count) * len].to_vec(),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}
