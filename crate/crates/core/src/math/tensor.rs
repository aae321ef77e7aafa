use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
///
/// Storage is reference counted, so cloning is cheap and a tensor never
/// changes once built. Most operations treat the tensor as a matrix whose
/// column count is the last extent.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f32]>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: data.into(),
        })
    }

    /// Internal constructor for callers that already guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: data.into(),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    /// Rows of `depth` zeros with a one at each index.
    pub fn one_hot(indices: &[usize], depth: usize) -> Self {
        let mut data = vec![0.0; indices.len() * depth];
        for (row, &i) in indices.iter().enumerate() {
            assert!(i < depth, "one_hot index {i} out of range for depth {depth}");
            data[row * depth + i] = 1.0;
        }
        Self::from_parts(vec![indices.len(), depth], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Extent of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as a `[numel / cols, cols]` matrix.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.numel() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    /// Stack equally sized rows into a `[rows.len(), width]` matrix.
    pub fn stack_rows<R: AsRef<[f32]>>(rows: &[R], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: vec![width],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self::from_parts(vec![rows.len(), width], data))
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            GemmOperand::normal(&self.data, k),
            GemmOperand::normal(&rhs.data, n),
            &mut out,
            false,
        );
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self) -> Tensor {
        let c = self.cols();
        let mut out = self.data.to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        Self::from_parts(self.shape.clone(), out)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= SHOWN {
            write!(f, "{:?}", &self.data[..])
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f32>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}

/// A matrix operand for [`gemm`], optionally read transposed.
pub(crate) struct GemmOperand<'a> {
    data: &'a [f32],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> GemmOperand<'a> {
    /// Row-major matrix with `cols` columns.
    pub(crate) fn normal(data: &'a [f32], cols: usize) -> Self {
        GemmOperand {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix that has `cols` columns.
    pub(crate) fn transposed(data: &'a [f32], cols: usize) -> Self {
        GemmOperand {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `out (+)= a[m,k] · b[k,n]`, row-major output.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: GemmOperand<'_>,
    b: GemmOperand<'_>,
    out: &mut [f32],
    accumulate: bool,
) {
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe in-bounds views of the given slices; the
    // assertions below pin the extents matrixmultiply will touch.
    assert!(a.data.len() >= max_index(m, k, a.row_stride, a.col_stride));
    assert!(b.data.len() >= max_index(k, n, b.row_stride, b.col_stride));
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_is_noop() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = a.matmul(&Tensor::identity(3)).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_rejects_bad_inner_dims_with_both_shapes() {
        let a = Tensor::zeros([2, 3]);
        let b = Tensor::zeros([4, 5]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = Tensor::vector(vec![0.0, 0.0]).softmax();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn transposed_gemm_matches_manual_product() {
        // a is [2,3]; compute aᵀ·a = [3,3]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 9];
        gemm(
            3,
            2,
            3,
            GemmOperand::transposed(&a, 3),
            GemmOperand::normal(&a, 3),
            &mut out,
            false,
        );
        assert_eq!(out, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
