use crate::{Result, Scalar, TensorError};

/// Dense n-dimensional array with value semantics.
///
/// Rank 0 (empty shape) is a scalar, rank 1 a vector, rank 2 a row-major
/// matrix. Higher ranks are storable but no op produces them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataShapeMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Single element of a rank-0 or single-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::UnsupportedShape {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    pub fn at2(&self, row: usize, col: usize) -> F {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise accumulate, used by gradient summation.
    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

// Raw (non-recorded) linear algebra used by both forward and backward passes.

pub(crate) fn ew<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    debug_assert_eq!(a.shape, b.shape);
    Tensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect(),
    }
}

pub(crate) fn mat_mat<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(n, b.rows());
    let mut out = vec![F::ZERO; m * p];
    for i in 0..m {
        for k in 0..n {
            let aik = a.data[i * n + k];
            for j in 0..p {
                out[i * p + j] += aik * b.data[k * p + j];
            }
        }
    }
    Tensor {
        shape: vec![m, p],
        data: out,
    }
}

pub(crate) fn mat_vec<F: Scalar>(a: &Tensor<F>, x: &Tensor<F>) -> Tensor<F> {
    let n = a.cols();
    debug_assert_eq!(n, x.numel());
    let out = a
        .data
        .chunks_exact(n)
        .map(|row| {
            let mut acc = F::ZERO;
            for (av, xv) in row.iter().zip(&x.data) {
                acc += *av * *xv;
            }
            acc
        })
        .collect();
    Tensor::vector(out)
}

/// Transpose of a rank-2 tensor; `a^T x` without materializing the transpose.
pub(crate) fn mat_t_vec<F: Scalar>(a: &Tensor<F>, x: &Tensor<F>) -> Tensor<F> {
    let (m, n) = (a.rows(), a.cols());
    debug_assert_eq!(m, x.numel());
    let mut out = vec![F::ZERO; n];
    for i in 0..m {
        let xi = x.data[i];
        for (o, av) in out.iter_mut().zip(&a.data[i * n..(i + 1) * n]) {
            *o += *av * xi;
        }
    }
    Tensor::vector(out)
}

pub(crate) fn outer<F: Scalar>(g: &Tensor<F>, x: &Tensor<F>) -> Tensor<F> {
    let (m, n) = (g.numel(), x.numel());
    let mut out = vec![F::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = g.data[i] * x.data[j];
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

pub(crate) fn transpose2<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![F::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}
