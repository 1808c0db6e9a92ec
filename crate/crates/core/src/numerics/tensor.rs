use std::fmt;

use super::NumericsError;

/// Dense row-major `f64` array.
///
/// Binary element-wise operations broadcast their right operand when it is
/// a scalar (one element) or a 1-D vector matching the left operand's last
/// dimension. Nothing else broadcasts.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    Row,
    Scalar,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Caller guarantees `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Stacks equally long rows into an `n × d` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(NumericsError::RaggedRows {
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), d],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::LengthMismatch {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn broadcast_kind(&self, rhs: &Tensor) -> Broadcast {
        if self.shape == rhs.shape {
            Broadcast::Same
        } else if rhs.is_scalar() {
            Broadcast::Scalar
        } else if rhs.shape.len() == 1 && rhs.len() == self.cols() && self.shape.len() >= 1 {
            Broadcast::Row
        } else {
            panic!(
                "cannot broadcast shape {:?} onto {:?}",
                rhs.shape, self.shape
            );
        }
    }

    pub fn zip(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = match self.broadcast_kind(rhs) {
            Broadcast::Same => self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            Broadcast::Scalar => {
                let b = rhs.data[0];
                self.data.iter().map(|&a| f(a, b)).collect()
            }
            Broadcast::Row => {
                let c = rhs.len();
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| f(a, rhs.data[i % c]))
                    .collect()
            }
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.zip(rhs, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.zip(rhs, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sums each row of an `n × m` matrix into a length-`n` vector.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let data = self.data.chunks(c).map(|r| r.iter().sum()).collect();
        Tensor {
            shape: vec![self.rows()],
            data,
        }
    }

    /// Column sums of an `n × m` matrix (length-`m` vector).
    pub fn sum_cols(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for r in self.data.chunks(c) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        Tensor {
            shape: vec![c],
            data: out,
        }
    }

    /// Reduces a gradient of this tensor's shape down to the shape of a
    /// broadcast right operand.
    pub(crate) fn reduce_to(&self, kind: Broadcast, target: &[usize]) -> Tensor {
        match kind {
            Broadcast::Same => self.clone(),
            Broadcast::Scalar => Tensor {
                shape: target.to_vec(),
                data: vec![self.sum()],
            },
            Broadcast::Row => self.sum_cols(),
        }
    }

    fn gemm(a: &Tensor, a_t: bool, b: &Tensor, b_t: bool) -> Tensor {
        assert_eq!(a.shape.len(), 2, "matmul lhs must be 2-D, got {:?}", a.shape);
        assert_eq!(b.shape.len(), 2, "matmul rhs must be 2-D, got {:?}", b.shape);
        let (ar, ac) = (a.shape[0], a.shape[1]);
        let (br, bc) = (b.shape[0], b.shape[1]);
        let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", a.shape, b.shape);
        let (rsa, csa) = if a_t { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if b_t { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: strides describe exactly the row-major buffers above.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    rsa,
                    csa,
                    b.data.as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        Self::gemm(self, false, rhs, false)
    }

    /// `self · rhsᵀ`
    pub fn matmul_nt(&self, rhs: &Tensor) -> Tensor {
        Self::gemm(self, false, rhs, true)
    }

    /// `selfᵀ · rhs`
    pub fn matmul_tn(&self, rhs: &Tensor) -> Tensor {
        Self::gemm(self, true, rhs, false)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        assert!(start <= end && end <= c, "column slice {start}..{end} of {c}");
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows() * w);
        for r in self.data.chunks(c) {
            data.extend_from_slice(&r[start..end]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("non-scalar") = w;
        Tensor { shape, data }
    }

    pub fn concat_cols(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rows(), rhs.rows(), "concat row counts");
        let (ca, cb) = (self.cols(), rhs.cols());
        let mut data = Vec::with_capacity(self.len() + rhs.len());
        for (ra, rb) in self.data.chunks(ca).zip(rhs.data.chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let shape = if self.shape.len() <= 1 {
            vec![ca + cb]
        } else {
            vec![self.rows(), ca + cb]
        };
        Tensor { shape, data }
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NumericsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        assert_eq!(a.matmul(&b).data(), &[58., 64., 139., 154.]);
        assert_eq!(a.matmul_nt(&b.transpose()), a.matmul(&b));
        assert_eq!(a.transpose().matmul_tn(&b), a.matmul(&b));
    }

    #[test]
    fn row_broadcast() {
        let a = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let r = Tensor::vector(vec![10., 20.]);
        assert_eq!(a.add(&r).data(), &[11., 22., 13., 24.]);
        assert_eq!(a.mul(&Tensor::scalar(2.0)).data(), &[2., 4., 6., 8.]);
        assert_eq!(a.sum_rows().data(), &[3., 7.]);
        assert_eq!(a.sum_cols().data(), &[4., 6.]);
    }

    #[test]
    fn slice_and_concat_invert() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let l = a.slice_cols(0, 1);
        let r = a.slice_cols(1, 3);
        assert_eq!(l.concat_cols(&r), a);
    }
}
