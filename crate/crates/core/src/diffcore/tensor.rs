use crate::error::{Error, Result};

/// Dense rank-3 array of `f64`, row-major over `(t, q, f)`.
///
/// Lower-rank values use leading unit axes: a bias vector of length `m`
/// is `[1, 1, m]`, a `k × m` matrix is `[1, k, m]`, a scalar is `[1, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::shape("Tensor3::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 3], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1, 1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: [1, 1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new([1, rows, cols], data)
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for t in 0..shape[0] {
            for q in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f(t, q, k));
                }
            }
        }
        Self { shape, data }
    }

    /// `k × k` identity as `[1, k, k]`.
    pub fn eye(k: usize) -> Self {
        Self::from_fn([1, k, k], |_, i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn offset(&self, t: usize, q: usize, f: usize) -> usize {
        (t * self.shape[1] + q) * self.shape[2] + f
    }

    #[inline]
    pub fn get(&self, t: usize, q: usize, f: usize) -> f64 {
        self.data[self.offset(t, q, f)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, q: usize, f: usize, v: f64) {
        let o = self.offset(t, q, f);
        self.data[o] = v;
    }

    pub fn reshape(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Contiguous block of time steps `[start, start + len)`.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "time slice {start}..{} out of range for {:?}",
                start + len,
                self.shape
            )));
        }
        let stride = self.shape[1] * self.shape[2];
        Ok(Self {
            shape: [len, self.shape[1], self.shape[2]],
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
