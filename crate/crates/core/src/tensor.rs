//! Dense tensors and the switching operators.
//!
//! Storage is row-major: the last index varies fastest. Every operator here is
//! a pure function of its arguments.
//!
//! | operator | result |
//! |----------|--------|
//! | [`cross_product`] | `c[i, J] = a[i] * b[J]` |
//! | [`hadamard`] | `c[.., j, i] = t[.., j, i] * m[j, i]` |
//! | [`reduce_last`] | `c[..] = sum_i t[.., i]` |
//! | [`expand`] | `H(W x) (x) x` |
//! | [`contract`] | `reduce_last(hadamard(z, W))` |
//! | [`ternary_expand`] | `H(W x) (x) z` |

use std::fmt;

use crate::error::{Error, Result};

/// Switching decision for a single pre-activation.
///
/// A unit sitting exactly at zero is inactive (`H(0) = 0`), so `expand`
/// followed by `contract` matches `max(0, v)` at the boundary too.
#[inline]
pub fn is_active(pre_activation: f64) -> bool {
    pre_activation > 0.0
}

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl DenseTensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly and holds
    /// only finite values. An empty `shape` denotes a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for results of operators on finite inputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "dimensions must be positive, got {shape:?}"
        );
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (k, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {k} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    /// Mutable view of the flat storage. Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index order mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let k = self.flat_index(index);
        self.data[k] = value;
    }

    /// Reinterprets the storage under a new shape with the same entry count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.order(), 2, "rows() needs a matrix");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.order(), 2, "cols() needs a matrix");
        self.shape[1]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let c = self.cols();
        &self.data[j * c..(j + 1) * c]
    }

    /// Matrix-vector product `self * x` for an order-2 tensor.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.order() != 2 || self.cols() != x.len() {
            return Err(Error::shape(format!(
                "cannot multiply {:?} by a vector of length {}",
                self.shape,
                x.len()
            )));
        }
        Ok((0..self.rows()).map(|j| dot(self.row(j), x)).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Largest absolute entry-wise difference; `inf` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn require_order1(t: &DenseTensor, what: &str) -> Result<()> {
    if t.order() != 1 {
        return Err(Error::shape(format!(
            "{what} must be order-1, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn require_trailing(z: &DenseTensor, w: &DenseTensor) -> Result<()> {
    if w.order() != 2 || z.order() < 2 || z.shape()[z.order() - 2..] != *w.shape() {
        return Err(Error::shape(format!(
            "trailing dimensions of {:?} do not match matrix {:?}",
            z.shape(),
            w.shape()
        )));
    }
    Ok(())
}

/// Entry-wise Heaviside step with `H(0) = 0`.
pub fn heaviside(t: &DenseTensor) -> DenseTensor {
    t.map(|v| if is_active(v) { 1.0 } else { 0.0 })
}

/// Vector-tensor cross product: `c[i, J] = a[i] * b[J]`.
pub fn cross_product(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    require_order1(a, "left operand of the cross product")?;
    let mut shape = Vec::with_capacity(1 + b.order());
    shape.push(a.len());
    shape.extend_from_slice(b.shape());
    let mut data = Vec::with_capacity(a.len() * b.len());
    for &ai in a.data() {
        data.extend(b.data().iter().map(|&bj| ai * bj));
    }
    Ok(DenseTensor::from_parts(shape, data))
}

/// Tensor-matrix Hadamard product, broadcasting `m` over the leading axes of `t`.
pub fn hadamard(t: &DenseTensor, m: &DenseTensor) -> Result<DenseTensor> {
    require_trailing(t, m)?;
    let block = m.len();
    let data = t
        .data()
        .chunks_exact(block)
        .flat_map(|chunk| chunk.iter().zip(m.data()).map(|(a, b)| a * b))
        .collect();
    Ok(DenseTensor::from_parts(t.shape().to_vec(), data))
}

/// Sums out the last axis (`t x 1^n`).
pub fn reduce_last(t: &DenseTensor) -> Result<DenseTensor> {
    let Some((&n, lead)) = t.shape().split_last() else {
        return Err(Error::shape("cannot reduce an order-0 tensor"));
    };
    let data = t.data().chunks_exact(n).map(|c| c.iter().sum()).collect();
    Ok(DenseTensor::from_parts(lead.to_vec(), data))
}

fn activation_mask(x: &DenseTensor, w: &DenseTensor) -> Result<Vec<bool>> {
    require_order1(x, "expansion input")?;
    if w.order() != 2 || w.cols() != x.len() {
        return Err(Error::shape(format!(
            "weights {:?} do not accept an input of length {}",
            w.shape(),
            x.len()
        )));
    }
    Ok((0..w.rows())
        .map(|j| is_active(dot(w.row(j), x.data())))
        .collect())
}

/// Nonlinear expansion `H(W x) (x) x`: row `j` is a copy of `x` when unit `j`
/// is active and zero otherwise.
pub fn expand(x: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    ternary_expand(x, x, w)
}

/// Linear contraction `(Z . W) x 1^n`: entry `(.., j) = sum_i z[.., j, i] w[j, i]`.
pub fn contract(z: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    require_trailing(z, w)?;
    let n = w.cols();
    let rows = w.rows();
    let data = z
        .data()
        .chunks_exact(n)
        .enumerate()
        .map(|(k, chunk)| dot(chunk, w.row(k % rows)))
        .collect();
    Ok(DenseTensor::from_parts(z.shape()[..z.order() - 1].to_vec(), data))
}

/// Ternary expansion `H(W x) (x) z`: the whole of `z` is copied into slot `j`
/// when unit `j` is active, zeros otherwise.
pub fn ternary_expand(z: &DenseTensor, x: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    let mask = activation_mask(x, w)?;
    Ok(switch_copy(z, &mask))
}

/// Stacks `z` or a zero block for each entry of `mask`.
pub(crate) fn switch_copy(z: &DenseTensor, mask: &[bool]) -> DenseTensor {
    let mut shape = Vec::with_capacity(1 + z.order());
    shape.push(mask.len());
    shape.extend_from_slice(z.shape());
    let mut data = vec![0.0; mask.len() * z.len()];
    for (slot, &on) in data.chunks_exact_mut(z.len()).zip(mask) {
        if on {
            slot.copy_from_slice(z.data());
        }
    }
    DenseTensor::from_parts(shape, data)
}

/// Row-major flattening to an order-1 tensor.
pub fn vec_flatten(t: &DenseTensor) -> DenseTensor {
    DenseTensor::from_parts(vec![t.len()], t.data().to_vec())
}
