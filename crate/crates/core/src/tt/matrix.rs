use super::tensor::{Core, RoundReport, TtTensor};
use super::{check_same, RoundingPolicy, TensorShape, DEFAULT_MATERIALIZE_LIMIT};
use crate::error::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Linear operator in TT-matrix format.
///
/// Core `k` has shape `r_{k-1} x m_k x n_k x r_k`. It is stored as a TT
/// tensor whose `k`-th mode has size `m_k * n_k` with combined index
/// `i + m_k * j`, so rounding, addition and norms come for free from
/// [`TtTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct TtMatrix {
    rows: TensorShape,
    cols: TensorShape,
    tt: TtTensor,
}

impl TtMatrix {
    pub fn from_tt(rows: TensorShape, cols: TensorShape, tt: TtTensor) -> Result<Self> {
        if rows.dim() != cols.dim() || rows.dim() != tt.dim() {
            return Err(Error::InvalidShape("row/col/core counts differ".into()));
        }
        for ((&m, &n), core) in rows.modes().iter().zip(cols.modes()).zip(tt.cores()) {
            if core.mode() != m * n {
                return Err(Error::InvalidShape("core mode is not rows*cols".into()));
            }
        }
        Ok(Self { rows, cols, tt })
    }

    pub(crate) fn from_parts(rows: TensorShape, cols: TensorShape, tt: TtTensor) -> Self {
        Self { rows, cols, tt }
    }

    pub fn identity(shape: &TensorShape) -> Self {
        let cores = shape
            .modes()
            .iter()
            .map(|&n| {
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    data[i + n * i] = 1.0;
                }
                Core::from_parts(1, n * n, 1, data)
            })
            .collect();
        Self::from_parts(shape.clone(), shape.clone(), TtTensor::from_cores_unchecked(cores))
    }

    pub fn zeros(rows: &TensorShape, cols: &TensorShape) -> Self {
        let paired = paired_shape(rows, cols);
        Self::from_parts(rows.clone(), cols.clone(), TtTensor::zeros(&paired))
    }

    /// Diagonal operator whose diagonal is `v`; TT ranks are those of `v`.
    pub fn diag(v: &TtTensor) -> Self {
        let cores = v
            .cores()
            .iter()
            .map(|c| {
                let n = c.mode();
                let mut out = Core::zeros(c.left(), n * n, c.right());
                let left = c.left();
                let data = out.data_mut();
                for b in 0..c.right() {
                    for i in 0..n {
                        for a in 0..left {
                            data[a + left * ((i + n * i) + n * n * b)] = c.get(a, i, b);
                        }
                    }
                }
                out
            })
            .collect();
        Self::from_parts(v.shape().clone(), v.shape().clone(), TtTensor::from_cores_unchecked(cores))
    }

    /// Compress a dense `M x N` matrix (column-major; row and column
    /// multi-indices also first-index-fastest).
    pub fn from_full(
        dense: &[f64],
        rows: &TensorShape,
        cols: &TensorShape,
        policy: RoundingPolicy,
    ) -> Result<Self> {
        if rows.dim() != cols.dim() {
            return Err(Error::InvalidShape("row and column arity differ".into()));
        }
        let (m, n) = (rows.size(), cols.size());
        if dense.len() != m * n {
            return Err(Error::EntryCount {
                expected: m * n,
                found: dense.len(),
            });
        }
        let paired = paired_shape(rows, cols);
        let mut interleaved = vec![0.0; dense.len()];
        let d = rows.dim();
        let (mut ri, mut ci) = (vec![0; d], vec![0; d]);
        for col in 0..n {
            cols.multi_index(col, &mut ci);
            for row in 0..m {
                rows.multi_index(row, &mut ri);
                interleaved[paired_index(rows, cols, &ri, &ci)] = dense[row + m * col];
            }
        }
        let tt = TtTensor::from_full(&interleaved, &paired, policy)?;
        Ok(Self::from_parts(rows.clone(), cols.clone(), tt))
    }

    pub fn to_full(&self) -> Result<Vec<f64>> {
        self.to_full_limited(DEFAULT_MATERIALIZE_LIMIT)
    }

    /// Dense `M x N` image, column-major.
    pub fn to_full_limited(&self, limit: usize) -> Result<Vec<f64>> {
        let interleaved = self.tt.to_full_limited(limit)?;
        let (m, n) = (self.rows.size(), self.cols.size());
        let d = self.rows.dim();
        let (mut ri, mut ci) = (vec![0; d], vec![0; d]);
        let mut dense = vec![0.0; m * n];
        for col in 0..n {
            self.cols.multi_index(col, &mut ci);
            for row in 0..m {
                self.rows.multi_index(row, &mut ri);
                dense[row + m * col] = interleaved[paired_index(&self.rows, &self.cols, &ri, &ci)];
            }
        }
        Ok(dense)
    }

    pub fn element(&self, row: &[usize], col: &[usize]) -> f64 {
        let idx: Vec<usize> = row
            .iter()
            .zip(col)
            .zip(self.rows.modes())
            .map(|((&i, &j), &m)| i + m * j)
            .collect();
        self.tt.element(&idx)
    }

    pub fn rows(&self) -> &TensorShape {
        &self.rows
    }

    pub fn cols(&self) -> &TensorShape {
        &self.cols
    }

    pub fn dim(&self) -> usize {
        self.tt.dim()
    }

    /// The underlying TT over paired `(row, col)` modes.
    pub fn tt(&self) -> &TtTensor {
        &self.tt
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.tt.ranks()
    }

    pub fn max_rank(&self) -> usize {
        self.tt.max_rank()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `(r_{k-1}, m_k, n_k, r_k)` entry of core `k`.
    #[inline]
    pub fn core_entry(&self, k: usize, a: usize, i: usize, j: usize, b: usize) -> f64 {
        let m = self.rows.modes()[k];
        self.tt.cores()[k].get(a, i + m * j, b)
    }

    /// Kronecker-type concatenation: the result acts as `self` on the leading
    /// modes and as `other` on the trailing ones.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = concat(&self.rows, &other.rows);
        let cols = concat(&self.cols, &other.cols);
        let mut cores = self.tt.cores().to_vec();
        cores.extend(other.tt.cores().iter().cloned());
        Self::from_parts(rows, cols, TtTensor::from_cores_unchecked(cores))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(&self.rows, &other.rows)?;
        check_same(&self.cols, &other.cols)?;
        Ok(Self::from_parts(self.rows.clone(), self.cols.clone(), self.tt.add(&other.tt)?))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0)?)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Ok(Self::from_parts(self.rows.clone(), self.cols.clone(), self.tt.scale(c)?))
    }

    pub fn round(&self, policy: RoundingPolicy) -> Result<Self> {
        Ok(self.round_report(policy)?.0)
    }

    pub fn round_report(&self, policy: RoundingPolicy) -> Result<(Self, RoundReport)> {
        let (tt, rep) = self.tt.round_report(policy)?;
        Ok((Self::from_parts(self.rows.clone(), self.cols.clone(), tt), rep))
    }

    /// Frobenius norm of the operator.
    pub fn norm(&self) -> f64 {
        self.tt.norm()
    }

    pub fn transpose(&self) -> Self {
        let cores = self
            .tt
            .cores()
            .iter()
            .zip(self.rows.modes().iter().zip(self.cols.modes()))
            .map(|(c, (&m, &n))| {
                let mut out = Core::zeros(c.left(), m * n, c.right());
                let left = c.left();
                let data = out.data_mut();
                for b in 0..c.right() {
                    for j in 0..n {
                        for i in 0..m {
                            for a in 0..left {
                                data[a + left * ((j + n * i) + m * n * b)] = c.get(a, i + m * j, b);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Self::from_parts(self.cols.clone(), self.rows.clone(), TtTensor::from_cores_unchecked(cores))
    }

    /// Exact product `self * v`; ranks multiply.
    pub fn matvec_exact(&self, v: &TtTensor) -> Result<TtTensor> {
        check_same(&self.cols, v.shape())?;
        let cores = self
            .tt
            .cores()
            .iter()
            .zip(v.cores())
            .enumerate()
            .map(|(k, (a, x))| {
                let (m, n) = (self.rows.modes()[k], self.cols.modes()[k]);
                let (ra, rb) = (a.left(), a.right());
                let (xl, xr) = (x.left(), x.right());
                let left = ra * xl;
                let right = rb * xr;
                let mut out = Core::zeros(left, m, right);
                let data = out.data_mut();
                for e in 0..xr {
                    for b in 0..rb {
                        for c in 0..xl {
                            for i in 0..m {
                                for aa in 0..ra {
                                    let mut acc = 0.0;
                                    for j in 0..n {
                                        acc += a.get(aa, i + m * j, b) * x.get(c, j, e);
                                    }
                                    data[(aa + ra * c) + left * (i + m * (b + rb * e))] = acc;
                                }
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Ok(TtTensor::from_cores_unchecked(cores))
    }

    /// Product followed by TT-rounding.
    pub fn matvec(&self, v: &TtTensor, policy: RoundingPolicy) -> Result<TtTensor> {
        self.matvec_exact(v)?.round(policy)
    }

    /// Exact operator product `self * other`; ranks multiply.
    pub fn matmul_exact(&self, other: &Self) -> Result<Self> {
        check_same(&self.cols, &other.rows)?;
        let cores = self
            .tt
            .cores()
            .iter()
            .zip(other.tt.cores())
            .enumerate()
            .map(|(k, (a, b))| {
                let m = self.rows.modes()[k];
                let n = self.cols.modes()[k];
                let p = other.cols.modes()[k];
                let (al, ar) = (a.left(), a.right());
                let (bl, br) = (b.left(), b.right());
                let left = al * bl;
                let right = ar * br;
                let mut out = Core::zeros(left, m * p, right);
                let data = out.data_mut();
                for e in 0..br {
                    for f in 0..ar {
                        for q in 0..p {
                            for c in 0..bl {
                                for i in 0..m {
                                    for aa in 0..al {
                                        let mut acc = 0.0;
                                        for j in 0..n {
                                            acc += a.get(aa, i + m * j, f) * b.get(c, j + n * q, e);
                                        }
                                        data[(aa + al * c) + left * ((i + m * q) + m * p * (f + ar * e))] =
                                            acc;
                                    }
                                }
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let tt = TtTensor::from_cores_unchecked(cores);
        Ok(Self::from_parts(self.rows.clone(), other.cols.clone(), tt))
    }

    pub fn matmul(&self, other: &Self, policy: RoundingPolicy) -> Result<Self> {
        self.matmul_exact(other)?.round(policy)
    }

    /// Copy with right-orthonormal cores `2..d`, used ahead of truncated
    /// product sweeps.
    pub fn right_orthogonalized(&self) -> Self {
        Self::from_parts(self.rows.clone(), self.cols.clone(), self.tt.right_orthogonalized())
    }
}

fn paired_shape(rows: &TensorShape, cols: &TensorShape) -> TensorShape {
    TensorShape(rows.modes().iter().zip(cols.modes()).map(|(m, n)| m * n).collect())
}

fn paired_index(rows: &TensorShape, cols: &TensorShape, ri: &[usize], ci: &[usize]) -> usize {
    let mut lin = 0;
    let mut stride = 1;
    for (((&i, &j), &m), &n) in ri.iter().zip(ci).zip(rows.modes()).zip(cols.modes()) {
        lin += stride * (i + m * j);
        stride *= m * n;
    }
    lin
}

fn concat(a: &TensorShape, b: &TensorShape) -> TensorShape {
    let mut modes = a.modes().to_vec();
    modes.extend_from_slice(b.modes());
    TensorShape(modes)
}
