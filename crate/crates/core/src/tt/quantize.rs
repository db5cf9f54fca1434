//! Reshaping between TT and QTT layouts.
//!
//! A mode of size `2^L` becomes `L` binary modes, least significant bit first.
//! Splitting uses thin QR factorizations, so no information is discarded.

use super::tensor::{Core, TtTensor};
use super::{TensorShape, TtMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use alloc::vec;
use alloc::vec::Vec;

fn log2_exact(mode: usize, size: usize) -> Result<usize> {
    if size.is_power_of_two() {
        Ok(size.trailing_zeros() as usize)
    } else {
        Err(Error::NotPowerOfTwo { mode, size })
    }
}

/// Split every mode of `t` into binary modes.
pub fn quantize_tensor(t: &TtTensor) -> Result<TtTensor> {
    let factors = t
        .shape()
        .modes()
        .iter()
        .enumerate()
        .map(|(k, &n)| Ok(vec![2; log2_exact(k, n)?]))
        .collect::<Result<Vec<_>>>()?;
    split_all(t.cores().to_vec(), &factors).map(TtTensor::from_cores_unchecked)
}

/// Merge binary modes of `q` back into `shape`.
pub fn unquantize_tensor(q: &TtTensor, shape: &TensorShape) -> Result<TtTensor> {
    let groups = shape
        .modes()
        .iter()
        .enumerate()
        .map(|(k, &n)| log2_exact(k, n))
        .collect::<Result<Vec<_>>>()?;
    if groups.iter().sum::<usize>() != q.dim() || q.shape().modes().iter().any(|&n| n != 2) {
        return Err(Error::ShapeMismatch {
            left: q.shape().modes().to_vec(),
            right: shape.modes().to_vec(),
        });
    }
    Ok(TtTensor::from_cores_unchecked(merge_all(q.cores(), &groups)))
}

/// Split a square-moded TT matrix into `2 x 2` binary cores.
pub fn quantize_matrix(m: &TtMatrix) -> Result<TtMatrix> {
    let mut factors = Vec::with_capacity(m.dim());
    let mut cores = Vec::with_capacity(m.dim());
    for (k, core) in m.tt().cores().iter().enumerate() {
        let rows = m.rows().modes()[k];
        let cols = m.cols().modes()[k];
        let l = log2_exact(k, rows)?;
        if log2_exact(k, cols)? != l {
            return Err(Error::InvalidShape(alloc::format!(
                "mode {k}: rows {rows} and cols {cols} split into different bit counts"
            )));
        }
        factors.push(vec![4; l]);
        cores.push(permute_pairs(core, rows, l, true));
    }
    let cores = split_all(cores, &factors)?;
    let d = cores.len();
    let bits = TensorShape(vec![2; d]);
    Ok(TtMatrix::from_parts(bits.clone(), bits, TtTensor::from_cores_unchecked(cores)))
}

/// Merge a binary TT matrix back into `rows x cols` mode pairs.
pub fn unquantize_matrix(q: &TtMatrix, rows: &TensorShape, cols: &TensorShape) -> Result<TtMatrix> {
    let groups = rows
        .modes()
        .iter()
        .zip(cols.modes())
        .enumerate()
        .map(|(k, (&m, &n))| {
            let l = log2_exact(k, m)?;
            if log2_exact(k, n)? != l {
                return Err(Error::InvalidShape("row/col bit counts differ".into()));
            }
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    if groups.iter().sum::<usize>() != q.dim() || q.tt().shape().modes().iter().any(|&n| n != 4) {
        return Err(Error::ShapeMismatch {
            left: q.tt().shape().modes().to_vec(),
            right: rows.modes().to_vec(),
        });
    }
    let merged = merge_all(q.tt().cores(), &groups);
    let cores = merged
        .iter()
        .zip(rows.modes())
        .zip(&groups)
        .map(|((c, &m), &l)| permute_pairs(c, m, l, false))
        .collect();
    Ok(TtMatrix::from_parts(rows.clone(), cols.clone(), TtTensor::from_cores_unchecked(cores)))
}

/// Reorder a paired index `i + 2^l j` into `sum_t (i_t + 2 j_t) 4^t`
/// (`forward`) or back.
fn permute_pairs(core: &Core, m: usize, l: usize, forward: bool) -> Core {
    let n2 = core.mode();
    let mut out = Core::zeros(core.left(), n2, core.right());
    let left = core.left();
    for idx in 0..n2 {
        let (i, j) = (idx % m, idx / m);
        let mut inter = 0;
        for t in 0..l {
            inter |= (((i >> t) & 1) | (((j >> t) & 1) << 1)) << (2 * t);
        }
        let (src, dst) = if forward { (idx, inter) } else { (inter, idx) };
        for b in 0..core.right() {
            for a in 0..left {
                out.data_mut()[a + left * (dst + n2 * b)] = core.get(a, src, b);
            }
        }
    }
    out
}

fn split_all(cores: Vec<Core>, factors: &[Vec<usize>]) -> Result<Vec<Core>> {
    let mut out: Vec<Core> = Vec::new();
    // pending left factor from size-one modes that produce no output core
    let mut carry: Option<Mat> = None;
    for (core, f) in cores.into_iter().zip(factors) {
        let (left, mode, right) = (core.left(), core.mode(), core.right());
        let mut rem = Mat::from_column_slice(left, mode * right, core.data());
        if let Some(c) = carry.take() {
            rem = c * rem;
        }
        if f.is_empty() {
            carry = Some(rem);
            continue;
        }
        let mut r = rem.nrows();
        let mut rest_mode = mode;
        for &fac in &f[..f.len() - 1] {
            rest_mode /= fac;
            let m = Mat::from_column_slice(r * fac, rest_mode * right, rem.as_slice());
            let (q, rr) = linalg::qr(m);
            let k = q.ncols();
            out.push(Core::from_parts(r, fac, k, q.as_slice().to_vec()));
            rem = rr;
            r = k;
        }
        out.push(Core::from_parts(r, rest_mode, right, rem.as_slice().to_vec()));
    }
    if let Some(c) = carry {
        let last = out
            .pop()
            .ok_or_else(|| Error::InvalidShape("all modes have size one".into()))?;
        let merged = Mat::from_column_slice(last.left() * last.mode(), last.right(), last.data()) * c;
        out.push(Core::from_parts(last.left(), last.mode(), merged.ncols(), merged.as_slice().to_vec()));
    }
    Ok(out)
}

fn merge_all(cores: &[Core], groups: &[usize]) -> Vec<Core> {
    let mut out = Vec::with_capacity(groups.len());
    let mut pos = 0;
    for &l in groups {
        if l == 0 {
            let r = if pos == 0 { 1 } else { cores[pos - 1].right() };
            let mut id = Core::zeros(r, 1, r);
            for a in 0..r {
                id.data_mut()[a + r * a] = 1.0;
            }
            out.push(id);
            continue;
        }
        out.push(merge(&cores[pos..pos + l]));
        pos += l;
    }
    out
}

/// Contract consecutive cores into one; the first core's index is fastest.
fn merge(cores: &[Core]) -> Core {
    let left = cores[0].left();
    let mut acc = Mat::from_column_slice(left * cores[0].mode(), cores[0].right(), cores[0].data());
    let mut mode = cores[0].mode();
    for c in &cores[1..] {
        let rows = acc.nrows();
        let mut next = Mat::zeros(rows * c.mode(), c.right());
        for i in 0..c.mode() {
            let block = &acc * c.slice(i);
            next.view_mut((rows * i, 0), (rows, c.right())).copy_from(&block);
        }
        acc = next;
        mode *= c.mode();
    }
    Core::from_parts(left, mode, acc.ncols(), acc.as_slice().to_vec())
}
