//! Products that are truncated while they are formed.
//!
//! The exact product of two trains has ranks `r_a * r_b`; rounding it
//! afterwards costs `O(d n (r_a r_b)^3)`. Here the product is swept left to
//! right, one core at a time, and every new bond is truncated immediately, so
//! the largest dense block is `(R n) x (r_a r_b)` with `R` the truncated rank.
//! Both operands are right-orthogonalized first, so the part of the product
//! to the right of the current bond cannot amplify what is discarded there by
//! more than a factor depending only on the operand ranks. A final standard
//! rounding brings the result to the requested accuracy and minimal ranks.

use libm::sqrt;
use super::tensor::{Core, TtTensor};
use super::{check_same, RoundingPolicy, TtMatrix, ZERO_NORM};
use crate::error::Result;
use crate::linalg::{self, Mat};
use alloc::vec::Vec;

/// `m * v` truncated to `policy` accuracy.
pub fn matvec_truncated(m: &TtMatrix, v: &TtTensor, policy: RoundingPolicy) -> Result<TtTensor> {
    check_same(m.cols(), v.shape())?;
    let m = m.right_orthogonalized();
    let x = v.right_orthogonalized();
    let ones = alloc::vec![1; m.dim()];
    let step = operator_step(&m, &x, &ones);
    sweep(m.rows().modes(), step, policy)
}

/// `a * b` truncated to `policy` accuracy.
pub fn matmul_truncated(a: &TtMatrix, b: &TtMatrix, policy: RoundingPolicy) -> Result<TtMatrix> {
    check_same(a.cols(), b.rows())?;
    let a = &a.right_orthogonalized();
    let x = b.tt().right_orthogonalized();
    let step = operator_step(a, &x, b.cols().modes());
    let modes: Vec<usize> = a
        .rows()
        .modes()
        .iter()
        .zip(b.cols().modes())
        .map(|(m, p)| m * p)
        .collect();
    let tt = sweep(&modes, step, policy)?;
    Ok(TtMatrix::from_parts(a.rows().clone(), b.cols().clone(), tt))
}

/// Zip-up step for `m` applied to a train whose core `k` has mode
/// `n_k * extra[k]` (column index of `m` fastest). The new block has rows
/// `(p, i + m_k l)` and columns `(b, e)`.
fn operator_step<'a>(m: &'a TtMatrix, x: &'a TtTensor, extra: &'a [usize]) -> impl Fn(usize, &Mat) -> Mat + 'a {
    move |k: usize, carry: &Mat| -> Mat {
        let a = &m.tt().cores()[k];
        let xc = &x.cores()[k];
        let (mk, nk, pk) = (m.rows().modes()[k], m.cols().modes()[k], extra[k]);
        let (ra, rb) = (a.left(), a.right());
        let (xl, xr) = (xc.left(), xc.right());
        let r = carry.nrows();
        // Z[(p + R a), (j + n c)] = sum_g C[p, a + ra g] x[g, j, c],  c = l + pk e
        let c2 = Mat::from_column_slice(r * ra, xl, carry.as_slice());
        let xm = Mat::from_column_slice(xl, nk * pk * xr, xc.data());
        let z = c2 * xm;
        // A'[(a + ra j), (i + m b)]
        let ap = Mat::from_fn(ra * nk, mk * rb, |row, col| {
            let (aa, j) = (row % ra, row / ra);
            let (i, b) = (col % mk, col / mk);
            a.get(aa, i + mk * j, b)
        });
        let mut out = Mat::zeros(r * mk * pk, rb * xr);
        let block = r * ra * nk;
        for e in 0..xr {
            for l in 0..pk {
                let c = l + pk * e;
                let zc = Mat::from_column_slice(r, ra * nk, &z.as_slice()[block * c..block * (c + 1)]);
                let t = zc * &ap;
                for b in 0..rb {
                    for i in 0..mk {
                        let row0 = r * (i + mk * l);
                        for p in 0..r {
                            out[(row0 + p, b + rb * e)] = t[(p, i + mk * b)];
                        }
                    }
                }
            }
        }
        out
    }
}

/// `a ⊙ b` truncated to `policy` accuracy.
pub fn hadamard_truncated(a: &TtTensor, b: &TtTensor, policy: RoundingPolicy) -> Result<TtTensor> {
    check_same(a.shape(), b.shape())?;
    let a = a.right_orthogonalized();
    let b = b.right_orthogonalized();
    let modes = a.shape().modes().to_vec();
    let step = |k: usize, carry: &Mat| -> Mat {
        let ac = &a.cores()[k];
        let bc = &b.cores()[k];
        let n = modes[k];
        let (al, ar) = (ac.left(), ac.right());
        let (bl, br) = (bc.left(), bc.right());
        let r = carry.nrows();
        let c2 = Mat::from_column_slice(r * al, bl, carry.as_slice());
        let bm = Mat::from_column_slice(bl, n * br, bc.data());
        let z = c2 * bm;
        let mut out = Mat::zeros(r * n, ar * br);
        for e in 0..br {
            for i in 0..n {
                let off = r * al * (i + n * e);
                let zie = Mat::from_column_slice(r, al, &z.as_slice()[off..off + r * al]);
                let t = zie * ac.slice(i);
                for bb in 0..ar {
                    for p in 0..r {
                        out[(p + r * i, bb + ar * e)] = t[(p, bb)];
                    }
                }
            }
        }
        out
    };
    sweep(&modes, step, policy)
}

fn sweep<F>(modes: &[usize], step: F, policy: RoundingPolicy) -> Result<TtTensor>
where
    F: Fn(usize, &Mat) -> Mat,
{
    let d = modes.len();
    let half = policy.with_epsilon(policy.epsilon * 0.5);
    let scale = if d > 1 { sqrt((d - 1) as f64) } else { 1.0 };
    let mut carry = Mat::from_element(1, 1, 1.0);
    let mut cores = Vec::with_capacity(d);
    for (k, &n) in modes.iter().enumerate() {
        let block = step(k, &carry);
        let r = carry.nrows();
        if k == d - 1 {
            cores.push(Core::from_parts(r, n, 1, block.as_slice().to_vec()));
            break;
        }
        let norm = block.norm();
        if norm < ZERO_NORM {
            let shape = super::TensorShape(modes.to_vec());
            return Ok(TtTensor::zeros(&shape));
        }
        let dec = linalg::svd(block);
        let (keep, _) = linalg::truncation_rank(&dec.s, half.epsilon * norm / scale, policy.max_rank);
        let u = dec.u.columns(0, keep).into_owned();
        cores.push(Core::from_parts(r, n, keep, u.as_slice().to_vec()));
        let mut sv = dec.vt.rows(0, keep).into_owned();
        for (row, s) in dec.s.iter().take(keep).enumerate() {
            sv.row_mut(row).scale_mut(*s);
        }
        carry = sv;
    }
    TtTensor::from_cores_unchecked(cores).round(half)
}
