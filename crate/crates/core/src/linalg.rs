//! Small dense kernels shared by the tensor-train code.

use libm::sqrt;
use alloc::vec::Vec;
use nalgebra::DMatrix;

pub(crate) type Mat = DMatrix<f64>;

/// Thin SVD with singular values sorted in decreasing order.
pub(crate) struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub vt: Mat,
}

/// Thin SVD. Strongly rectangular inputs are first reduced by a QR step so the
/// bidiagonalization only ever sees a square-ish factor.
pub(crate) fn svd(m: Mat) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd {
            u: Mat::zeros(rows, 0),
            s: Vec::new(),
            vt: Mat::zeros(0, cols),
        };
    }
    if rows > 2 * cols {
        let qr = m.qr();
        let (q, r) = (qr.q(), qr.r());
        let inner = square_svd(r);
        return Svd {
            u: q * inner.u,
            s: inner.s,
            vt: inner.vt,
        };
    }
    if cols > 2 * rows {
        let qr = m.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let inner = square_svd(r.transpose());
        return Svd {
            u: inner.u,
            s: inner.s,
            vt: inner.vt * q.transpose(),
        };
    }
    square_svd(m)
}

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
/// Slower than bidiagonalization but reliable and accurate in relative terms.
pub(crate) fn jacobi_svd(m: Mat) -> Svd {
    let (rows, cols) = m.shape();
    debug_assert!(rows >= cols);
    let mut a = m;
    let mut v = Mat::identity(cols, cols);
    let tol = f64::EPSILON * rows as f64;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let ap = a.column(p);
                    let aq = a.column(q);
                    for (x, y) in ap.iter().zip(aq.iter()) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                }
                if gamma == 0.0 || gamma.abs() <= tol * sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + sqrt(1.0 + zeta * zeta));
                let c = 1.0 / sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(core::cmp::Ordering::Equal));
    let u = Mat::from_fn(rows, cols, |i, j| {
        let k = order[j];
        if norms[k] > 0.0 {
            a[(i, k)] / norms[k]
        } else {
            0.0
        }
    });
    let vt = Mat::from_fn(cols, cols, |i, j| v[(j, order[i])]);
    Svd {
        u,
        s: order.iter().map(|&k| norms[k]).collect(),
        vt,
    }
}

fn rotate(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * rows);
    let cp = &mut head[p * rows..(p + 1) * rows];
    let cq = &mut tail[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Relative residual above which a bidiagonal SVD result is rejected.
const SVD_CHECK: f64 = 1e-10;

/// nalgebra's implicit-shift SVD occasionally returns a wrong factorization on
/// structured, rank-deficient inputs. Every result is checked and the Jacobi
/// method is used when the check fails.
fn square_svd(m: Mat) -> Svd {
    let fast = bidiagonal_svd(m.clone());
    if trustworthy(&m, &fast) {
        return fast;
    }
    if m.nrows() >= m.ncols() {
        jacobi_svd(m)
    } else {
        let t = jacobi_svd(m.transpose());
        Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        }
    }
}

fn trustworthy(m: &Mat, dec: &Svd) -> bool {
    if dec.s.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut us = dec.u.clone();
    for (j, s) in dec.s.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    if (us * &dec.vt - m).norm() > SVD_CHECK * scale {
        return false;
    }
    let k = dec.s.len();
    let gram = dec.u.transpose() * &dec.u;
    (gram - Mat::identity(k, k)).amax() <= SVD_CHECK
}

fn bidiagonal_svd(m: Mat) -> Svd {
    let dec = m.svd(true, true);
    let u = dec.u.expect("requested U");
    let vt = dec.v_t.expect("requested V^T");
    let s: Vec<f64> = dec.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    if s.windows(2).any(|w| w[0] < w[1]) {
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(core::cmp::Ordering::Equal));
        let u = Mat::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
        let vt = Mat::from_fn(order.len(), vt.ncols(), |i, j| vt[(order[i], j)]);
        let s = order.iter().map(|&k| s[k]).collect();
        return Svd { u, s, vt };
    }
    Svd { u, s, vt }
}

/// Smallest rank whose discarded tail has Frobenius mass at most `delta`,
/// further limited by `max_rank`. Returns the rank and whether the cap bound.
pub(crate) fn truncation_rank(s: &[f64], delta: f64, max_rank: Option<usize>) -> (usize, bool) {
    if s.is_empty() {
        return (1, false);
    }
    let mut tail = 0.0;
    let mut rank = s.len();
    while rank > 1 {
        let next = tail + s[rank - 1] * s[rank - 1];
        if sqrt(next) > delta {
            break;
        }
        tail = next;
        rank -= 1;
    }
    match max_rank {
        Some(cap) if cap < rank => (cap.max(1), true),
        _ => (rank, false),
    }
}

/// Thin QR of a column-major `rows x cols` buffer.
pub(crate) fn qr(m: Mat) -> (Mat, Mat) {
    let qr = m.qr();
    (qr.q(), qr.r())
}
