//! Dense-oracle checks for the TT / QTT algebra.

use proptest::prelude::*;
use qttfilter_core::tt::{
    hadamard_truncated, matmul_truncated, matvec_truncated, quantize_matrix, quantize_tensor, unquantize_matrix,
    unquantize_tensor,
};
use qttfilter_core::{RoundingPolicy, TensorShape, TtMatrix, TtTensor};
use rand::{Rng, SeedableRng};

fn eps(e: f64) -> RoundingPolicy {
    RoundingPolicy::eps(e).unwrap()
}

fn rng(seed: u64) -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Dense `y = M x` with `M` column-major.
fn dense_matvec(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let mut y = vec![0.0; rows];
    for j in 0..cols {
        for i in 0..rows {
            y[i] += m[i + rows * j] * x[j];
        }
    }
    y
}

fn dense_matmul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * p];
    for q in 0..p {
        for j in 0..n {
            let bv = b[j + n * q];
            for i in 0..m {
                c[i + m * q] += a[i + m * j] * bv;
            }
        }
    }
    c
}

/// Kronecker product with the *first* factor acting on the fastest index,
/// matching the column-major multi-index convention.
fn dense_kron_first_fastest(a: &[f64], na: usize, b: &[f64], nb: usize) -> Vec<f64> {
    let n = na * nb;
    let mut out = vec![0.0; n * n];
    for jb in 0..nb {
        for ja in 0..na {
            for ib in 0..nb {
                for ia in 0..na {
                    out[(ia + na * ib) + n * (ja + na * jb)] = a[ia + na * ja] * b[ib + nb * jb];
                }
            }
        }
    }
    out
}

#[test]
fn identity_matvec_is_exact() {
    let shape = TensorShape::uniform(3, 4).unwrap();
    let v = TtTensor::from_full(&random_vec(64, 1), &shape, eps(1e-12)).unwrap();
    let id = TtMatrix::identity(&shape);
    let y = id.matvec_exact(&v).unwrap();
    assert_eq!(y.to_full().unwrap(), v.to_full().unwrap());
}

#[test]
fn kronecker_operator_matvec_matches_dense() {
    // one random 4x4 factor per mode, d = 3
    let shape = TensorShape::uniform(3, 4).unwrap();
    let factors: Vec<Vec<f64>> = (0..3).map(|k| random_vec(16, 10 + k)).collect();
    let one_mode = TensorShape::new(vec![4]).unwrap();
    let mut op = TtMatrix::from_full(&factors[0], &one_mode, &one_mode, eps(1e-14)).unwrap();
    for f in &factors[1..] {
        op = op.kron(&TtMatrix::from_full(f, &one_mode, &one_mode, eps(1e-14)).unwrap());
    }
    let dense = dense_kron_first_fastest(
        &dense_kron_first_fastest(&factors[0], 4, &factors[1], 4),
        16,
        &factors[2],
        4,
    );
    assert!(rel_err(&op.to_full().unwrap(), &dense) < 1e-14);
    let x = random_vec(64, 99);
    let v = TtTensor::from_full(&x, &shape, eps(1e-14)).unwrap();
    let y = op.matvec(&v, eps(1e-13)).unwrap();
    assert!(rel_err(&y.to_full().unwrap(), &dense_matvec(&dense, 64, &x)) < 1e-12);
}

#[test]
fn identity_matmul_and_dense_matmul() {
    let shape = TensorShape::uniform(2, 4).unwrap();
    let da = random_vec(256, 5);
    let db = random_vec(256, 6);
    let a = TtMatrix::from_full(&da, &shape, &shape, eps(1e-14)).unwrap();
    let b = TtMatrix::from_full(&db, &shape, &shape, eps(1e-14)).unwrap();
    let ia = TtMatrix::identity(&shape).matmul_exact(&a).unwrap();
    assert!(rel_err(&ia.to_full().unwrap(), &a.to_full().unwrap()) < 1e-15);
    let ab = a.matmul(&b, eps(1e-13)).unwrap();
    assert!(rel_err(&ab.to_full().unwrap(), &dense_matmul(&da, &db, 16, 16, 16)) < 1e-12);
}

#[test]
fn matrix_dense_round_trip_and_transpose() {
    let rows = TensorShape::new(vec![2, 3]).unwrap();
    let cols = TensorShape::new(vec![4, 2]).unwrap();
    let dense = random_vec(6 * 8, 8);
    let m = TtMatrix::from_full(&dense, &rows, &cols, eps(1e-14)).unwrap();
    assert!(rel_err(&m.to_full().unwrap(), &dense) < 1e-14);
    let t = m.transpose().to_full().unwrap();
    for j in 0..8 {
        for i in 0..6 {
            assert!((t[j + 8 * i] - dense[i + 6 * j]).abs() < 1e-14);
        }
    }
}

#[test]
fn diagonal_lifting_preserves_ranks_and_values() {
    let shape = TensorShape::uniform(3, 4).unwrap();
    let v = TtTensor::from_full(&random_vec(64, 3), &shape, eps(1e-12)).unwrap();
    let dm = TtMatrix::diag(&v);
    assert_eq!(dm.ranks(), v.ranks());
    let full = dm.to_full().unwrap();
    let vf = v.to_full().unwrap();
    for j in 0..64 {
        for i in 0..64 {
            let want = if i == j { vf[i] } else { 0.0 };
            assert!((full[i + 64 * j] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn diagonal_powers_are_entrywise_powers() {
    let shape = TensorShape::uniform(4, 2).unwrap();
    let lam = TtTensor::rank_one(&[vec![0.5, 0.9], vec![1.0, 0.8], vec![0.7, 1.1], vec![1.0, 0.95]]).unwrap();
    let d = TtMatrix::diag(&lam);
    let sq = d.matmul(&d, eps(1e-14)).unwrap();
    let full = sq.to_full().unwrap();
    let lf = lam.to_full().unwrap();
    for i in 0..16 {
        assert!((full[i + 16 * i] - lf[i] * lf[i]).abs() < 1e-14);
    }
    let _ = shape;
}

#[test]
fn quantize_vector_of_eight() {
    let shape = TensorShape::new(vec![8]).unwrap();
    let data: Vec<f64> = (0..8).map(|i| (i as f64).sin() + 2.0).collect();
    let t = TtTensor::from_full(&data, &shape, eps(1e-14)).unwrap();
    let q = quantize_tensor(&t).unwrap();
    assert_eq!(q.shape().modes(), &[2, 2, 2]);
    // element i of the original equals the binary-index element, LSB first
    for i in 0..8 {
        let bits = [i & 1, (i >> 1) & 1, (i >> 2) & 1];
        assert!((q.element(&bits) - data[i]).abs() < 1e-14);
    }
    let back = unquantize_tensor(&q, &shape).unwrap();
    assert!(rel_err(&back.to_full().unwrap(), &data) < 1e-15);
}

#[test]
fn quantize_three_d_round_trip() {
    let shape = TensorShape::uniform(3, 16).unwrap();
    let data = random_vec(4096, 12);
    let t = TtTensor::from_full(&data, &shape, eps(1e-14)).unwrap();
    let q = quantize_tensor(&t).unwrap();
    assert_eq!(q.dim(), 12);
    assert!(rel_err(&q.to_full().unwrap(), &data) < 1e-13);
    let back = unquantize_tensor(&q, &shape).unwrap();
    assert!(rel_err(&back.to_full().unwrap(), &data) < 1e-13);
}

#[test]
fn quantize_rejects_non_power_of_two() {
    let shape = TensorShape::new(vec![4, 6]).unwrap();
    let t = TtTensor::ones(&shape);
    assert!(quantize_tensor(&t).is_err());
}

#[test]
fn quantize_needs_at_least_one_binary_mode() {
    let shape = TensorShape::new(vec![1, 1]).unwrap();
    assert!(quantize_tensor(&TtTensor::ones(&shape)).is_err());
}

#[test]
fn quantize_matrix_round_trip() {
    let shape = TensorShape::uniform(2, 4).unwrap();
    let dense = random_vec(256, 31);
    let m = TtMatrix::from_full(&dense, &shape, &shape, eps(1e-14)).unwrap();
    let q = quantize_matrix(&m).unwrap();
    assert_eq!(q.dim(), 4);
    assert!(rel_err(&q.to_full().unwrap(), &dense) < 1e-13);
    let back = unquantize_matrix(&q, &shape, &shape).unwrap();
    assert!(rel_err(&back.to_full().unwrap(), &dense) < 1e-13);
}

#[test]
fn truncated_products_match_exact_products() {
    let shape = TensorShape::new(vec![2; 10]).unwrap();
    // smooth data so that the products are genuinely compressible
    let f: Vec<f64> = (0..1024).map(|i| (-((i as f64) / 300.0 - 1.5).powi(2)).exp()).collect();
    let g: Vec<f64> = (0..1024).map(|i| ((i as f64) / 97.0).cos() + 1.5).collect();
    let a = TtTensor::from_full(&f, &shape, eps(1e-12)).unwrap();
    let b = TtTensor::from_full(&g, &shape, eps(1e-12)).unwrap();
    let h = hadamard_truncated(&a, &b, eps(1e-8)).unwrap();
    let want: Vec<f64> = f.iter().zip(&g).map(|(x, y)| x * y).collect();
    assert!(rel_err(&h.to_full().unwrap(), &want) < 1e-8);

    let dense_op: Vec<f64> = (0..1024 * 1024)
        .map(|k| {
            let (i, j) = ((k % 1024) as f64, (k / 1024) as f64);
            (-(i - j).abs() / 50.0).exp() / 30.0
        })
        .collect();
    let op = TtMatrix::from_full(&dense_op, &shape, &shape, eps(1e-12)).unwrap();
    let y = matvec_truncated(&op, &a, eps(1e-8)).unwrap();
    let want = dense_matvec(&dense_op, 1024, &f);
    assert!(rel_err(&y.to_full().unwrap(), &want) < 1e-8);
}

#[test]
fn truncated_matmul_matches_dense_matmul() {
    let rows = TensorShape::new(vec![2, 3, 2]).unwrap();
    let inner = TensorShape::new(vec![3, 2, 2]).unwrap();
    let cols = TensorShape::new(vec![2, 2, 3]).unwrap();
    let da = random_vec(12 * 12, 41);
    let db = random_vec(12 * 12, 42);
    let a = TtMatrix::from_full(&da, &rows, &inner, eps(1e-14)).unwrap();
    let b = TtMatrix::from_full(&db, &inner, &cols, eps(1e-14)).unwrap();
    let c = matmul_truncated(&a, &b, eps(1e-12)).unwrap();
    assert_eq!(c.rows(), &rows);
    assert_eq!(c.cols(), &cols);
    assert!(rel_err(&c.to_full().unwrap(), &dense_matmul(&da, &db, 12, 12, 12)) < 1e-11);
    let exact = a.matmul_exact(&b).unwrap();
    assert!(c.max_rank() <= exact.max_rank());
}

#[test]
fn truncated_matmul_respects_tolerance_on_smooth_operators() {
    let shape = TensorShape::new(vec![2; 8]).unwrap();
    let n = 256;
    let da: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = ((k % n) as f64, (k / n) as f64);
            (-(i - j).abs() / 20.0).exp()
        })
        .collect();
    let a = TtMatrix::from_full(&da, &shape, &shape, eps(1e-12)).unwrap();
    let c = matmul_truncated(&a, &a, eps(1e-6)).unwrap();
    let want = dense_matmul(&da, &da, n, n, n);
    assert!(rel_err(&c.to_full().unwrap(), &want) < 1e-6);
}

fn arb_shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 1..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_homomorphism(modes in arb_shape(), seed in 0u64..10_000) {
        let shape = TensorShape::new(modes).unwrap();
        let n = shape.size();
        let da = random_vec(n, seed);
        let db = random_vec(n, seed + 1);
        let a = TtTensor::from_full(&da, &shape, eps(1e-14)).unwrap();
        let b = TtTensor::from_full(&db, &shape, eps(1e-14)).unwrap();
        let s: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x + y).collect();
        prop_assert!(rel_err(&a.add(&b).unwrap().to_full().unwrap(), &s) < 1e-10);
        let h: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x * y).collect();
        prop_assert!(rel_err(&a.hadamard(&b).unwrap().to_full().unwrap(), &h) < 1e-10);
        let sum: f64 = da.iter().sum();
        prop_assert!((a.sum() - sum).abs() <= 1e-10 * da.iter().map(|v| v.abs()).sum::<f64>());
        let sa = a.add(&b).unwrap().sum();
        prop_assert!((sa - a.sum() - b.sum()).abs() <= 1e-10 * (a.sum().abs() + b.sum().abs() + 1.0));
    }

    #[test]
    fn rounding_contract(modes in prop::collection::vec(2usize..=5, 2..=4), seed in 0u64..10_000, e in 1e-8f64..1e-1) {
        let shape = TensorShape::new(modes).unwrap();
        let data = random_vec(shape.size(), seed);
        let x = TtTensor::from_full(&data, &shape, eps(1e-15)).unwrap();
        let x = x.add(&x.scale(0.5).unwrap()).unwrap();
        let r = x.round(eps(e)).unwrap();
        let full = x.to_full().unwrap();
        prop_assert!(rel_err(&r.to_full().unwrap(), &full) <= e * (1.0 + 1e-9));
        for (rr, rx) in r.ranks().iter().zip(x.ranks()) {
            prop_assert!(*rr <= rx);
        }
    }

    #[test]
    fn round_trip_within_tolerance(modes in prop::collection::vec(1usize..=6, 1..=4), seed in 0u64..10_000, e in 1e-10f64..1e-1) {
        let shape = TensorShape::new(modes).unwrap();
        let data = random_vec(shape.size(), seed);
        let t = TtTensor::from_full(&data, &shape, eps(e)).unwrap();
        prop_assert!(rel_err(&t.to_full().unwrap(), &data) <= e * (1.0 + 1e-9));
    }

    #[test]
    fn quantize_is_a_value_bijection(bits in prop::collection::vec(0usize..=3, 1..=3), seed in 0u64..10_000) {
        prop_assume!(bits.iter().any(|&b| b > 0));
        let shape = TensorShape::new(bits.iter().map(|&b| 1usize << b).collect()).unwrap();
        let data = random_vec(shape.size(), seed);
        let t = TtTensor::from_full(&data, &shape, eps(1e-15)).unwrap();
        let q = quantize_tensor(&t).unwrap();
        let flat = q.to_full().unwrap();
        prop_assert!(rel_err(&flat, &data) < 1e-13);
        let back = unquantize_tensor(&q, &shape).unwrap();
        prop_assert_eq!(back.shape(), &shape);
        prop_assert!(rel_err(&back.to_full().unwrap(), &data) < 1e-13);
    }
}
