//! Assembled QTT operators against directly built stencils.

use qttfilter_core::fd::{
    assemble_convection, assemble_generator, assemble_laplace, assemble_potential, laplace_1d,
    sample_field, Grid, ModelSpec, ObservationField,
};
use qttfilter_core::{RoundingPolicy, TtMatrix};
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn eps(e: f64) -> RoundingPolicy {
    RoundingPolicy::eps(e).unwrap()
}

/// Binary (LSB first, axis by axis) index of a grid node.
fn bits(grid: &Grid, node: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &l in node {
        for t in 0..grid.levels() {
            out.push((l >> t) & 1);
        }
    }
    out
}

fn entry(m: &TtMatrix, grid: &Grid, row: &[usize], col: &[usize]) -> f64 {
    m.element(&bits(grid, row), &bits(grid, col))
}

fn node_coords(grid: &Grid, node: &[usize]) -> Vec<f64> {
    node.iter().map(|&l| grid.coord(l)).collect()
}

fn all_nodes(grid: &Grid) -> Vec<Vec<usize>> {
    let n = grid.points();
    (0..grid.nodes())
        .map(|mut i| {
            (0..grid.dim())
                .map(|_| {
                    let l = i % n;
                    i /= n;
                    l
                })
                .collect()
        })
        .collect()
}

/// Generator stencil entry `A[row, col]`, conservative convection.
fn stencil_entry(grid: &Grid, model: &ModelSpec, row: &[usize], col: &[usize]) -> f64 {
    let h = grid.spacing();
    let q = model.diffusion;
    let diff: Vec<isize> = row.iter().zip(col).map(|(&r, &c)| c as isize - r as isize).collect();
    let nonzero: Vec<usize> = (0..diff.len()).filter(|&k| diff[k] != 0).collect();
    if nonzero.is_empty() {
        let x = node_coords(grid, row);
        return -q * grid.dim() as f64 / (h * h) - 0.5 * model.potential(&x);
    }
    if nonzero.len() > 1 || diff[nonzero[0]].abs() != 1 {
        return 0.0;
    }
    let k = nonzero[0];
    let xc = node_coords(grid, col);
    let fk = (model.drift[k])(&xc);
    let conv = diff[k] as f64 * fk / (2.0 * h);
    0.5 * q / (h * h) - conv
}

fn neighbours(grid: &Grid, node: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![node.to_vec()];
    for k in 0..node.len() {
        if node[k] > 0 {
            let mut c = node.to_vec();
            c[k] -= 1;
            out.push(c);
        }
        if node[k] + 1 < grid.points() {
            let mut c = node.to_vec();
            c[k] += 1;
            out.push(c);
        }
    }
    out
}

fn dense_kron(a: &[f64], na: usize, b: &[f64], nb: usize) -> Vec<f64> {
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

fn eye(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i + n * i] = 1.0;
    }
    m
}

#[test]
fn laplace_one_dimensional_is_tridiagonal() {
    let g = Grid::new(1.5, 1, 2).unwrap();
    let h = g.spacing();
    let lap = assemble_laplace(&g, eps(1e-12)).unwrap().to_full().unwrap();
    let c = 1.0 / (h * h);
    let want = [
        -2.0 * c, c, 0.0, 0.0, //
        c, -2.0 * c, c, 0.0, //
        0.0, c, -2.0 * c, c, //
        0.0, 0.0, c, -2.0 * c,
    ];
    for (a, b) in lap.iter().zip(want) {
        assert!((a - b).abs() < 1e-12 * c);
    }
}

#[test]
fn laplace_three_dimensional_matches_kronecker_sum() {
    let g = Grid::new(1.0, 3, 2).unwrap();
    let n = g.points();
    let l1 = laplace_1d(n, g.spacing());
    let i1 = eye(n);
    let i2 = eye(n * n);
    let t0 = dense_kron(&dense_kron(&l1, n, &i1, n), n * n, &i1, n);
    let t1 = dense_kron(&dense_kron(&i1, n, &l1, n), n * n, &i1, n);
    let t2 = dense_kron(&i2, n * n, &l1, n);
    let lap = assemble_laplace(&g, eps(1e-12)).unwrap().to_full().unwrap();
    let scale = 1.0 / (g.spacing() * g.spacing());
    for i in 0..lap.len() {
        assert!((lap[i] - (t0[i] + t1[i] + t2[i])).abs() < 1e-11 * scale);
    }
    // symmetric
    let m = n * n * n;
    for i in 0..m {
        for j in 0..i {
            assert!((lap[i + m * j] - lap[j + m * i]).abs() < 1e-11 * scale);
        }
    }
}

#[test]
fn laplace_ranks_are_bounded_by_four() {
    for d in 1..=3 {
        for levels in 2..=8 {
            let g = Grid::new(1.0, d, levels).unwrap();
            let lap = assemble_laplace(&g, eps(1e-12)).unwrap();
            assert!(lap.max_rank() <= 4, "d={d} L={levels} ranks {:?}", lap.ranks());
        }
    }
}

#[test]
fn laplace_of_square_is_two_in_the_interior() {
    let g = Grid::new(5.0, 3, 4).unwrap();
    let lap = assemble_laplace(&g, eps(1e-12)).unwrap();
    let sq = sample_field(&g, &|x: &[f64]| x[0] * x[0], eps(1e-13)).unwrap();
    let out = lap.matvec(&sq, eps(1e-13)).unwrap().to_full().unwrap();
    let n = g.points();
    let h = g.spacing();
    for node in all_nodes(&g) {
        let i = node[0] + n * node[1] + n * n * node[2];
        let x = node_coords(&g, &node);
        let mut want = 2.0;
        // dropped neighbours act as zero Dirichlet data
        if node[0] == 0 {
            want -= (x[0] - h).powi(2) / (h * h);
        }
        if node[0] == n - 1 {
            want -= (x[0] + h).powi(2) / (h * h);
        }
        for k in 1..3 {
            if node[k] == 0 || node[k] == n - 1 {
                want -= x[0] * x[0] / (h * h);
            }
        }
        assert!((out[i] - want).abs() < 1e-9, "{node:?}: {} vs {want}", out[i]);
    }
}

#[test]
fn zero_drift_gives_zero_convection() {
    let g = Grid::new(2.0, 2, 3).unwrap();
    let m = ModelSpec::pure_diffusion(2, 1.0, 1.0);
    let c = assemble_convection(&g, &m, eps(1e-12)).unwrap();
    assert!(c.to_full().unwrap().iter().all(|v| *v == 0.0));
    let p = assemble_potential(&g, &m, eps(1e-12)).unwrap();
    assert!(p.to_full().unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn unit_drift_gives_central_difference() {
    let g = Grid::new(1.0, 1, 3).unwrap();
    let mut m = ModelSpec::pure_diffusion(1, 1.0, 1.0);
    m.drift = vec![Arc::new(|_: &[f64]| 1.0)];
    let c = assemble_convection(&g, &m, eps(1e-12)).unwrap().to_full().unwrap();
    let n = 8;
    let h = g.spacing();
    for j in 0..n {
        for i in 0..n {
            let want = if j == i + 1 {
                0.5 / h
            } else if i == j + 1 {
                -0.5 / h
            } else {
                0.0
            };
            assert!((c[i + n * j] - want).abs() < 1e-12, "({i},{j})");
        }
    }
}

#[test]
fn almost_linear_convection_matches_stencil() {
    let g = Grid::new(5.0, 3, 4).unwrap();
    let mut m = ModelSpec::almost_linear();
    m.diffusion = 0.0;
    m.observation.clear();
    let c = assemble_convection(&g, &m, eps(1e-12)).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    for row in all_nodes(&g) {
        for col in neighbours(&g, &row) {
            // stencil_entry with q = 0 and no sensor is exactly -C
            let want = -stencil_entry(&g, &m, &row, &col);
            assert!((entry(&c, &g, &row, &col) - want).abs() < 1e-12, "{row:?} {col:?}");
        }
        let far: Vec<usize> = (0..3).map(|_| rng.gen_range(0..16)).collect();
        if neighbours(&g, &row).contains(&far) {
            continue;
        }
        assert!(entry(&c, &g, &row, &far).abs() < 1e-12);
    }
}

#[test]
fn convection_ranks_respect_five_d_r() {
    let policy = eps(1e-12);
    for (model, a) in [(ModelSpec::almost_linear(), 5.0), (ModelSpec::cubic_sensor(), 3.0)] {
        for levels in [4, 6] {
            let g = Grid::new(a, 3, levels).unwrap();
            let r = model
                .drift
                .iter()
                .map(|f| sample_field(&g, f.as_ref(), policy).unwrap().max_rank())
                .max()
                .unwrap();
            let c = assemble_convection(&g, &model, policy).unwrap();
            assert!(c.max_rank() <= 5 * 3 * r, "{} L={levels}: {} > 15*{r}", model.name, c.max_rank());
        }
    }
}

#[test]
fn cubic_potential_is_sixth_powers_on_the_diagonal() {
    let g = Grid::new(3.0, 3, 4).unwrap();
    let m = ModelSpec::cubic_sensor();
    let p = assemble_potential(&g, &m, eps(1e-12)).unwrap();
    let field = sample_field(&g, &|x: &[f64]| m.potential(x), eps(1e-12)).unwrap();
    assert_eq!(p.ranks(), field.ranks());
    for node in all_nodes(&g).into_iter().step_by(7) {
        let x = node_coords(&g, &node);
        let want = x[1].powi(6) + x[2].powi(6) + x[0].powi(6);
        let got = entry(&p, &g, &node, &node);
        assert!((got - want).abs() < 1e-12 * 3.0 * 729.0, "{node:?}");
        let mut off = node.clone();
        off[0] = (off[0] + 1) % 16;
        assert_eq!(entry(&p, &g, &node, &off), 0.0);
    }
}

#[test]
fn degenerate_generator_is_half_laplacian() {
    let g = Grid::new(1.0, 2, 3).unwrap();
    let m = ModelSpec::pure_diffusion(2, 1.0, 1.0);
    let gen = assemble_generator(&g, &m, eps(1e-12)).unwrap();
    let a = gen.operator.to_full().unwrap();
    let lap = assemble_laplace(&g, eps(1e-12)).unwrap().to_full().unwrap();
    let scale = 1.0 / (g.spacing() * g.spacing());
    for (x, y) in a.iter().zip(&lap) {
        assert!((x - 0.5 * y).abs() < 1e-11 * scale);
    }
}

#[test]
fn almost_linear_generator_matches_stencil() {
    let g = Grid::new(5.0, 3, 4).unwrap();
    let m = ModelSpec::almost_linear();
    let gen = assemble_generator(&g, &m, eps(1e-12)).unwrap();
    let scale = m.diffusion / (g.spacing() * g.spacing());
    for row in all_nodes(&g).into_iter().step_by(3) {
        for col in neighbours(&g, &row) {
            let want = stencil_entry(&g, &m, &row, &col);
            let got = entry(&gen.operator, &g, &row, &col);
            assert!((got - want).abs() < 1e-10 * scale.max(1.0) * 10.0, "{row:?} {col:?}: {got} vs {want}");
        }
    }
}

#[test]
fn separable_initial_density_has_unit_rank_between_axes() {
    let g = Grid::new(5.0, 3, 5).unwrap();
    let m = ModelSpec::almost_linear();
    let s = sample_field(&g, m.initial_density.as_ref(), eps(1e-12)).unwrap();
    let r = s.ranks();
    assert_eq!(r[5], 1);
    assert_eq!(r[10], 1);
}

#[test]
fn additive_observation_matches_joint_definition() {
    let o = ObservationField::additive(vec![(1, Arc::new(|v| v * 2.0)), (0, Arc::new(f64::sin))]);
    let x = [0.4, -0.7];
    assert!((o.eval(&x) - (-1.4 + 0.4f64.sin())).abs() < 1e-15);
}
