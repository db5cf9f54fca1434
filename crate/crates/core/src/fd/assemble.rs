use super::{Grid, ModelSpec};
use crate::error::{Error, Result};
use crate::tt::{RoundingPolicy, TtMatrix, TtTensor, DEFAULT_MATERIALIZE_LIMIT};
use alloc::vec;
use alloc::vec::Vec;

/// Rounding used when compressing exactly low-rank building blocks.
const EXACT: f64 = 1e-14;

fn exact() -> RoundingPolicy {
    RoundingPolicy::eps(EXACT).expect("positive")
}

/// Dense samples of `field` at every node, axis 0 fastest.
pub fn sample_dense(grid: &Grid, field: &(dyn Fn(&[f64]) -> f64 + Send + Sync)) -> Result<Vec<f64>> {
    let size = grid.nodes();
    if size > DEFAULT_MATERIALIZE_LIMIT {
        return Err(Error::SizeLimit { size, limit: DEFAULT_MATERIALIZE_LIMIT });
    }
    let mut out = vec![0.0; size];
    grid.for_each_node(|i, x| out[i] = field(x));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field sample"));
    }
    Ok(out)
}

/// QTT tensor of the nodal samples of `field`.
pub fn sample_field(grid: &Grid, field: &(dyn Fn(&[f64]) -> f64 + Send + Sync), policy: RoundingPolicy) -> Result<TtTensor> {
    let dense = sample_dense(grid, field)?;
    TtTensor::from_full(&dense, &grid.qtt_shape(), policy)
}

/// QTT tensor of `v_0(x_0) v_1(x_1) ... v_{d-1}(x_{d-1})` from per-axis samples.
pub fn separable_tensor(grid: &Grid, factors: &[Vec<f64>], policy: RoundingPolicy) -> Result<TtTensor> {
    if factors.len() != grid.dim() || factors.iter().any(|v| v.len() != grid.points()) {
        return Err(Error::InvalidShape("one factor of length N per axis".into()));
    }
    let axis = grid.axis_qtt_shape();
    let mut out: Option<TtTensor> = None;
    for v in factors {
        let q = TtTensor::from_full(v, &axis, policy)?;
        out = Some(match out {
            None => q,
            Some(acc) => acc.kron(&q),
        });
    }
    Ok(out.expect("grid has at least one axis"))
}

/// Rank-one-per-axis QTT tensor of the `axis`-th coordinate.
pub fn coordinate_tensor(grid: &Grid, axis: usize) -> Result<TtTensor> {
    let ones = vec![1.0; grid.points()];
    let factors: Vec<Vec<f64>> = (0..grid.dim())
        .map(|k| if k == axis { grid.axis_coords() } else { ones.clone() })
        .collect();
    separable_tensor(grid, &factors, exact())
}

/// `(1/h^2) tridiag(1, -2, 1)`, column-major.
pub fn laplace_1d(n: usize, h: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let c = 1.0 / (h * h);
    for i in 0..n {
        m[i + n * i] = -2.0 * c;
        if i > 0 {
            m[i + n * (i - 1)] = c;
            m[(i - 1) + n * i] = c;
        }
    }
    m
}

/// `(1/h) tridiag(-1/2, 0, 1/2)`, column-major: `(Du)_l = (u_{l+1} - u_{l-1}) / 2h`.
pub fn central_difference_1d(n: usize, h: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let c = 0.5 / h;
    for i in 0..n {
        if i + 1 < n {
            m[i + n * (i + 1)] = c;
        }
        if i > 0 {
            m[i + n * (i - 1)] = -c;
        }
    }
    m
}

fn axis_operator(grid: &Grid, dense: &[f64]) -> Result<TtMatrix> {
    let s = grid.axis_qtt_shape();
    TtMatrix::from_full(dense, &s, &s, exact())
}

/// `I ⊗ .. ⊗ op ⊗ .. ⊗ I` with `op` on `axis`.
fn on_axis(grid: &Grid, op: &TtMatrix, axis: usize) -> TtMatrix {
    let id = TtMatrix::identity(&grid.axis_qtt_shape());
    let mut out = if axis == 0 { op.clone() } else { id.clone() };
    for k in 1..grid.dim() {
        out = out.kron(if k == axis { op } else { &id });
    }
    out
}

fn sum_rounded(terms: Vec<TtMatrix>, policy: RoundingPolicy) -> Result<TtMatrix> {
    let mut iter = terms.into_iter();
    let mut acc = iter.next().expect("at least one term");
    for t in iter {
        acc = acc.add(&t)?.round(policy)?;
    }
    acc.round(policy)
}

/// Discrete Laplacian with zero Dirichlet data, `sum_k I ⊗ .. ⊗ Δ_1 ⊗ .. ⊗ I`.
pub fn assemble_laplace(grid: &Grid, policy: RoundingPolicy) -> Result<TtMatrix> {
    let lap = axis_operator(grid, &laplace_1d(grid.points(), grid.spacing()))?;
    let terms = (0..grid.dim()).map(|k| on_axis(grid, &lap, k)).collect();
    sum_rounded(terms, policy)
}

/// Conservative convection `sum_k D_k diag(f_k)`, the discrete `div(f u)`.
pub fn assemble_convection(grid: &Grid, model: &ModelSpec, policy: RoundingPolicy) -> Result<TtMatrix> {
    check_dim(grid, model)?;
    let diff = axis_operator(grid, &central_difference_1d(grid.points(), grid.spacing()))?;
    let mut terms = Vec::with_capacity(grid.dim());
    for (k, f) in model.drift.iter().enumerate() {
        let samples = sample_field(grid, f.as_ref(), policy)?;
        let term = on_axis(grid, &diff, k).matmul_exact(&TtMatrix::diag(&samples))?;
        terms.push(term.round(policy)?);
    }
    sum_rounded(terms, policy)
}

/// Diagonal multiplication by `h^T S^{-1} h`.
pub fn assemble_potential(grid: &Grid, model: &ModelSpec, policy: RoundingPolicy) -> Result<TtMatrix> {
    check_dim(grid, model)?;
    let m = model.clone();
    let samples = sample_field(grid, &move |x: &[f64]| m.potential(x), policy)?;
    Ok(TtMatrix::diag(&samples))
}

fn check_dim(grid: &Grid, model: &ModelSpec) -> Result<()> {
    model.validate()?;
    if grid.dim() != model.dim {
        return Err(Error::InvalidModel(alloc::format!(
            "grid is {}-dimensional, model is {}-dimensional",
            grid.dim(),
            model.dim
        )));
    }
    Ok(())
}

/// `A = (q/2) Δ - C - Q/2` together with its parts.
#[derive(Debug, Clone)]
pub struct GeneratorOperator {
    pub operator: TtMatrix,
    pub laplace: TtMatrix,
    pub convection: TtMatrix,
    pub potential: TtMatrix,
    pub grid: Grid,
    pub policy: RoundingPolicy,
}

impl GeneratorOperator {
    /// One explicit Euler step, `τ A + I`.
    pub fn euler_step(&self, tau: f64) -> Result<TtMatrix> {
        let id = TtMatrix::identity(&self.grid.qtt_shape());
        self.operator.scale(tau)?.add(&id)?.round(self.policy)
    }
}

/// `τ A + I` as the plain sum of its Kronecker-structured terms, with no
/// recompression after the additions and products. Only the sampled fields
/// are compressed (at `policy`). Ranks are therefore those of the raw
/// assembly; [`GeneratorOperator::euler_step`] gives the recompressed form.
pub fn assemble_step_unrounded(grid: &Grid, model: &ModelSpec, tau: f64, policy: RoundingPolicy) -> Result<TtMatrix> {
    check_dim(grid, model)?;
    let lap = axis_operator(grid, &laplace_1d(grid.points(), grid.spacing()))?;
    let diff = axis_operator(grid, &central_difference_1d(grid.points(), grid.spacing()))?;
    let mut acc = TtMatrix::identity(&grid.qtt_shape());
    for k in 0..grid.dim() {
        acc = acc.add(&on_axis(grid, &lap, k).scale(0.5 * model.diffusion * tau)?)?;
    }
    for (k, f) in model.drift.iter().enumerate() {
        let samples = sample_field(grid, f.as_ref(), policy)?;
        let term = on_axis(grid, &diff, k).matmul_exact(&TtMatrix::diag(&samples))?;
        acc = acc.sub(&term.scale(tau)?)?;
    }
    let potential = assemble_potential(grid, model, policy)?;
    acc.sub(&potential.scale(0.5 * tau)?)
}

pub fn assemble_generator(grid: &Grid, model: &ModelSpec, policy: RoundingPolicy) -> Result<GeneratorOperator> {
    let laplace = assemble_laplace(grid, policy)?;
    let convection = assemble_convection(grid, model, policy)?;
    let potential = assemble_potential(grid, model, policy)?;
    let operator = laplace
        .scale(0.5 * model.diffusion)?
        .sub(&convection)?
        .round(policy)?
        .sub(&potential.scale(0.5)?)?
        .round(policy)?;
    Ok(GeneratorOperator {
        operator,
        laplace,
        convection,
        potential,
        grid: *grid,
        policy,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_stencils() {
        let l = laplace_1d(4, 0.5);
        assert_eq!(&l[0..4], &[-8.0, 4.0, 0.0, 0.0]);
        let d = central_difference_1d(4, 0.5);
        // column 1 holds +1/2h on row 0 and -1/2h on row 2
        assert_eq!(&d[4..8], &[1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn coordinate_tensor_has_rank_two_inside_its_axis() {
        let g = Grid::new(2.0, 3, 4).unwrap();
        let c = coordinate_tensor(&g, 1).unwrap();
        let r = c.ranks();
        assert!(r[1..4].iter().all(|&v| v == 1) && r[8..12].iter().all(|&v| v == 1));
        assert!(r[5..8].iter().all(|&v| v <= 2));
        let dense = c.to_full().unwrap();
        let n = g.points();
        assert!((dense[3 + n * 7 + n * n * 2] - g.coord(7)).abs() < 1e-13);
    }
}
