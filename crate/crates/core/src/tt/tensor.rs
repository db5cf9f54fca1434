use libm::sqrt;
use super::{check_same, RoundingPolicy, TensorShape, DEFAULT_MATERIALIZE_LIMIT, ZERO_NORM};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use alloc::vec;
use alloc::vec::Vec;

/// One TT core of shape `left x mode x right`, stored with the left rank index
/// fastest: entry `(a, i, b)` lives at `a + left * (i + mode * b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || mode == 0 || right == 0 {
            return Err(Error::InvalidShape("core dimensions must be positive".into()));
        }
        if data.len() != left * mode * right {
            return Err(Error::EntryCount {
                expected: left * mode * right,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("core"));
        }
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    pub(crate) fn from_parts(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), left * mode * right);
        Self {
            left,
            mode,
            right,
            data,
        }
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self::from_parts(left, mode, right, vec![0.0; left * mode * right])
    }

    pub fn left(&self) -> usize {
        self.left
    }
    pub fn mode(&self) -> usize {
        self.mode
    }
    pub fn right(&self) -> usize {
        self.right
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[a + self.left * (i + self.mode * b)]
    }

    /// `(left * mode) x right` unfolding.
    pub(crate) fn left_unfolding(&self) -> Mat {
        Mat::from_column_slice(self.left * self.mode, self.right, &self.data)
    }

    /// `left x (mode * right)` unfolding.
    pub(crate) fn right_unfolding(&self) -> Mat {
        Mat::from_column_slice(self.left, self.mode * self.right, &self.data)
    }

    /// Slice `G(i)` as a `left x right` matrix.
    pub(crate) fn slice(&self, i: usize) -> Mat {
        Mat::from_fn(self.left, self.right, |a, b| self.get(a, i, b))
    }

    fn from_left_unfolding(m: &Mat, left: usize, mode: usize) -> Self {
        Self::from_parts(left, mode, m.ncols(), m.as_slice().to_vec())
    }

    fn from_right_unfolding(m: &Mat, mode: usize) -> Self {
        let right = m.ncols() / mode;
        Self::from_parts(m.nrows(), mode, right, m.as_slice().to_vec())
    }

    fn frobenius(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum::<f64>())
    }
}

/// Outcome of a truncation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundReport {
    /// The rank cap bound somewhere; the accuracy target is then not guaranteed.
    pub capped: bool,
    /// Frobenius mass of everything discarded, summed in quadrature.
    pub discarded: f64,
}

/// A d-dimensional tensor in TT format. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TtTensor {
    shape: TensorShape,
    cores: Vec<Core>,
}

impl TtTensor {
    pub fn from_cores(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidShape("no cores".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::InvalidShape("boundary ranks must be 1".into()));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(Error::InvalidShape(alloc::format!(
                    "rank mismatch between cores {k} and {}",
                    k + 1
                )));
            }
        }
        let shape = TensorShape::new(cores.iter().map(|c| c.mode).collect())?;
        Ok(Self { shape, cores })
    }

    pub(crate) fn from_cores_unchecked(cores: Vec<Core>) -> Self {
        let shape = TensorShape(cores.iter().map(|c| c.mode).collect());
        Self { shape, cores }
    }

    /// The canonical zero: all-zero rank-one cores.
    pub fn zeros(shape: &TensorShape) -> Self {
        Self {
            shape: shape.clone(),
            cores: shape.modes().iter().map(|&n| Core::zeros(1, n, 1)).collect(),
        }
    }

    pub fn ones(shape: &TensorShape) -> Self {
        Self::constant(shape, 1.0)
    }

    pub fn constant(shape: &TensorShape, value: f64) -> Self {
        let mut cores: Vec<Core> = shape
            .modes()
            .iter()
            .map(|&n| Core::from_parts(1, n, 1, vec![1.0; n]))
            .collect();
        cores[0].data.iter_mut().for_each(|v| *v = value);
        Self {
            shape: shape.clone(),
            cores,
        }
    }

    /// Outer product `v_1 ⊗ v_2 ⊗ ... ⊗ v_d` (rank one).
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|v| Core::new(1, v.len(), 1, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_cores(cores)
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    /// Outer product: `self` indexes the leading modes, `other` the trailing ones.
    /// Ranks are concatenated with a unit bond in between.
    pub fn kron(&self, other: &Self) -> Self {
        let mut cores = self.cores.clone();
        cores.extend(other.cores.iter().cloned());
        Self::from_cores_unchecked(cores)
    }

    /// `r_0, r_1, ..., r_d`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(1);
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.cores.iter().map(|c| c.right).max().unwrap_or(1)
    }

    /// Number of stored floating point values.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// TT-SVD: sequential truncated SVDs of the unfoldings, each allowed to
    /// discard `epsilon * |data| / sqrt(d - 1)`.
    pub fn from_full(data: &[f64], shape: &TensorShape, policy: RoundingPolicy) -> Result<Self> {
        Ok(Self::from_full_report(data, shape, policy)?.0)
    }

    pub fn from_full_report(
        data: &[f64],
        shape: &TensorShape,
        policy: RoundingPolicy,
    ) -> Result<(Self, RoundReport)> {
        if data.len() != shape.size() {
            return Err(Error::EntryCount {
                expected: shape.size(),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense input"));
        }
        let norm = sqrt(data.iter().map(|v| v * v).sum::<f64>());
        let d = shape.dim();
        if norm < ZERO_NORM {
            return Ok((Self::zeros(shape), RoundReport::default()));
        }
        if d == 1 {
            let core = Core::from_parts(1, data.len(), 1, data.to_vec());
            return Ok((Self::from_cores_unchecked(vec![core]), RoundReport::default()));
        }
        let delta = policy.epsilon * norm / sqrt((d - 1) as f64);
        let modes = shape.modes();
        let mut report = RoundReport::default();
        let mut cores = Vec::with_capacity(d);
        let mut rank = 1;
        let mut rest_cols = shape.size() / modes[0];
        let mut rest = Mat::from_column_slice(modes[0], rest_cols, data);
        for k in 0..d - 1 {
            let dec = linalg::svd(rest);
            let (keep, capped) = linalg::truncation_rank(&dec.s, delta, policy.max_rank);
            report.capped |= capped;
            report.discarded = libm::hypot(report.discarded, tail_mass(&dec.s, keep));
            let u = dec.u.columns(0, keep).into_owned();
            cores.push(Core::from_left_unfolding(&u, rank, modes[k]));
            let mut sv = dec.vt.rows(0, keep).into_owned();
            for (r, s) in dec.s.iter().take(keep).enumerate() {
                sv.row_mut(r).scale_mut(*s);
            }
            rank = keep;
            rest_cols /= modes[k + 1];
            rest = Mat::from_column_slice(rank * modes[k + 1], rest_cols, sv.as_slice());
        }
        cores.push(Core::from_parts(rank, modes[d - 1], 1, rest.as_slice().to_vec()));
        Ok((Self::from_cores_unchecked(cores), report))
    }

    /// Dense image, first index fastest. Refuses tensors above
    /// [`DEFAULT_MATERIALIZE_LIMIT`] entries.
    pub fn to_full(&self) -> Result<Vec<f64>> {
        self.to_full_limited(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn to_full_limited(&self, limit: usize) -> Result<Vec<f64>> {
        let size = self.shape.size();
        if size > limit {
            return Err(Error::SizeLimit { size, limit });
        }
        // acc is (prod of processed modes) x r_k, column-major
        let mut acc = Mat::from_element(1, 1, 1.0);
        for core in &self.cores {
            let rows = acc.nrows();
            let mut next = Mat::zeros(rows * core.mode, core.right);
            for i in 0..core.mode {
                let block = &acc * core.slice(i);
                next.view_mut((rows * i, 0), (rows, core.right)).copy_from(&block);
            }
            acc = next;
        }
        Ok(acc.as_slice().to_vec())
    }

    /// Single entry via the core product.
    pub fn element(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.dim(), "index arity");
        let mut row = vec![1.0];
        for (core, &i) in self.cores.iter().zip(idx) {
            let mut next = vec![0.0; core.right];
            for (b, out) in next.iter_mut().enumerate() {
                *out = row
                    .iter()
                    .enumerate()
                    .map(|(a, &r)| r * core.get(a, i, b))
                    .sum();
            }
            row = next;
        }
        row[0]
    }

    /// Sum of all entries, contracting each core with the all-ones vector.
    pub fn sum(&self) -> f64 {
        let mut row = vec![1.0];
        for core in &self.cores {
            let mut next = vec![0.0; core.right];
            for (b, out) in next.iter_mut().enumerate() {
                for i in 0..core.mode {
                    for (a, &r) in row.iter().enumerate() {
                        *out += r * core.get(a, i, b);
                    }
                }
            }
            row = next;
        }
        row[0]
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFinite("scale factor"));
        }
        let mut out = self.clone();
        out.cores[0].data.iter_mut().for_each(|v| *v *= c);
        Ok(out)
    }

    /// Exact sum; internal ranks add.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(&self.shape, &other.shape)?;
        let d = self.dim();
        if d == 1 {
            let data = self.cores[0]
                .data
                .iter()
                .zip(&other.cores[0].data)
                .map(|(a, b)| a + b)
                .collect();
            return Ok(Self::from_cores_unchecked(vec![Core::from_parts(
                1,
                self.shape.modes()[0],
                1,
                data,
            )]));
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .enumerate()
            .map(|(k, (x, y))| {
                let first = k == 0;
                let last = k == d - 1;
                let left = if first { 1 } else { x.left + y.left };
                let right = if last { 1 } else { x.right + y.right };
                let mut core = Core::zeros(left, x.mode, right);
                let ya = if first { 0 } else { x.left };
                let yb = if last { 0 } else { x.right };
                for i in 0..x.mode {
                    for b in 0..x.right {
                        for a in 0..x.left {
                            core.data[a + left * (i + x.mode * b)] = x.get(a, i, b);
                        }
                    }
                    for b in 0..y.right {
                        for a in 0..y.left {
                            core.data[(ya + a) + left * (i + x.mode * (yb + b))] = y.get(a, i, b);
                        }
                    }
                }
                core
            })
            .collect();
        Ok(Self::from_cores_unchecked(cores))
    }

    /// `self - other` without rounding.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0)?)
    }

    /// Exact elementwise product; internal ranks multiply.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        check_same(&self.shape, &other.shape)?;
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(x, y)| {
                let left = x.left * y.left;
                let right = x.right * y.right;
                let mut core = Core::zeros(left, x.mode, right);
                for b2 in 0..y.right {
                    for b1 in 0..x.right {
                        for i in 0..x.mode {
                            for a2 in 0..y.left {
                                let yv = y.get(a2, i, b2);
                                for a1 in 0..x.left {
                                    core.data[(a1 + x.left * a2)
                                        + left * (i + x.mode * (b1 + x.right * b2))] =
                                        x.get(a1, i, b1) * yv;
                                }
                            }
                        }
                    }
                }
                core
            })
            .collect();
        Ok(Self::from_cores_unchecked(cores))
    }

    /// Inner product `<self, other>` by left-to-right contraction.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_same(&self.shape, &other.shape)?;
        let mut env = Mat::from_element(1, 1, 1.0);
        for (x, y) in self.cores.iter().zip(&other.cores) {
            let mut next = Mat::zeros(x.right, y.right);
            for i in 0..x.mode {
                next += x.slice(i).transpose() * &env * y.slice(i);
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    /// Frobenius norm, read off the first core after right-orthogonalization.
    pub fn norm(&self) -> f64 {
        let cores = orthogonalize_right(self.cores.clone());
        cores[0].frobenius()
    }

    pub fn round(&self, policy: RoundingPolicy) -> Result<Self> {
        Ok(self.round_report(policy)?.0)
    }

    /// TT-rounding: right-to-left QR orthogonalization, then a left-to-right
    /// truncated SVD sweep with per-bond budget `epsilon * |X| / sqrt(d - 1)`.
    pub fn round_report(&self, policy: RoundingPolicy) -> Result<(Self, RoundReport)> {
        if self.cores.iter().any(|c| c.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("tensor train"));
        }
        let d = self.dim();
        if d == 1 {
            return Ok((self.clone(), RoundReport::default()));
        }
        let mut cores = orthogonalize_right(self.cores.clone());
        let norm = cores[0].frobenius();
        if norm < ZERO_NORM {
            return Ok((Self::zeros(&self.shape), RoundReport::default()));
        }
        let delta = policy.epsilon * norm / sqrt((d - 1) as f64);
        let report = truncate_left_to_right(&mut cores, delta, policy.max_rank);
        Ok((Self::from_cores_unchecked(cores), report))
    }

    /// Copy whose cores `2..d` are right-orthonormal (norm carried by core 1).
    pub fn right_orthogonalized(&self) -> Self {
        Self::from_cores_unchecked(orthogonalize_right(self.cores.clone()))
    }
}

fn tail_mass(s: &[f64], keep: usize) -> f64 {
    sqrt(s[keep.min(s.len())..].iter().map(|v| v * v).sum::<f64>())
}

/// QR sweep from the last core to the second; afterwards every core but the
/// first has orthonormal rows in its right unfolding.
pub(crate) fn orthogonalize_right(mut cores: Vec<Core>) -> Vec<Core> {
    for k in (1..cores.len()).rev() {
        let mode = cores[k].mode;
        let (q, r) = linalg::qr(cores[k].right_unfolding().transpose());
        cores[k] = Core::from_right_unfolding(&q.transpose(), mode);
        let prev = &cores[k - 1];
        let merged = prev.left_unfolding() * r.transpose();
        cores[k - 1] = Core::from_left_unfolding(&merged, prev.left, prev.mode);
    }
    cores
}

/// Left-to-right truncated SVD sweep over right-orthogonal cores.
pub(crate) fn truncate_left_to_right(
    cores: &mut [Core],
    delta: f64,
    max_rank: Option<usize>,
) -> RoundReport {
    let mut report = RoundReport::default();
    for k in 0..cores.len() - 1 {
        let (left, mode) = (cores[k].left, cores[k].mode);
        let dec = linalg::svd(cores[k].left_unfolding());
        let (keep, capped) = linalg::truncation_rank(&dec.s, delta, max_rank);
        report.capped |= capped;
        report.discarded = libm::hypot(report.discarded, tail_mass(&dec.s, keep));
        cores[k] = Core::from_left_unfolding(&dec.u.columns(0, keep).into_owned(), left, mode);
        let mut sv = dec.vt.rows(0, keep).into_owned();
        for (r, s) in dec.s.iter().take(keep).enumerate() {
            sv.row_mut(r).scale_mut(*s);
        }
        let next = &cores[k + 1];
        let merged = sv * next.right_unfolding();
        cores[k + 1] = Core::from_right_unfolding(&merged, next.mode);
    }
    report
}
