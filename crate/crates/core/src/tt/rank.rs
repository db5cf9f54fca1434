use libm::sqrt;
use super::{TtMatrix, TtTensor};

/// Uniform rank `r` whose storage `(r_0 n_1 + r_d n_d) r + (n_2 + ... + n_{d-1}) r^2`
/// matches the actual storage `sum_k r_{k-1} n_k r_k`.
pub fn effective_rank_of(modes: &[usize], ranks: &[usize]) -> f64 {
    let d = modes.len();
    assert_eq!(ranks.len(), d + 1, "ranks are r_0..r_d");
    if d == 1 {
        return 1.0;
    }
    let storage: f64 = (0..d)
        .map(|k| (ranks[k] * modes[k] * ranks[k + 1]) as f64)
        .sum();
    let linear = (ranks[0] * modes[0] + ranks[d] * modes[d - 1]) as f64;
    let quad: f64 = modes[1..d - 1].iter().map(|&n| n as f64).sum();
    if quad == 0.0 {
        return storage / linear;
    }
    (sqrt(linear * linear + 4.0 * quad * storage) - linear) / (2.0 * quad)
}

impl TtTensor {
    pub fn effective_rank(&self) -> f64 {
        effective_rank_of(self.shape().modes(), &self.ranks())
    }
}

impl TtMatrix {
    /// Effective rank with mode sizes `m_k * n_k`.
    pub fn effective_rank(&self) -> f64 {
        self.tt().effective_rank()
    }
}
