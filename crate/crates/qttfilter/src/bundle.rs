//! Binary format of an [`OfflineBundle`].
//!
//! Layout, all integers `u64` and all floats `f64`, little-endian:
//!
//! ```text
//! magic "QTTFBNDL", version
//! model name (length + UTF-8), grid (half width, dim, levels)
//! diffusion, obs noise, tau, dt_obs, steps, stable flag
//! build policy, online policy (epsilon, max rank or 0)
//! propagator: row modes, col modes, TT cores
//! weight source tag: 0 separable terms, 1 joint TT fields
//! initial density: TT cores
//! ```
//!
//! A TT tensor is written as its core count, then `left, mode, right` and
//! the raw core data for every core. Floats are copied bit for bit, so a
//! reloaded bundle is identical to the one that was written.

use crate::error::{CliError, CliResult};
use qttfilter_core::fd::Grid;
use qttfilter_core::filter::{OfflineBundle, WeightSource};
use qttfilter_core::tt::Core;
use qttfilter_core::{RoundingPolicy, TensorShape, TtMatrix, TtTensor};
use std::path::Path;

const MAGIC: &[u8; 8] = b"QTTFBNDL";
pub const FORMAT_VERSION: u64 = 1;

/// Refuse absurd lengths before allocating for them.
const MAX_LEN: u64 = 1 << 32;

pub fn encode(bundle: &OfflineBundle) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u64(FORMAT_VERSION);
    w.bytes(bundle.model_name.as_bytes());
    w.f64(bundle.grid.half_width());
    w.u64(bundle.grid.dim() as u64);
    w.u64(bundle.grid.levels() as u64);
    w.f64(bundle.diffusion);
    w.f64(bundle.obs_noise);
    w.f64(bundle.tau);
    w.f64(bundle.dt_obs);
    w.u64(bundle.steps as u64);
    w.u64(bundle.stable as u64);
    w.policy(bundle.build_policy);
    w.policy(bundle.online_policy);
    w.usizes(bundle.propagator.rows().modes());
    w.usizes(bundle.propagator.cols().modes());
    w.tensor(bundle.propagator.tt());
    match &bundle.weights {
        WeightSource::Separable { terms } => {
            w.u64(0);
            w.u64(terms.len() as u64);
            for component in terms {
                w.u64(component.len() as u64);
                for (axis, samples) in component {
                    w.u64(*axis as u64);
                    w.f64s(samples);
                }
            }
        }
        WeightSource::Joint { fields } => {
            w.u64(1);
            w.u64(fields.len() as u64);
            for f in fields {
                w.tensor(f);
            }
        }
    }
    w.tensor(&bundle.initial);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<OfflineBundle, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a bundle file (bad magic)".into());
    }
    let version = r.u64()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported bundle version {version}"));
    }
    let model_name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| "model name is not UTF-8".to_string())?;
    let half_width = r.f64()?;
    let dim = r.len()?;
    let levels = u32::try_from(r.u64()?).map_err(|_| "level count out of range".to_string())?;
    let grid = Grid::new(half_width, dim, levels).map_err(|e| e.to_string())?;
    let diffusion = r.f64()?;
    let obs_noise = r.f64()?;
    let tau = r.f64()?;
    let dt_obs = r.f64()?;
    let steps = r.len()?;
    let stable = r.u64()? != 0;
    let build_policy = r.policy()?;
    let online_policy = r.policy()?;
    let rows = TensorShape::new(r.usizes()?).map_err(|e| e.to_string())?;
    let cols = TensorShape::new(r.usizes()?).map_err(|e| e.to_string())?;
    let propagator = TtMatrix::from_tt(rows, cols, r.tensor()?).map_err(|e| e.to_string())?;
    let weights = match r.u64()? {
        0 => {
            let n = r.len()?;
            let mut terms = Vec::with_capacity(n);
            for _ in 0..n {
                let k = r.len()?;
                let mut component = Vec::with_capacity(k);
                for _ in 0..k {
                    let axis = r.len()?;
                    component.push((axis, r.f64s()?));
                }
                terms.push(component);
            }
            WeightSource::Separable { terms }
        }
        1 => {
            let n = r.len()?;
            let fields = (0..n).map(|_| r.tensor()).collect::<Result<_, _>>()?;
            WeightSource::Joint { fields }
        }
        t => return Err(format!("unknown weight source tag {t}")),
    };
    let initial = r.tensor()?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(OfflineBundle {
        propagator,
        grid,
        model_name,
        diffusion,
        obs_noise,
        tau,
        dt_obs,
        steps,
        build_policy,
        online_policy,
        weights,
        initial,
        stable,
    })
}

pub fn write_bundle(path: &Path, bundle: &OfflineBundle) -> CliResult<()> {
    std::fs::write(path, encode(bundle)).map_err(|e| CliError::io(path, e))
}

pub fn read_bundle(path: &Path) -> CliResult<OfflineBundle> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|reason| CliError::input(path, reason))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn usizes(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.u64(x as u64);
        }
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }

    fn policy(&mut self, p: RoundingPolicy) {
        self.f64(p.epsilon);
        self.u64(p.max_rank.unwrap_or(0) as u64);
    }

    fn tensor(&mut self, t: &TtTensor) {
        self.u64(t.dim() as u64);
        for c in t.cores() {
            self.u64(c.left() as u64);
            self.u64(c.mode() as u64);
            self.u64(c.right() as u64);
            for &x in c.data() {
                self.f64(x);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn len(&mut self) -> Result<usize, String> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(format!("length {v} at byte {} is implausible", self.pos - 8));
        }
        Ok(v as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8], String> {
        let n = self.len()?;
        self.take(n)
    }

    fn usizes(&mut self) -> Result<Vec<usize>, String> {
        let n = self.len()?;
        (0..n).map(|_| self.len()).collect()
    }

    fn f64s(&mut self) -> Result<Vec<f64>, String> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect())
    }

    fn policy(&mut self) -> Result<RoundingPolicy, String> {
        let eps = self.f64()?;
        let cap = self.len()?;
        RoundingPolicy::new(eps, (cap > 0).then_some(cap)).map_err(|e| e.to_string())
    }

    fn tensor(&mut self) -> Result<TtTensor, String> {
        let d = self.len()?;
        let mut cores = Vec::with_capacity(d);
        for _ in 0..d {
            let (left, mode, right) = (self.len()?, self.len()?, self.len()?);
            let n = left
                .checked_mul(mode)
                .and_then(|v| v.checked_mul(right))
                .filter(|&n| n as u64 <= MAX_LEN)
                .ok_or("core size overflow")?;
            let raw = self.take(n * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            cores.push(Core::new(left, mode, right, data).map_err(|e| e.to_string())?);
        }
        TtTensor::from_cores(cores).map_err(|e| e.to_string())
    }
}
