//! Truth paths as CSV: a `# seed = N` comment line, a header
//! `time,x0,...,y0,...`, then one row per fine time step.
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every value bit for bit.

use crate::error::{CliError, CliResult};
use qttfilter_core::baselines::TruthPath;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub fn write_truth(path: &Path, truth: &TruthPath) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "# seed = {}", truth.seed).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    let (d, m) = dims(truth);
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain((0..d).map(|k| format!("x{k}")))
        .chain((0..m).map(|k| format!("y{k}")))
        .collect();
    let fail = |e: csv::Error| CliError::input(path, e.to_string());
    w.write_record(&header).map_err(fail)?;
    let mut row = Vec::with_capacity(1 + d + m);
    for (i, (x, y)) in truth.states.iter().zip(&truth.observations).enumerate() {
        row.clear();
        row.push(truth.time(i).to_string());
        row.extend(x.iter().chain(y).map(f64::to_string));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_truth(path: &Path) -> CliResult<TruthPath> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| CliError::io(path, e))?;
    let seed = first
        .strip_prefix('#')
        .and_then(|s| s.split_once('='))
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| CliError::input(path, "missing '# seed = N' line"))?;
    let mut r = csv::Reader::from_reader(reader);
    let bad = |reason: String| CliError::input(path, reason);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("time") {
        return Err(bad("first column must be 'time'".into()));
    }
    let d = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('y')).count();
    if d == 0 || m == 0 || 1 + d + m != header.len() {
        return Err(bad(format!("expected time, x.., y.. columns, got {header:?}")));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut observations = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        times.push(vals[0]);
        states.push(vals[1..1 + d].to_vec());
        observations.push(vals[1 + d..].to_vec());
    }
    if times.len() < 2 {
        return Err(bad(format!("need at least two rows, found {}", times.len())));
    }
    let dt = times[1];
    if !(dt > 0.0) || times[0] != 0.0 {
        return Err(bad("times must start at 0 and increase".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1e-9 * dt.max(*t) {
            return Err(bad(format!("row {} breaks the uniform time step", i + 1)));
        }
    }
    Ok(TruthPath { dt, seed, states, observations })
}

fn dims(truth: &TruthPath) -> (usize, usize) {
    (
        truth.states.first().map_or(0, Vec::len),
        truth.observations.first().map_or(0, Vec::len),
    )
}
