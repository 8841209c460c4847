//! CSV and plain-text output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::sim::{to_physical, BilayerContext, SimTrace};
use crate::state::RiemannState;

pub const KERNELS_FILE: &str = "kernels.csv";
pub const DELTA_FILE: &str = "delta.csv";
pub const TRACE_FILE: &str = "trace.csv";

/// Long-format kernel table: one row per lattice node and component, with
/// components named `G21_ij` / `G22_ij` (1-based, system order).
pub fn write_kernels_csv<W: Write>(kernels: &KernelSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "xi", "component", "value"])?;
    let grid = kernels.grid;
    let mut fields: Vec<(String, &crate::kernel::TriField)> = Vec::new();
    for i in 0..kernels.m {
        for j in 0..kernels.n {
            fields.push((format!("G21_{}{}", i + 1, j + 1), kernels.g21(i, j)));
        }
        for j in 0..kernels.m {
            fields.push((format!("G22_{}{}", i + 1, j + 1), kernels.g22(i, j)));
        }
    }
    for (name, f) in &fields {
        for a in 0..=grid.n {
            for b in 0..=a {
                w.write_record([
                    grid.x(a).to_string(),
                    grid.x(b).to_string(),
                    name.clone(),
                    f.get(a, b).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `Δ(x)` at lattice nodes, columns `x, delta_ij...`.
pub fn write_delta_csv<W: Write>(kernels: &KernelSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = kernels.m;
    let mut header = vec!["x".to_string()];
    for i in 0..m {
        for j in 0..m {
            header.push(format!("delta_{}{}", i + 1, j + 1));
        }
    }
    w.write_record(&header)?;
    for (a, d) in kernels.delta.iter().enumerate() {
        let mut row = vec![kernels.grid.x(a).to_string()];
        for i in 0..m {
            for j in 0..m {
                row.push(d[(i, j)].to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn trace_header(trace: &SimTrace) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for label in 1..=trace.n + trace.m {
        h.push(format!("xi{label}_norm"));
    }
    h.push("total_norm".into());
    for q in 1..=trace.m {
        h.push(format!("u{q}_ctrl"));
    }
    h.push("V".into());
    h
}

/// Trace table: norms by component label, total norm, controls by
/// ascending leftward label, and `V` (empty when not evaluated).
pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(trace))?;
    let by_label: Vec<Vec<f64>> = (1..=trace.n + trace.m)
        .map(|l| {
            trace
                .norm_by_label(l)
                .ok_or_else(|| Error::Consistency(format!("no component carries label {l}")))
        })
        .collect::<Result<_>>()?;
    let ctrl = trace.controls_by_label();
    for k in 0..trace.times.len() {
        let mut row = vec![trace.times[k].to_string()];
        row.extend(by_label.iter().map(|s| s[k].to_string()));
        row.push(trace.total[k].to_string());
        row.extend(ctrl.iter().map(|s| s[k].to_string()));
        row.push(trace.v.as_ref().map_or(String::new(), |v| v[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Full-field snapshot: `x`, characteristic values by label and, with a
/// physical model, `h1,u1,h2,u2`.
pub fn write_snapshot_csv<W: Write>(
    state: &RiemannState,
    labels: &[usize],
    bilayer: Option<BilayerContext>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let nc = state.n() + state.m();
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by_key(|&k| labels[k]);
    let mut header = vec!["x".to_string()];
    header.extend(order.iter().map(|&k| format!("xi{}", labels[k])));
    let phys = bilayer.map(|ctx| to_physical(state, ctx));
    if phys.is_some() {
        header.extend(["h1", "u1", "h2", "u2"].map(String::from));
    }
    w.write_record(&header)?;
    let nx = state.nx();
    for j in 0..nx {
        let mut row = vec![((j as f64 + 0.5) / nx as f64).to_string()];
        row.extend(order.iter().map(|&k| state.component(k)[j].to_string()));
        if let Some(p) = &phys {
            row.extend([p.h1[j], p.u1[j], p.h2[j], p.u2[j]].map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trace read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn columns_with_suffix(&self, suffix: &str) -> Vec<String> {
        self.header.iter().filter(|h| h.ends_with(suffix)).cloned().collect()
    }
}

pub fn read_trace_csv(path: &Path) -> Result<TraceTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    for required in ["t", "total_norm"] {
        if !header.iter().any(|h| h == required) {
            return Err(Error::Input(format!(
                "{} is not a trace file (missing column {required})",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| {
                        Error::Input(format!("{}: row {}: bad number {s:?}", path.display(), line + 2))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(TraceTable { header, rows })
}

/// Writes `text` to `dir/name`, creating `dir` if needed.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

pub fn create_file(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
}
