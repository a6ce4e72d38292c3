//! CSV tables for reconstructed fields and convergence traces.

use std::fmt::Write as _;

use super::{IterationRecord, ReconResult};
use crate::error::{Error, Result};
use crate::medium::OpticalField;
use crate::mesh::Mesh;
use crate::provenance::fmt_f64;

/// `node_id,x,y,mua,musp`, one row per node.
pub fn field_to_csv(mesh: &Mesh, field: &OpticalField) -> String {
    let mut out = String::from("node_id,x,y,mua,musp\n");
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(field.mua[i]),
            fmt_f64(field.musp[i])
        );
    }
    out
}

/// Reads μa and μs′ back from a field CSV with refractive index `n_refr`.
pub fn field_from_csv(text: &str, n_refr: f64) -> Result<OpticalField> {
    let mut mua = Vec::new();
    let mut musp = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", f.len())));
        }
        let id: usize = f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        if id != mua.len() {
            return Err(bad(format!("node ids out of order at {id}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        mua.push(num(f[3])?);
        musp.push(num(f[4])?);
    }
    Ok(OpticalField { mua, musp, n: n_refr })
}

/// `iteration,misfit,reg,total,step,cg_iterations,backtracks`. Wall time is
/// left out so the table is reproducible byte for byte.
pub fn trace_to_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,misfit,reg,total,step,cg_iterations,backtracks\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.objective.misfit),
            fmt_f64(r.objective.reg),
            fmt_f64(r.objective.total),
            fmt_f64(r.step),
            r.cg_iterations,
            r.backtracks
        );
    }
    out
}

pub fn write_recon(dir: &std::path::Path, stem: &str, mesh: &Mesh, result: &ReconResult) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.csv")), field_to_csv(mesh, &result.field))?;
    std::fs::write(dir.join(format!("{stem}_trace.csv")), trace_to_csv(&result.trace))?;
    Ok(())
}
