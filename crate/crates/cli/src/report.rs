//! Report writers: evaluation reports (CSV/JSON), solver traces, and the
//! resolved-configuration dump. Every CSV starts with a schema comment line
//! so downstream parsers can pin the layout.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use bss_core::error::Result;
use bss_core::metrics::EvalReport;
use bss_core::trace::TraceRecord;

pub const EVAL_SCHEMA: &str = "bss-eval-v1";
pub const TRACE_SCHEMA: &str = "bss-trace-v1";
pub const BENCH_SCHEMA: &str = "bss-bench-v1";

/// JSON number that survives non-finite values as strings.
pub fn json_db(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn eval_report_csv<W: Write>(mut out: W, report: &EvalReport) -> Result<()> {
    writeln!(out, "# schema: {EVAL_SCHEMA}")?;
    writeln!(out, "source,estimate,sdr_db,sir_db,sar_db,sdr_improvement_db")?;
    for row in &report.per_source {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.source,
            row.estimate,
            fmt_db(row.sdr),
            fmt_db(row.sir),
            fmt_db(row.sar),
            row.sdr_improvement.map(fmt_db).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn eval_report_json(report: &EvalReport) -> Value {
    json!({
        "schema": EVAL_SCHEMA,
        "permutation": report.permutation,
        "per_source": report.per_source.iter().map(|r| json!({
            "source": r.source,
            "estimate": r.estimate,
            "sdr_db": json_db(r.sdr),
            "sir_db": json_db(r.sir),
            "sar_db": json_db(r.sar),
            "sdr_improvement_db": r.sdr_improvement.map(json_db),
        })).collect::<Vec<_>>(),
    })
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# schema: {TRACE_SCHEMA}")?;
    writeln!(
        out,
        "iteration,objective,demix_norm,mask_mean,mask_min,mask_max,wall_seconds"
    )?;
    for r in trace {
        let (mm, mn, mx) = r
            .mask
            .map(|m| (fmt_db(m.mean), fmt_db(m.min), fmt_db(m.max)))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.9},{},{},{},{:.6}",
            r.iteration,
            r.objective.map(|o| format!("{o:.9}")).unwrap_or_default(),
            r.demix_norm,
            mm,
            mn,
            mx,
            r.wall_seconds
        )?;
    }
    Ok(())
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
