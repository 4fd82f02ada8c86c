//! CSV metrics output: `label,iteration,msd,msd_db`, six decimals, `\n` endings.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::diagnostics::MetricsTrace;
use crate::error::{Error, Result};

pub const HEADER: &str = "label,iteration,msd,msd_db";

fn quote(label: &str) -> String {
    if label.contains([',', '"', '\n']) {
        format!("\"{}\"", label.replace('"', "\"\""))
    } else {
        label.to_string()
    }
}

fn number(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn format_csv(traces: &[MetricsTrace]) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for t in traces {
        let label = quote(&t.label);
        for r in &t.records {
            let _ = writeln!(out, "{label},{},{},{}", r.iteration, number(r.msd), number(r.msd_db));
        }
    }
    out
}

pub fn write_csv(traces: &[MetricsTrace], path: &Path) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to write"));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format_csv(traces).as_bytes())
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(path, e))
}
