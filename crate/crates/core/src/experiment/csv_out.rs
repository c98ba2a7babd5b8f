use std::io::Write;

use super::{CoverageOutput, MseOutput};
use crate::error::{Error, Result};

/// Round-trippable float text: 17 significant digits in scientific form.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

pub(crate) fn write_row<W: Write>(w: &mut csv::Writer<W>, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(csv_err)
}

pub(crate) fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Columns: model, n, p, scheme, eta0, checkpoint, t_n, replications_used,
/// diverged, mse, var_trace.
pub fn write_mse_csv<W: Write>(out: W, result: &MseOutput) -> Result<()> {
    let mut w = writer(out);
    write_row(
        &mut w,
        &["model", "n", "p", "scheme", "eta0", "checkpoint", "t_n", "replications_used", "diverged", "mse", "var_trace"]
            .map(String::from),
    )?;
    for s in &result.summary {
        write_row(
            &mut w,
            &[
                s.model.to_string(),
                s.n.to_string(),
                s.p.to_string(),
                s.scheme.clone(),
                fmt_f64(s.eta0),
                fmt_f64(s.checkpoint),
                s.t_n.to_string(),
                s.used.to_string(),
                s.diverged.to_string(),
                fmt_f64(s.mse),
                fmt_f64(s.var_trace),
            ],
        )?;
    }
    finish(w)
}

/// One row per (replication, checkpoint, scheme, eta0). Columns: model, n,
/// p, scheme, eta0, checkpoint, t_n, replication, diverged, sq_error.
pub fn write_mse_records_csv<W: Write>(out: W, result: &MseOutput) -> Result<()> {
    let mut w = writer(out);
    write_row(
        &mut w,
        &["model", "n", "p", "scheme", "eta0", "checkpoint", "t_n", "replication", "diverged", "sq_error"].map(String::from),
    )?;
    for r in &result.records {
        write_row(
            &mut w,
            &[
                r.model.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.scheme.clone(),
                fmt_f64(r.eta0),
                fmt_f64(r.checkpoint),
                r.t_n.to_string(),
                r.replication.to_string(),
                (r.diverged as u8).to_string(),
                fmt_f64(r.sq_error),
            ],
        )?;
    }
    finish(w)
}

/// Columns: model, n, p, scheme, eta0, checkpoint, t_n, regime,
/// param_index, name, coverage, replications_used, failed.
pub fn write_coverage_csv<W: Write>(out: W, result: &CoverageOutput) -> Result<()> {
    let mut w = writer(out);
    write_row(
        &mut w,
        &[
            "model",
            "n",
            "p",
            "scheme",
            "eta0",
            "checkpoint",
            "t_n",
            "regime",
            "param_index",
            "name",
            "coverage",
            "replications_used",
            "failed",
        ]
        .map(String::from),
    )?;
    for r in &result.rows {
        write_row(
            &mut w,
            &[
                r.model.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.scheme.clone(),
                fmt_f64(r.eta0),
                fmt_f64(r.checkpoint),
                r.t_n.to_string(),
                r.regime.to_string(),
                r.param_index.to_string(),
                r.name.clone(),
                fmt_f64(r.coverage),
                r.used.to_string(),
                r.failed.to_string(),
            ],
        )?;
    }
    finish(w)
}
