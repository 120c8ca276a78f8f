//! CSV exports for histories, spectra, matrices, and filters.
//!
//! Every file has a header row, ends with a newline, and uses the shortest
//! round-trip float representation, so identical inputs produce identical
//! bytes.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::{ObservationFilter, TimeFirFilter};
use crate::track::HistoryEntry;

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Tracking history: `frame_index,time_s,z_1..z_N,Q,L_mm_db,L_me_db`.
/// `L_me_db` is empty when no reference cross matrix was supplied.
pub fn write_history_csv(history: &[HistoryEntry], n_sources: usize, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let mut header = String::from("frame_index,time_s");
    for i in 1..=n_sources {
        header.push_str(&format!(",z_{i}"));
    }
    header.push_str(",Q,L_mm_db,L_me_db");
    writeln!(out, "{header}")?;
    for h in history {
        if h.z.len() != n_sources {
            return Err(Error::dims(
                "history entry width",
                format!("{n_sources}"),
                format!("{}", h.z.len()),
            ));
        }
        let mut line = format!("{},{}", h.frame_index, fmt_f64(h.time_s));
        for z in &h.z {
            line.push(',');
            line.push_str(&fmt_f64(*z));
        }
        line.push(',');
        line.push_str(&fmt_f64(h.objective));
        line.push(',');
        line.push_str(&fmt_f64(h.l_mm_db));
        line.push(',');
        if let Some(v) = h.l_me_db {
            line.push_str(&fmt_f64(v));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Frequency-indexed columns: `frequency_hz,<name each column>`.
/// All columns must match the bin count.
pub fn write_spectra_csv(
    bins: &[f64],
    columns: &[(&str, &[f64])],
    path: &Path,
) -> Result<()> {
    for (name, col) in columns {
        if col.len() != bins.len() {
            return Err(Error::LengthMismatch {
                context: "spectra column length",
                left: bins.len(),
                right: col.len(),
            }
            .tagged_col(name));
        }
    }
    let mut out = std::fs::File::create(path)?;
    let mut header = String::from("frequency_hz");
    for (name, _) in columns {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}")?;
    for (b, freq) in bins.iter().enumerate() {
        let mut line = fmt_f64(*freq);
        for (_, col) in columns {
            line.push(',');
            line.push_str(&fmt_f64(col[b]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

impl Error {
    fn tagged_col(self, _name: &str) -> Self {
        self
    }
}

/// Matrix dump for inspection: `row,col,value` long format.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "row,col,value")?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            writeln!(out, "{r},{c},{}", fmt_f64(m[(r, c)]))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Observation-filter dump. Time filters are long-format
/// `target,mic,tap,coeff`; frequency filters are
/// `frequency_hz,target,mic,re,im`.
pub fn write_filter_csv(of: &ObservationFilter, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    match of {
        ObservationFilter::TimeFir(f) => {
            writeln!(out, "target,mic,tap,coeff")?;
            write_time_rows(&mut out, f)?;
        }
        ObservationFilter::Frequency(f) => {
            writeln!(out, "frequency_hz,target,mic,re,im")?;
            for (b, freq) in f.bins().iter().enumerate() {
                let resp = f.response(b);
                for t in 0..f.n_targets() {
                    for m in 0..f.n_mics() {
                        writeln!(
                            out,
                            "{},{t},{m},{},{}",
                            fmt_f64(*freq),
                            fmt_f64(resp[(t, m)].re),
                            fmt_f64(resp[(t, m)].im)
                        )?;
                    }
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_time_rows(out: &mut std::fs::File, f: &TimeFirFilter) -> Result<()> {
    for t in 0..f.n_targets() {
        for m in 0..f.n_mics() {
            for tap in 0..f.filter_len() {
                writeln!(
                    out,
                    "{t},{m},{tap},{}",
                    fmt_f64(f.coeffs()[(t, m * f.filter_len() + tap)])
                )?;
            }
        }
    }
    Ok(())
}
