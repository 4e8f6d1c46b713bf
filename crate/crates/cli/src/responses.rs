//! Filter-response CSV export: one row per filter with its peak-response
//! frequency and the magnitude response (normalized by the bank-wide
//! maximum) on a uniform frequency grid. UTF-8, LF line endings.

use std::fs;
use std::path::Path;

use wavespk_core::filterbank::{filter_responses, FilterBank};

use crate::CliError;

/// Write the response table. Header: `filter,peak_hz,r_0,...,r_{n_fft/2}`.
pub fn export_filter_responses(
    bank: &FilterBank,
    n_fft: usize,
    path: &Path,
) -> Result<(), CliError> {
    let rows = filter_responses(bank, n_fft).map_err(CliError::data)?;
    let mut out = String::from("filter,peak_hz");
    for k in 0..=n_fft / 2 {
        out.push_str(&format!(",r_{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.index, r.peak_hz));
        for m in &r.magnitudes {
            out.push_str(&format!(",{m}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parsed response row (used by tests and by downstream tooling).
#[derive(Debug, Clone)]
pub struct ResponseRow {
    pub filter: usize,
    pub peak_hz: f64,
    pub magnitudes: Vec<f64>,
}

pub fn read_filter_responses(path: &Path) -> Result<Vec<ResponseRow>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?;
    if !header.starts_with("filter,peak_hz,r_0") {
        return Err(CliError::Data(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(CliError::Data(format!(
                "{}: short row on line {}",
                path.display(),
                i + 2
            )));
        }
        let bad = |what: &str| CliError::Data(format!("{}: bad {what} on line {}", path.display(), i + 2));
        rows.push(ResponseRow {
            filter: cols[0].parse().map_err(|_| bad("filter index"))?,
            peak_hz: cols[1].parse().map_err(|_| bad("peak frequency"))?,
            magnitudes: cols[2..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("magnitude"))?,
        });
    }
    Ok(rows)
}
