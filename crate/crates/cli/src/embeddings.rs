//! Embedding tables: one row per utterance, tab-separated
//! `utt_id<TAB>speaker_id<TAB>v0 v1 ...` with shortest-roundtrip float
//! formatting (reads back bit-exact).

use std::fs;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub vector: Vec<f64>,
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.utt_id);
        out.push('\t');
        out.push_str(&r.speaker_id);
        out.push('\t');
        for (i, v) in r.vector.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CliError::Data(format!(
                "{}: line {} has {} columns, expected 3",
                path.display(),
                i + 1,
                cols.len()
            )));
        }
        let vector: Vec<f64> = cols[2]
            .split(' ')
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                CliError::Data(format!("{}: bad float on line {}", path.display(), i + 1))
            })?;
        if let Some(d) = dim {
            if vector.len() != d {
                return Err(CliError::Data(format!(
                    "{}: inconsistent embedding dimension on line {}",
                    path.display(),
                    i + 1
                )));
            }
        } else {
            dim = Some(vector.len());
        }
        records.push(EmbeddingRecord {
            utt_id: cols[0].to_string(),
            speaker_id: cols[1].to_string(),
            vector,
        });
    }
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no embeddings",
            path.display()
        )));
    }
    Ok(records)
}
