//! Corpus manifest: one row per utterance with its split, speaker,
//! condition and duration. Tab-separated with a header, UTF-8, LF.

use std::fs;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub split: String,
    pub condition: String,
    pub duration_s: f64,
}

pub const HEADER: &str = "utt_id\tspeaker_id\tsplit\tcondition\tduration_s";

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CliError> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.utt_id, e.speaker_id, e.split, e.condition, e.duration_s
        ));
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        _ => {
            return Err(CliError::Data(format!(
                "{}: missing manifest header",
                path.display()
            )))
        }
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(CliError::Data(format!(
                "{}: line {} has {} columns, expected 5",
                path.display(),
                i + 2,
                cols.len()
            )));
        }
        entries.push(ManifestEntry {
            utt_id: cols[0].to_string(),
            speaker_id: cols[1].to_string(),
            split: cols[2].to_string(),
            condition: cols[3].to_string(),
            duration_s: cols[4].parse().map_err(|_| {
                CliError::Data(format!("{}: bad duration on line {}", path.display(), i + 2))
            })?,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let entries = vec![
            ManifestEntry {
                utt_id: "s000_u00".into(),
                speaker_id: "s000".into(),
                split: "train".into(),
                condition: "clean".into(),
                duration_s: 1.0,
            },
            ManifestEntry {
                utt_id: "s000_u00_aug".into(),
                speaker_id: "s000".into(),
                split: "train".into(),
                condition: "noisy".into(),
                duration_s: 1.0,
            },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }
}
