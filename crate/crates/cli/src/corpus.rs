//! Corpus materialization and loading: WAV files laid out as
//! `<root>/<split>/<speaker_id>/<utt_id>.wav`, one manifest covering every
//! split, and a single trial list shared by the matched and mismatched
//! evaluation splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use wavespk_core::synth::{build_protocol, realize, Protocol, ProtocolConfig, UttSpec};
use wavespk_core::Waveform;

use crate::manifest::{read_manifest, write_manifest, ManifestEntry};
use crate::trials::write_trials;
use crate::wav::{read_wav, write_wav};
use crate::CliError;

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_EVAL_MATCHED: &str = "eval-matched";
pub const SPLIT_EVAL_MISMATCHED: &str = "eval-mismatched";

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.tsv")
}

pub fn trials_path(root: &Path) -> PathBuf {
    root.join("trials.tsv")
}

fn write_split(
    root: &Path,
    split: &str,
    specs: &[UttSpec],
    protocol: &Protocol,
    entries: &mut Vec<ManifestEntry>,
) -> Result<(), CliError> {
    for spec in specs {
        let dir = root.join(split).join(&spec.speaker_id);
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let wave = realize(spec, &protocol.speakers).map_err(CliError::numeric)?;
        write_wav(&dir.join(format!("{}.wav", spec.utt_id)), &wave)?;
        entries.push(ManifestEntry {
            utt_id: spec.utt_id.clone(),
            speaker_id: spec.speaker_id.clone(),
            split: split.to_string(),
            condition: spec.condition.label().to_string(),
            duration_s: spec.duration_s,
        });
    }
    Ok(())
}

/// Synthesize and write a complete corpus.
pub fn generate_corpus(cfg: &ProtocolConfig, root: &Path) -> Result<Protocol, CliError> {
    let protocol = build_protocol(cfg).map_err(CliError::usage)?;
    fs::create_dir_all(root).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
    let mut entries = Vec::new();
    write_split(root, SPLIT_TRAIN, &protocol.train, &protocol, &mut entries)?;
    write_split(
        root,
        SPLIT_EVAL_MATCHED,
        &protocol.eval_matched,
        &protocol,
        &mut entries,
    )?;
    write_split(
        root,
        SPLIT_EVAL_MISMATCHED,
        &protocol.eval_mismatched,
        &protocol,
        &mut entries,
    )?;
    write_manifest(&manifest_path(root), &entries)?;
    write_trials(&trials_path(root), &protocol.trials)?;
    Ok(protocol)
}

/// Load every utterance of one split, in manifest order.
pub fn load_split(
    root: &Path,
    split: &str,
) -> Result<Vec<(ManifestEntry, Waveform)>, CliError> {
    let entries = read_manifest(&manifest_path(root))?;
    let selected: Vec<ManifestEntry> = entries
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!(
            "corpus at {} has no '{split}' split",
            root.display()
        )));
    }
    selected
        .into_iter()
        .map(|e| {
            let path = root
                .join(&e.split)
                .join(&e.speaker_id)
                .join(format!("{}.wav", e.utt_id));
            let wave = read_wav(&path)?;
            Ok((e, wave))
        })
        .collect()
}

/// Stable speaker-id -> label mapping (sorted order).
pub fn speaker_labels(entries: &[ManifestEntry]) -> BTreeMap<String, usize> {
    let mut ids: Vec<&str> = entries.iter().map(|e| e.speaker_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i))
        .collect()
}
