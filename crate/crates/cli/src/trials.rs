//! Trial and score file formats.
//!
//! Trial file: `enroll_id<TAB>test_id<TAB>{target|nontarget}` per line.
//! Score file: `enroll_id<TAB>test_id<TAB>score` with six decimal places.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use wavespk_core::metrics::ScoreSet;
use wavespk_core::scoring::Trial;

use crate::CliError;

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<(), CliError> {
    let mut out = String::new();
    for t in trials {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            t.enroll,
            t.test,
            if t.target { "target" } else { "nontarget" }
        ));
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut trials = Vec::new();
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
        let target = match cols[2] {
            "target" => true,
            "nontarget" => false,
            other => {
                return Err(CliError::Data(format!(
                    "{}: line {}: unknown label '{other}'",
                    path.display(),
                    i + 1
                )))
            }
        };
        trials.push(Trial {
            enroll: cols[0].to_string(),
            test: cols[1].to_string(),
            target,
        });
    }
    if trials.is_empty() {
        return Err(CliError::Data(format!(
            "{}: empty trial list",
            path.display()
        )));
    }
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

pub fn write_scores(path: &Path, scores: &[ScoredTrial]) -> Result<(), CliError> {
    let mut out = String::new();
    for s in scores {
        out.push_str(&format!("{}\t{}\t{:.6}\n", s.enroll, s.test, s.score));
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredTrial>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut scores = Vec::new();
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
        scores.push(ScoredTrial {
            enroll: cols[0].to_string(),
            test: cols[1].to_string(),
            score: cols[2].parse().map_err(|_| {
                CliError::Data(format!("{}: bad score on line {}", path.display(), i + 1))
            })?,
        });
    }
    Ok(scores)
}

/// Join a trial list with its scores into a `ScoreSet` (every trial must be
/// scored exactly once).
pub fn join_score_set(trials: &[Trial], scores: &[ScoredTrial]) -> Result<ScoreSet, CliError> {
    let mut by_pair: HashMap<(&str, &str), f64> = HashMap::with_capacity(scores.len());
    for s in scores {
        if by_pair
            .insert((s.enroll.as_str(), s.test.as_str()), s.score)
            .is_some()
        {
            return Err(CliError::Data(format!(
                "duplicate score for trial {} {}",
                s.enroll, s.test
            )));
        }
    }
    let mut values = Vec::with_capacity(trials.len());
    let mut labels = Vec::with_capacity(trials.len());
    for t in trials {
        let score = by_pair
            .get(&(t.enroll.as_str(), t.test.as_str()))
            .ok_or_else(|| {
                CliError::Data(format!("missing score for trial {} {}", t.enroll, t.test))
            })?;
        values.push(*score);
        labels.push(t.target);
    }
    ScoreSet::new(values, labels).map_err(CliError::data)
}
