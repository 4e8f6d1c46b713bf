//! Metrics report: EER, min-DCF and a bootstrap EER confidence interval per
//! (system, condition), emitted as CSV, plus DET operating-point export.

use std::fs;
use std::path::Path;

use wavespk_core::metrics::{self, ScoreSet};
use wavespk_core::rng;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub system: String,
    pub condition: String,
    pub backend: String,
    pub eer_pct: f64,
    pub min_dcf: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub struct ReportParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub n_boot: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            p_target: metrics::DEFAULT_P_TARGET,
            c_miss: metrics::DEFAULT_C_MISS,
            c_fa: metrics::DEFAULT_C_FA,
            n_boot: metrics::DEFAULT_N_BOOT,
            confidence: metrics::DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }
}

pub fn evaluate(
    system: &str,
    condition: &str,
    backend: &str,
    scores: &ScoreSet,
    params: &ReportParams,
) -> Result<ReportRow, CliError> {
    let eer_pct = metrics::eer(scores).map_err(CliError::numeric)?;
    let min_dcf = metrics::min_dcf(scores, params.p_target, params.c_miss, params.c_fa)
        .map_err(CliError::numeric)?;
    let mut r = rng::from_seed(params.seed);
    let (ci_low, ci_high) =
        metrics::bootstrap_eer_ci(scores, params.n_boot, params.confidence, &mut r)
            .map_err(CliError::numeric)?;
    Ok(ReportRow {
        system: system.to_string(),
        condition: condition.to_string(),
        backend: backend.to_string(),
        eer_pct,
        min_dcf,
        ci_low,
        ci_high,
        n_target: scores.n_targets(),
        n_nontarget: scores.n_nontargets(),
    })
}

pub const HEADER: &str =
    "system,condition,backend,eer_pct,min_dcf,ci_low,ci_high,n_target,n_nontarget";

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.system,
            r.condition,
            r.backend,
            r.eer_pct,
            r.min_dcf,
            r.ci_low,
            r.ci_high,
            r.n_target,
            r.n_nontarget
        ));
    }
    out
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    fs::write(path, render_csv(rows))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// DET operating points as CSV (`p_fa,p_miss` per line).
pub fn write_det_points(path: &Path, scores: &ScoreSet) -> Result<(), CliError> {
    let mut out = String::from("p_fa,p_miss\n");
    for (pfa, pmiss) in metrics::det_points(scores) {
        out.push_str(&format!("{pfa},{pmiss}\n"));
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_is_deterministic_under_seed() {
        let scores = ScoreSet::new(
            vec![2.0, 1.5, 0.2, -0.3, 1.0, 0.1],
            vec![true, true, false, false, true, false],
        )
        .unwrap();
        let params = ReportParams {
            n_boot: 200,
            ..ReportParams::default()
        };
        let a = evaluate("sys", "clean", "cosine", &scores, &params).unwrap();
        let b = evaluate("sys", "clean", "cosine", &scores, &params).unwrap();
        assert_eq!(render_csv(&[a]), render_csv(&[b]));
    }
}
