//! Verification metrics: equal error rate, minimum normalized detection
//! cost, DET operating points, and bootstrap confidence intervals /
//! paired significance tests over trial scores.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    InvalidArgument(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Trial scores with parallel target/nontarget labels.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    /// `labels[i]` is true for target (same-speaker) trials. Requires at
    /// least one trial of each kind and finite scores.
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::InvalidArgument(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::InvalidArgument(String::from(
                "scores must be finite",
            )));
        }
        let n_target = labels.iter().filter(|&&t| t).count();
        if n_target == 0 || n_target == labels.len() {
            return Err(MetricsError::InvalidArgument(String::from(
                "need at least one target and one nontarget trial",
            )));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.labels.iter().filter(|&&t| t).count()
    }

    pub fn n_nontargets(&self) -> usize {
        self.len() - self.n_targets()
    }

    pub fn target_scores(&self) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(|(_, t)| **t)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn nontarget_scores(&self) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(|(_, t)| !**t)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// All detection operating points `(p_fa, p_miss)` of the threshold sweep
/// "accept if score >= t", for t at every distinct score plus the accept-all
/// and reject-all extremes, in order of increasing threshold. Miss and
/// false-alarm counts are integer-exact before the final division.
pub fn det_points(s: &ScoreSet) -> Vec<(f64, f64)> {
    let n_t = s.n_targets() as f64;
    let n_n = s.n_nontargets() as f64;
    let mut pairs: Vec<(f64, bool)> = s
        .scores
        .iter()
        .cloned()
        .zip(s.labels.iter().cloned())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let mut points = Vec::with_capacity(pairs.len() + 2);
    // Accept everything.
    points.push((1.0, 0.0));
    let mut miss = 0usize; // targets strictly below the threshold
    let mut below_nontarget = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        // Advance over scores strictly below t happens via the previous
        // loop iterations; count scores equal to t after emitting the point.
        let fa = s.n_nontargets() - below_nontarget;
        points.push((fa as f64 / n_n, miss as f64 / n_t));
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                miss += 1;
            } else {
                below_nontarget += 1;
            }
            i += 1;
        }
    }
    // Reject everything.
    points.push((0.0, 1.0));
    points
}

/// Lower-left convex hull of the operating points (the boundary achievable
/// with randomized thresholds), from (0, 1) to (1, 0).
fn roc_convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite")
            .then(a.1.partial_cmp(&b.1).expect("finite"))
    });
    pts.dedup();
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            // Middle point on or above the chord a->p is dominated.
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Equal error rate in percent: the crossing of the ROC convex hull with
/// the diagonal p_miss = p_fa, linearly interpolated along the hull.
pub fn eer(s: &ScoreSet) -> Result<f64, MetricsError> {
    let hull = roc_convex_hull(&det_points(s));
    // Walk hull segments (p_fa increasing, p_miss decreasing) and find
    // where p_miss - p_fa changes sign.
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.1 - a.0;
        let db = b.1 - b.0;
        if da == 0.0 {
            return Ok(100.0 * a.0);
        }
        if db == 0.0 {
            return Ok(100.0 * b.0);
        }
        if da.signum() != db.signum() {
            let alpha = da / (da - db);
            let pfa = a.0 + alpha * (b.0 - a.0);
            return Ok(100.0 * pfa);
        }
    }
    Err(MetricsError::InvalidArgument(String::from(
        "ROC hull does not cross the diagonal",
    )))
}

/// Minimum normalized detection cost over the threshold sweep:
/// min_t (c_miss * p_target * P_miss(t) + c_fa * (1 - p_target) * P_fa(t)),
/// divided by min(c_miss * p_target, c_fa * (1 - p_target)).
pub fn min_dcf(
    s: &ScoreSet,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<f64, MetricsError> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "p_target must lie in (0, 1), got {p_target}"
        )));
    }
    if c_miss <= 0.0 || c_fa <= 0.0 {
        return Err(MetricsError::InvalidArgument(String::from(
            "costs must be positive",
        )));
    }
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let best = det_points(s)
        .iter()
        .map(|&(pfa, pmiss)| c_miss * p_target * pmiss + c_fa * (1.0 - p_target) * pfa)
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}

/// Default min-DCF operating point (a common speaker-verification choice).
pub const DEFAULT_P_TARGET: f64 = 0.01;
pub const DEFAULT_C_MISS: f64 = 1.0;
pub const DEFAULT_C_FA: f64 = 1.0;
pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

fn check_bootstrap_args(n_boot: usize, confidence: f64) -> Result<(), MetricsError> {
    if n_boot < 100 {
        return Err(MetricsError::InvalidArgument(format!(
            "need at least 100 bootstrap replicates, got {n_boot}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    Ok(())
}

/// Linear-interpolation empirical quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn resample_indices(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| crate::rng::below(rng, n)).collect()
}

/// Percentile bootstrap confidence interval for the EER (in percent).
/// Target and nontarget trials are resampled with replacement
/// independently, preserving their counts.
pub fn bootstrap_eer_ci(
    s: &ScoreSet,
    n_boot: usize,
    confidence: f64,
    rng: &mut Rng,
) -> Result<(f64, f64), MetricsError> {
    check_bootstrap_args(n_boot, confidence)?;
    let targets = s.target_scores();
    let nontargets = s.nontarget_scores();
    let mut replicates = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let t_idx = resample_indices(rng, targets.len());
        let n_idx = resample_indices(rng, nontargets.len());
        let mut scores: Vec<f64> = t_idx.iter().map(|&i| targets[i]).collect();
        let mut labels = alloc::vec![true; scores.len()];
        scores.extend(n_idx.iter().map(|&i| nontargets[i]));
        labels.extend(core::iter::repeat_n(false, n_idx.len()));
        replicates.push(eer(&ScoreSet::new(scores, labels)?)?);
    }
    replicates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let tail = (1.0 - confidence) / 2.0;
    Ok((
        quantile_sorted(&replicates, tail),
        quantile_sorted(&replicates, 1.0 - tail),
    ))
}

/// Outcome of the paired bootstrap comparison of two systems.
#[derive(Debug, Clone, Copy)]
pub struct EerDiff {
    /// Point estimate eer(a) - eer(b), in percent.
    pub diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the confidence interval excludes zero.
    pub significant: bool,
}

/// Paired bootstrap significance test of the EER difference between two
/// systems scored on the same trial list. Each replicate resamples trial
/// indices once and applies them to both systems.
pub fn eer_diff_significant(
    a: &ScoreSet,
    b: &ScoreSet,
    n_boot: usize,
    confidence: f64,
    rng: &mut Rng,
) -> Result<EerDiff, MetricsError> {
    check_bootstrap_args(n_boot, confidence)?;
    if a.labels != b.labels {
        return Err(MetricsError::InvalidArgument(String::from(
            "paired comparison requires identical trial lists (labels differ)",
        )));
    }
    let (ta, na) = (a.target_scores(), a.nontarget_scores());
    let (tb, nb) = (b.target_scores(), b.nontarget_scores());
    let mut replicates = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let t_idx = resample_indices(rng, ta.len());
        let n_idx = resample_indices(rng, na.len());
        let build = |t: &[f64], n: &[f64]| -> Result<f64, MetricsError> {
            let mut scores: Vec<f64> = t_idx.iter().map(|&i| t[i]).collect();
            let mut labels = alloc::vec![true; scores.len()];
            scores.extend(n_idx.iter().map(|&i| n[i]));
            labels.extend(core::iter::repeat_n(false, n_idx.len()));
            eer(&ScoreSet::new(scores, labels)?)
        };
        replicates.push(build(&ta, &na)? - build(&tb, &nb)?);
    }
    replicates.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let tail = (1.0 - confidence) / 2.0;
    let ci_low = quantile_sorted(&replicates, tail);
    let ci_high = quantile_sorted(&replicates, 1.0 - tail);
    Ok(EerDiff {
        diff: eer(a)? - eer(b)?,
        ci_low,
        ci_high,
        significant: ci_low > 0.0 || ci_high < 0.0,
    })
}
