//! Exhaustive threshold-sweep oracles for EER and min-DCF, kept independent
//! of the library's incremental implementations: operating points are
//! recomputed by brute-force counting per threshold, and the ROC convex
//! hull is built by gift wrapping instead of a monotone chain.

use wavespk_core::metrics::{det_points, eer, min_dcf, ScoreSet};
use wavespk_core::rng;

fn brute_force_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let n_t = labels.iter().filter(|&&t| t).count() as f64;
    let n_n = labels.len() as f64 - n_t;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut points = vec![(1.0, 0.0)];
    for &t in &thresholds {
        let mut miss = 0usize;
        let mut fa = 0usize;
        for (&s, &target) in scores.iter().zip(labels) {
            if target && s < t {
                miss += 1;
            }
            if !target && s >= t {
                fa += 1;
            }
        }
        points.push((fa as f64 / n_n, miss as f64 / n_t));
    }
    points.push((0.0, 1.0));
    points
}

/// Gift-wrapping walk along the lower-left boundary of the point cloud.
fn gift_wrap_lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    pts.dedup();
    // Start from the leftmost-lowest point and repeatedly pick the vertex
    // that keeps every other point above the directed edge.
    let start = *pts
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()))
        .unwrap();
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut candidate: Option<(f64, f64)> = None;
        for &p in &pts {
            if p == current || p.0 < current.0 {
                continue;
            }
            match candidate {
                None => candidate = Some(p),
                Some(c) => {
                    let cross = (c.0 - current.0) * (p.1 - current.1)
                        - (c.1 - current.1) * (p.0 - current.0);
                    // Prefer the most clockwise edge; on collinear ties take
                    // the farther point so collinear vertices are skipped.
                    if cross < 0.0
                        || (cross == 0.0
                            && (p.0 - current.0).hypot(p.1 - current.1)
                                > (c.0 - current.0).hypot(c.1 - current.1))
                    {
                        candidate = Some(p);
                    }
                }
            }
        }
        match candidate {
            Some(next) => {
                hull.push(next);
                current = next;
                if next.0 >= 1.0 {
                    break;
                }
            }
            None => break,
        }
    }
    hull
}

fn oracle_eer_percent(scores: &[f64], labels: &[bool]) -> f64 {
    let hull = gift_wrap_lower_hull(&brute_force_points(scores, labels));
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.1 - a.0;
        let db = b.1 - b.0;
        if da == 0.0 {
            return 100.0 * a.0;
        }
        if db == 0.0 {
            return 100.0 * b.0;
        }
        if da.signum() != db.signum() {
            let alpha = da / (da - db);
            return 100.0 * (a.0 + alpha * (b.0 - a.0));
        }
    }
    panic!("oracle hull does not cross the diagonal");
}

fn oracle_min_dcf(scores: &[f64], labels: &[bool], p_t: f64, c_m: f64, c_f: f64) -> f64 {
    let norm = (c_m * p_t).min(c_f * (1.0 - p_t));
    brute_force_points(scores, labels)
        .iter()
        .map(|&(pfa, pmiss)| c_m * p_t * pmiss + c_f * (1.0 - p_t) * pfa)
        .fold(f64::INFINITY, f64::min)
        / norm
}

fn random_set(seed: u64, max_trials: usize) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::from_seed(seed);
    let n = 4 + rng::below(&mut r, max_trials - 4);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let target = if i == 0 {
            true
        } else if i == 1 {
            false
        } else {
            rng::uniform(&mut r) < 0.45
        };
        let mut s = rng::normal(&mut r) + if target { 0.7 } else { 0.0 };
        // Inject ties so the tie-handling path is exercised.
        if rng::uniform(&mut r) < 0.2 {
            s = (s * 4.0).round() / 4.0;
        }
        scores.push(s);
        labels.push(target);
    }
    (scores, labels)
}

#[test]
fn eer_matches_brute_force_oracle_on_100_random_sets() {
    for seed in 0..100u64 {
        let (scores, labels) = random_set(1000 + seed, 1000);
        let set = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        let got = eer(&set).unwrap();
        let want = oracle_eer_percent(&scores, &labels);
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn min_dcf_matches_brute_force_oracle_exactly() {
    for seed in 0..100u64 {
        let (scores, labels) = random_set(5000 + seed, 1000);
        let set = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        for (p_t, c_m, c_f) in [(0.01, 1.0, 1.0), (0.05, 10.0, 1.0), (0.5, 1.0, 2.0)] {
            let got = min_dcf(&set, p_t, c_m, c_f).unwrap();
            let want = oracle_min_dcf(&scores, &labels, p_t, c_m, c_f);
            assert_eq!(got, want, "seed {seed} p_t {p_t}");
        }
    }
}

#[test]
fn spec_example_small_set() {
    // Targets {2, 0}, nontargets {1, -1}: hull crossing at 25%.
    let set = ScoreSet::new(vec![2.0, 0.0, 1.0, -1.0], vec![true, true, false, false]).unwrap();
    assert_eq!(eer(&set).unwrap(), 25.0);
    assert_eq!(
        oracle_eer_percent(&[2.0, 0.0, 1.0, -1.0], &[true, true, false, false]),
        25.0
    );
}

#[test]
fn det_points_cover_both_extremes() {
    let set = ScoreSet::new(vec![1.0, 0.5, -0.5], vec![true, false, false]).unwrap();
    let pts = det_points(&set);
    assert_eq!(pts.first(), Some(&(1.0, 0.0)));
    assert_eq!(pts.last(), Some(&(0.0, 1.0)));
    // p_fa non-increasing, p_miss non-decreasing along the sweep.
    for w in pts.windows(2) {
        assert!(w[1].0 <= w[0].0 && w[1].1 >= w[0].1);
    }
}
