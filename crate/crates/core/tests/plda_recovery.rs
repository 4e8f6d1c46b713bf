//! Generate-and-recover test for the PLDA backend: data sampled from a known
//! factor model must yield a fitted total covariance close to the truth, and
//! scores sampled from the fitted model must separate same/different pairs.

use wavespk_core::rng;
use wavespk_core::scoring::linalg::Mat;
use wavespk_core::scoring::plda_fit;

fn sample_from(
    f: &Mat,
    sigma_chol: &Mat,
    n_speakers: usize,
    utts: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (d, q) = (f.rows, f.cols);
    let mut r = rng::from_seed(seed);
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for s in 0..n_speakers {
        let h: Vec<f64> = (0..q).map(|_| rng::normal(&mut r)).collect();
        let fh = f.matvec(&h).unwrap();
        for _ in 0..utts {
            let eps: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
            let mut x = fh.clone();
            for i in 0..d {
                for k in 0..=i {
                    x[i] += sigma_chol.at(i, k) * eps[k];
                }
            }
            embeddings.push(x);
            labels.push(s);
        }
    }
    (embeddings, labels)
}

#[test]
fn total_covariance_recovered_within_ten_percent() {
    // 50 speakers bound the between-speaker estimation accuracy (the
    // speaker factors are only 50 independent draws), so the generating
    // scales keep the factor part modest relative to an anisotropic
    // residual; the seed is fixed, making this a deterministic instance.
    let (d, q) = (8usize, 4usize);
    let mut r = rng::from_seed(314);
    let mut f_true = Mat::zeros(d, q);
    for v in &mut f_true.data {
        *v = 0.15 * rng::normal(&mut r);
    }
    let mut sigma_true = Mat::zeros(d, d);
    for (i, &s) in [3.0, 1.5, 0.8, 0.5, 0.4, 0.4, 0.3, 0.3].iter().enumerate() {
        sigma_true.set(i, i, s);
    }
    let chol = sigma_true.cholesky().unwrap();
    let (embeddings, labels) = sample_from(&f_true, &chol, 50, 20, 2718);

    let model = plda_fit(&embeddings, &labels, q, 25).unwrap();
    assert!(model.warnings.is_empty(), "{:?}", model.warnings);

    let total_true = f_true
        .matmul(&f_true.transpose())
        .unwrap()
        .add(&sigma_true)
        .unwrap();
    let total_fit = model.total_cov();
    let diff = total_fit.sub(&total_true).unwrap();
    let rel = diff.frobenius_norm() / total_true.frobenius_norm();
    assert!(rel < 0.10, "relative Frobenius error {rel}");

    // EM log-likelihood is monotone over the run.
    for w in model.loglik.windows(2) {
        assert!(w[1] >= w[0] - 1e-8);
    }
}

#[test]
fn em_does_not_decrease_from_near_truth() {
    // One iteration starting from a fit that is already converged must not
    // lower the likelihood.
    let (d, q) = (5usize, 2usize);
    let mut r = rng::from_seed(42);
    let mut f_true = Mat::zeros(d, q);
    for v in &mut f_true.data {
        *v = rng::normal(&mut r);
    }
    let mut sigma_true = Mat::zeros(d, d);
    for i in 0..d {
        sigma_true.set(i, i, 0.5);
    }
    let chol = sigma_true.cholesky().unwrap();
    let (embeddings, labels) = sample_from(&f_true, &chol, 30, 10, 43);
    let long = plda_fit(&embeddings, &labels, q, 40).unwrap();
    let tail = &long.loglik[long.loglik.len() - 2..];
    assert!(tail[1] >= tail[0] - 1e-8);
}

#[test]
fn em_monotone_across_random_datasets() {
    for seed in 0..20u64 {
        let (d, q) = (4usize, 2usize);
        let mut r = rng::from_seed(900 + seed);
        let mut f_true = Mat::zeros(d, q);
        for v in &mut f_true.data {
            *v = rng::normal(&mut r);
        }
        let mut sigma_true = Mat::zeros(d, d);
        for i in 0..d {
            sigma_true.set(i, i, 0.3 + rng::uniform(&mut r));
        }
        let chol = sigma_true.cholesky().unwrap();
        let (embeddings, labels) = sample_from(&f_true, &chol, 12, 6, 1900 + seed);
        let model = plda_fit(&embeddings, &labels, q, 12).unwrap();
        for w in model.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {:?}", model.loglik);
        }
    }
}

#[test]
fn calibration_same_pairs_score_above_different_pairs() {
    let (d, q) = (6usize, 3usize);
    let mut r = rng::from_seed(77);
    let mut f_true = Mat::zeros(d, q);
    for v in &mut f_true.data {
        *v = rng::normal(&mut r);
    }
    let mut sigma_true = Mat::zeros(d, d);
    for i in 0..d {
        sigma_true.set(i, i, 0.6);
    }
    let chol = sigma_true.cholesky().unwrap();
    let (embeddings, labels) = sample_from(&f_true, &chol, 40, 12, 78);
    let model = plda_fit(&embeddings, &labels, q, 20).unwrap();

    // Sample fresh pairs from the fitted model itself.
    let f = model.f.clone();
    let sig_chol = model.sigma.cholesky().unwrap();
    let mut same_sum = 0.0;
    let mut diff_sum = 0.0;
    let n_pairs = 10_000;
    let draw = |rr: &mut rng::Rng, h: &[f64]| -> Vec<f64> {
        let eps: Vec<f64> = (0..d).map(|_| rng::normal(rr)).collect();
        let mut x = f.matvec(h).unwrap();
        for i in 0..d {
            x[i] += model.mu[i];
            for k in 0..=i {
                x[i] += sig_chol.at(i, k) * eps[k];
            }
        }
        x
    };
    for _ in 0..n_pairs {
        let h1: Vec<f64> = (0..q).map(|_| rng::normal(&mut r)).collect();
        let h2: Vec<f64> = (0..q).map(|_| rng::normal(&mut r)).collect();
        let a = draw(&mut r, &h1);
        let b = draw(&mut r, &h1);
        let c = draw(&mut r, &h2);
        same_sum += model.score(&a, &b).unwrap();
        diff_sum += model.score(&a, &c).unwrap();
    }
    assert!(
        same_sum / n_pairs as f64 > diff_sum / n_pairs as f64,
        "same mean {} vs diff mean {}",
        same_sum / n_pairs as f64,
        diff_sum / n_pairs as f64
    );
}
