//! Gaussian PLDA in factor form, x = mu + F h + eps with h ~ N(0, I_q) and
//! eps ~ N(0, Sigma), fitted by EM on preprocessed embeddings and scored
//! with the closed-form same/different-speaker log-likelihood ratio.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{chol_logdet, chol_quadform, chol_solve_mat, jacobi_eigh, Mat};
use super::ScoringError;
use crate::fmath;

const LN_2PI: f64 = 1.8378770664093453;

/// Fitted PLDA model. Scoring contexts (Cholesky factors of the pair
/// covariances) are precomputed at fit time, so scoring is cheap and the
/// model is immutable and safe to share across threads of a scoring sweep.
#[derive(Debug, Clone)]
pub struct PldaModel {
    /// Mean of the preprocessed training embeddings.
    pub mu: Vec<f64>,
    /// Speaker factor loading, d x q.
    pub f: Mat,
    /// Within-speaker residual covariance, d x d.
    pub sigma: Mat,
    /// Total-data log-likelihood per EM iteration (length em_iters + 1,
    /// including the value under the initial parameters).
    pub loglik: Vec<f64>,
    /// Diagnostics from fitting, e.g. covariance regularization events.
    pub warnings: Vec<String>,
    chol_sigma: Mat,
    chol_total: Mat,
    chol_sum: Mat,
}

impl PldaModel {
    /// Between-speaker covariance F F^T.
    pub fn between_cov(&self) -> Mat {
        self.f.matmul(&self.f.transpose()).expect("d x q times q x d")
    }

    /// Total covariance F F^T + Sigma.
    pub fn total_cov(&self) -> Mat {
        self.between_cov().add(&self.sigma).expect("same shape")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.f.cols
    }

    /// log p(enroll, test | same speaker) - log p(enroll, test | different
    /// speakers). Symmetric in its arguments.
    ///
    /// With Phi = F F^T the pair covariance under "same" has diagonal blocks
    /// Phi + Sigma and off-diagonal Phi; rotating to sum/difference
    /// coordinates u = (e + t)/sqrt(2), v = (e - t)/sqrt(2) decouples it
    /// into N(u; Sigma + 2 Phi) * N(v; Sigma), while "different" becomes
    /// N(u; Sigma + Phi) * N(v; Sigma + Phi).
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64, ScoringError> {
        let d = self.dim();
        if enroll.len() != d || test.len() != d {
            return Err(ScoringError::InvalidArgument(format!(
                "embedding dimensions {} / {} do not match model dimension {d}",
                enroll.len(),
                test.len()
            )));
        }
        let inv_sqrt2 = core::f64::consts::FRAC_1_SQRT_2;
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        for i in 0..d {
            let e = enroll[i] - self.mu[i];
            let t = test[i] - self.mu[i];
            u[i] = (e + t) * inv_sqrt2;
            v[i] = (e - t) * inv_sqrt2;
        }
        let ll_same = gaussian_ll(&self.chol_sum, &u) + gaussian_ll(&self.chol_sigma, &v);
        let ll_diff = gaussian_ll(&self.chol_total, &u) + gaussian_ll(&self.chol_total, &v);
        Ok(ll_same - ll_diff)
    }
}

fn gaussian_ll(chol: &Mat, x: &[f64]) -> f64 {
    -0.5 * (x.len() as f64 * LN_2PI + chol_logdet(chol) + chol_quadform(chol, x))
}

struct SpeakerStats {
    count: usize,
    /// Sum of centered embeddings.
    sum: Vec<f64>,
    /// Centered per-utterance vectors.
    members: Vec<usize>,
}

/// Fit a PLDA model by EM.
///
/// Requires at least two speakers, at least two of which have two or more
/// utterances (otherwise the within/between split is unidentifiable). The
/// total-data log-likelihood is recorded once per iteration and is
/// nondecreasing up to numerical slack. A non-positive-definite Sigma update
/// is regularized with a scaled identity and reported in `warnings`.
pub fn plda_fit(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    latent_dim: usize,
    em_iters: usize,
) -> Result<PldaModel, ScoringError> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(ScoringError::InvalidArgument(format!(
            "{} embeddings with {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(ScoringError::InvalidArgument(String::from(
            "embeddings have inconsistent dimensions",
        )));
    }
    if latent_dim == 0 || latent_dim > d {
        return Err(ScoringError::InvalidArgument(format!(
            "latent_dim {latent_dim} must lie in [1, {d}]"
        )));
    }

    // Group by speaker.
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        groups[c].push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 || groups.iter().filter(|g| g.len() >= 2).count() < 2 {
        return Err(ScoringError::InvalidArgument(String::from(
            "PLDA needs at least two speakers with at least two utterances each",
        )));
    }

    let n_total = embeddings.len();
    let mut mu = vec![0.0; d];
    for e in embeddings {
        for (m, v) in mu.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n_total as f64;
    }

    let speakers: Vec<SpeakerStats> = groups
        .iter()
        .map(|g| {
            let mut sum = vec![0.0; d];
            for &i in g {
                for (s, (x, m)) in sum.iter_mut().zip(embeddings[i].iter().zip(&mu)) {
                    *s += x - m;
                }
            }
            SpeakerStats {
                count: g.len(),
                sum,
                members: g.clone(),
            }
        })
        .collect();

    // Second moment of all centered data.
    let mut s_total = Mat::zeros(d, d);
    for e in embeddings {
        for r in 0..d {
            let dr = e[r] - mu[r];
            for c in 0..d {
                s_total.data[r * d + c] += dr * (e[c] - mu[c]);
            }
        }
    }

    // Initialization: F from the top eigenpairs of the between-class
    // covariance, Sigma from the within-class covariance.
    let mut between = Mat::zeros(d, d);
    let mut within = Mat::zeros(d, d);
    let mut within_n = 0usize;
    for sp in &speakers {
        let bar: Vec<f64> = sp.sum.iter().map(|s| s / sp.count as f64).collect();
        for r in 0..d {
            for c in 0..d {
                between.data[r * d + c] += sp.count as f64 * bar[r] * bar[c];
            }
        }
        for &i in &sp.members {
            for r in 0..d {
                let dr = embeddings[i][r] - mu[r] - bar[r];
                for c in 0..d {
                    within.data[r * d + c] += dr * (embeddings[i][c] - mu[c] - bar[c]);
                }
            }
            within_n += 1;
        }
    }
    let between = between.scale(1.0 / n_total as f64);
    let mut warnings: Vec<String> = Vec::new();
    let mut sigma = within.scale(1.0 / within_n as f64).symmetrized();
    sigma = ensure_pd(sigma, &mut warnings)?;
    let (b_evals, b_evecs) = jacobi_eigh(&between)?;
    let mut f = Mat::zeros(d, latent_dim);
    for j in 0..latent_dim {
        let scale = fmath::sqrt(b_evals[j].max(1e-6 * b_evals[0].max(1e-12)));
        for i in 0..d {
            f.set(i, j, scale * b_evecs.at(i, j));
        }
    }

    let mut loglik = Vec::with_capacity(em_iters + 1);
    for _iter in 0..em_iters {
        loglik.push(total_loglik(&speakers, &s_total, &f, &sigma, d)?);

        // E-step.
        let q = latent_dim;
        let chol_sigma = sigma.cholesky()?;
        let sigma_inv_f = chol_solve_mat(&chol_sigma, &f); // d x q
        let ft_sigma_inv_f = f.transpose().matmul(&sigma_inv_f)?; // q x q

        let mut sum_y_h = Mat::zeros(d, q); // sum over speakers of y_s h_s^T
        let mut sum_n_hh = Mat::zeros(q, q); // sum of n_s E[h h^T]
        let mut h_bars: Vec<Vec<f64>> = Vec::with_capacity(speakers.len());
        for sp in &speakers {
            let n_s = sp.count as f64;
            let m_s = ft_sigma_inv_f.scale(n_s).add_scaled_identity(1.0);
            let chol_m = m_s.cholesky()?;
            // h = M^{-1} F^T Sigma^{-1} sum_y
            let rhs: Vec<f64> = (0..q)
                .map(|j| {
                    sigma_inv_f
                        .col(j)
                        .iter()
                        .zip(&sp.sum)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            let h = super::linalg::chol_solve(&chol_m, &rhs);
            // E[h h^T] = M^{-1} + h h^T
            let m_inv = chol_solve_mat(&chol_m, &Mat::identity(q));
            for r in 0..q {
                for c in 0..q {
                    sum_n_hh.data[r * q + c] += n_s * (m_inv.at(r, c) + h[r] * h[c]);
                }
            }
            for r in 0..d {
                for c in 0..q {
                    sum_y_h.data[r * q + c] += sp.sum[r] * h[c];
                }
            }
            h_bars.push(h);
        }

        // M-step.
        let chol_hh = sum_n_hh.symmetrized().cholesky()?;
        // F_new^T solves (sum_n_hh) F^T = sum_y_h^T
        let f_new_t = chol_solve_mat(&chol_hh, &sum_y_h.transpose());
        let f_new = f_new_t.transpose();

        let mut cross = Mat::zeros(d, d); // F_new * sum_s h_s y_s^T
        for (sp, h) in speakers.iter().zip(&h_bars) {
            let fh = f_new.matvec(h)?;
            for r in 0..d {
                for c in 0..d {
                    cross.data[r * d + c] += fh[r] * sp.sum[c];
                }
            }
        }
        let sigma_new = s_total
            .sub(&cross)?
            .scale(1.0 / n_total as f64)
            .symmetrized();
        sigma = ensure_pd(sigma_new, &mut warnings)?;
        f = f_new;
    }
    loglik.push(total_loglik(&speakers, &s_total, &f, &sigma, d)?);

    let phi = f.matmul(&f.transpose())?;
    let total = phi.add(&sigma)?;
    let sum_cov = sigma.add(&phi.scale(2.0))?;
    Ok(PldaModel {
        chol_sigma: sigma.cholesky()?,
        chol_total: total.cholesky()?,
        chol_sum: sum_cov.cholesky()?,
        mu,
        f,
        sigma,
        loglik,
        warnings,
    })
}

fn ensure_pd(m: Mat, warnings: &mut Vec<String>) -> Result<Mat, ScoringError> {
    if m.cholesky().is_ok() {
        return Ok(m);
    }
    let scale = (m.trace() / m.rows as f64).abs().max(1e-6);
    let mut ridge = 1e-6 * scale;
    for _ in 0..14 {
        let fixed = m.add_scaled_identity(ridge);
        if fixed.cholesky().is_ok() {
            warnings.push(format!(
                "covariance update not positive definite; regularized with {ridge:.3e} * I"
            ));
            return Ok(fixed);
        }
        ridge *= 10.0;
    }
    Err(ScoringError::Numeric(String::from(
        "covariance update stayed indefinite after regularization; \
         the training data is degenerate for PLDA",
    )))
}

/// Total log-likelihood of the grouped data under (F, Sigma). Per speaker
/// with n utterances the covariance block-diagonalizes (in the mean /
/// deviation split) into Sigma + n Phi on the mean direction and Sigma on
/// the n - 1 deviation directions.
fn total_loglik(
    speakers: &[SpeakerStats],
    s_total: &Mat,
    f: &Mat,
    sigma: &Mat,
    d: usize,
) -> Result<f64, ScoringError> {
    let phi = f.matmul(&f.transpose())?;
    let chol_sigma = sigma.cholesky()?;
    let logdet_sigma = chol_logdet(&chol_sigma);
    // tr(Sigma^{-1} S_within_total) computed from S_total and the speaker
    // means: sum_i y_i^T Sigma^{-1} y_i - sum_s n_s ybar^T Sigma^{-1} ybar
    // equals the deviation quadratic term.
    let sigma_inv = chol_solve_mat(&chol_sigma, &Mat::identity(d));
    let mut quad_all = 0.0;
    for r in 0..d {
        for c in 0..d {
            quad_all += sigma_inv.at(r, c) * s_total.at(r, c);
        }
    }
    let mut ll = 0.0;
    let mut n_data = 0usize;
    // Cache per distinct speaker size.
    let mut cache: alloc::collections::BTreeMap<usize, (Mat, f64)> =
        alloc::collections::BTreeMap::new();
    for sp in speakers {
        let n_s = sp.count;
        n_data += n_s;
        let bar: Vec<f64> = sp.sum.iter().map(|s| s / n_s as f64).collect();
        let quad_bar_sigma: f64 = {
            let si_bar = chol_solve_mat(
                &chol_sigma,
                &Mat::from_vec(d, 1, bar.clone()).map_err(ScoringError::from)?,
            );
            bar.iter().zip(&si_bar.data).map(|(a, b)| a * b).sum()
        };
        quad_all -= n_s as f64 * quad_bar_sigma;

        let (chol_mean, logdet_mean) = cache
            .entry(n_s)
            .or_insert_with(|| {
                let cov = sigma
                    .add(&phi.scale(n_s as f64))
                    .expect("same dims")
                    .symmetrized();
                let chol = cov.cholesky().expect("mean covariance is PD");
                let ld = chol_logdet(&chol);
                (chol, ld)
            })
            .clone();
        // Mean direction: sqrt(n) ybar ~ N(0, Sigma + n Phi).
        let scaled: Vec<f64> = bar.iter().map(|v| v * fmath::sqrt(n_s as f64)).collect();
        ll += -0.5
            * (d as f64 * LN_2PI
                + logdet_mean
                + chol_quadform(&chol_mean, &scaled)
                + (n_s as f64 - 1.0) * (d as f64 * LN_2PI + logdet_sigma));
    }
    // Deviation directions quadratic term.
    ll += -0.5 * quad_all;
    debug_assert_eq!(
        n_data,
        speakers.iter().map(|s| s.count).sum::<usize>()
    );
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Sample a synthetic PLDA dataset with known parameters.
    fn sample_dataset(
        d: usize,
        q: usize,
        n_speakers: usize,
        utts: usize,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<usize>, Mat, Mat) {
        let mut r = rng::from_seed(seed);
        let mut f = Mat::zeros(d, q);
        for v in &mut f.data {
            *v = rng::normal(&mut r);
        }
        // Diagonal-ish SPD residual.
        let mut sigma = Mat::zeros(d, d);
        for i in 0..d {
            sigma.set(i, i, 0.3 + rng::uniform(&mut r));
        }
        let chol = sigma.cholesky().unwrap();
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for s in 0..n_speakers {
            let h: Vec<f64> = (0..q).map(|_| rng::normal(&mut r)).collect();
            let fh = f.matvec(&h).unwrap();
            for _ in 0..utts {
                let eps: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
                // x = F h + L eps
                let mut x = fh.clone();
                for i in 0..d {
                    for k in 0..=i {
                        x[i] += chol.at(i, k) * eps[k];
                    }
                }
                embeddings.push(x);
                labels.push(s);
            }
        }
        (embeddings, labels, f, sigma)
    }

    #[test]
    fn em_loglik_is_monotone() {
        let (embeddings, labels, _, _) = sample_dataset(6, 3, 20, 8, 71);
        let model = plda_fit(&embeddings, &labels, 3, 15).unwrap();
        for w in model.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "loglik decreased: {:?}", model.loglik);
        }
    }

    #[test]
    fn full_latent_dim_runs() {
        let (embeddings, labels, _, _) = sample_dataset(4, 2, 10, 6, 72);
        let model = plda_fit(&embeddings, &labels, 4, 5).unwrap();
        assert_eq!(model.latent_dim(), 4);
    }

    #[test]
    fn needs_repeat_speakers() {
        let (embeddings, labels, _, _) = sample_dataset(4, 2, 6, 1, 73);
        assert!(plda_fit(&embeddings, &labels, 2, 3).is_err());
    }

    #[test]
    fn one_dimensional_closed_form() {
        // d = q = 1: the LLR is fully hand-computable from scalar Gaussians.
        let (embeddings, labels, _, _) = sample_dataset(1, 1, 30, 6, 74);
        let model = plda_fit(&embeddings, &labels, 1, 20).unwrap();
        let phi = model.f.at(0, 0) * model.f.at(0, 0);
        let s = model.sigma.at(0, 0);
        let mu = model.mu[0];
        let ll1 = |x: f64, var: f64| -0.5 * (LN_2PI + fmath::ln(var) + x * x / var);
        for (e, t) in [(0.7, 0.9), (-1.2, 1.4), (0.0, 0.3)] {
            let (ec, tc) = (e - mu, t - mu);
            // Same: joint covariance [[phi+s, phi], [phi, phi+s]].
            let det_same = (phi + s) * (phi + s) - phi * phi;
            let quad_same =
                ((phi + s) * ec * ec - 2.0 * phi * ec * tc + (phi + s) * tc * tc) / det_same;
            let ll_same = -0.5 * (2.0 * LN_2PI + fmath::ln(det_same) + quad_same);
            let ll_diff = ll1(ec, phi + s) + ll1(tc, phi + s);
            let want = ll_same - ll_diff;
            let got = model.score(&[e], &[t]).unwrap();
            assert!((got - want).abs() < 1e-9, "got {got} want {want}");
        }
    }

    #[test]
    fn score_is_symmetric() {
        let (embeddings, labels, _, _) = sample_dataset(5, 2, 15, 6, 75);
        let model = plda_fit(&embeddings, &labels, 2, 10).unwrap();
        let mut r = rng::from_seed(7);
        for _ in 0..20 {
            let a: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
            let ab = model.score(&a, &b).unwrap();
            let ba = model.score(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_pair_outscores_displaced_pair() {
        let (embeddings, labels, _, _) = sample_dataset(4, 2, 25, 8, 76);
        let model = plda_fit(&embeddings, &labels, 2, 15).unwrap();
        let mu = model.mu.clone();
        let total = model.total_cov();
        let std0 = fmath::sqrt(total.at(0, 0));
        let mut displaced = mu.clone();
        displaced[0] += 5.0 * std0;
        let same_at_mean = model.score(&mu, &mu).unwrap();
        let apart = model.score(&mu, &displaced).unwrap();
        assert!(same_at_mean > apart, "{same_at_mean} vs {apart}");
    }
}
