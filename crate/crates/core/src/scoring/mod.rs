//! Verification scoring backends: cosine similarity and the Gaussian PLDA
//! pipeline (LDA projection, whitening, length normalization, factor-model
//! log-likelihood-ratio scoring).

pub mod linalg;
mod plda;

pub use plda::{plda_fit, PldaModel};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::fmath;
use linalg::{jacobi_eigh, Mat};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoringError {
    InvalidArgument(String),
    /// Class means coincide; LDA has nothing to separate.
    DegenerateSeparation,
    /// Input preprocesses to the zero vector; length normalization is
    /// undefined.
    DegenerateInput,
    Numeric(String),
}

impl fmt::Display for ScoringError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoringError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            ScoringError::DegenerateSeparation => {
                write!(f, "degenerate separation: between-class scatter is zero")
            }
            ScoringError::DegenerateInput => {
                write!(f, "degenerate input: zero vector after whitening")
            }
            ScoringError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for ScoringError {}

impl From<linalg::LinalgError> for ScoringError {
    fn from(e: linalg::LinalgError) -> Self {
        ScoringError::Numeric(format!("{e}"))
    }
}

/// One verification trial: an enrollment/test utterance pair and whether the
/// two sides share a speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

/// Cosine similarity of two equal-dimension embeddings with nonzero norms.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64, ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = fmath::sqrt(a.iter().map(|v| v * v).sum());
    let nb = fmath::sqrt(b.iter().map(|v| v * v).sum());
    if na == 0.0 || nb == 0.0 {
        return Err(ScoringError::InvalidArgument(String::from(
            "cosine similarity of a zero-norm embedding",
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

fn class_index(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = alloc::vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    by_class
}

fn mean_of(embeddings: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let d = embeddings[0].len();
    let mut m = alloc::vec![0.0; d];
    for &i in idx {
        for (acc, v) in m.iter_mut().zip(&embeddings[i]) {
            *acc += v;
        }
    }
    for v in &mut m {
        *v /= idx.len() as f64;
    }
    m
}

/// Fit an LDA projection: columns are the top generalized eigenvectors of
/// the (between-class, within-class) scatter pair, unit-normalized, in
/// decreasing eigenvalue order. The within-class scatter is regularized by
/// `1e-6 * trace/d * I`.
pub fn lda_fit(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    out_dim: usize,
) -> Result<Mat, ScoringError> {
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
    let by_class = class_index(labels);
    let classes: Vec<&Vec<usize>> = by_class.iter().filter(|c| !c.is_empty()).collect();
    let n_classes = classes.len();
    if n_classes < 2 {
        return Err(ScoringError::InvalidArgument(String::from(
            "LDA needs at least two classes",
        )));
    }
    if out_dim == 0 || out_dim > d.min(n_classes - 1) {
        return Err(ScoringError::InvalidArgument(format!(
            "out_dim {out_dim} exceeds min(dim {d}, classes-1 {})",
            n_classes - 1
        )));
    }

    let all: Vec<usize> = (0..embeddings.len()).collect();
    let global = mean_of(embeddings, &all);
    let mut s_w = Mat::zeros(d, d);
    let mut s_b = Mat::zeros(d, d);
    for idx in &classes {
        let mu = mean_of(embeddings, idx);
        for &i in idx.iter() {
            let x = &embeddings[i];
            for r in 0..d {
                let dr = x[r] - mu[r];
                for c in 0..d {
                    s_w.data[r * d + c] += dr * (x[c] - mu[c]);
                }
            }
        }
        let n_c = idx.len() as f64;
        for r in 0..d {
            let dr = mu[r] - global[r];
            for c in 0..d {
                s_b.data[r * d + c] += n_c * dr * (mu[c] - global[c]);
            }
        }
    }
    let scale = s_w.trace().max(1e-300) / d as f64;
    if s_b.trace() <= 1e-10 * scale {
        return Err(ScoringError::DegenerateSeparation);
    }
    let s_w = s_w.add_scaled_identity(1e-6 * scale);

    // Generalized symmetric problem via Cholesky reduction:
    // S_w = L L^T, M = L^{-1} S_b L^{-T}, eigenvectors mapped back by L^{-T}.
    let l = s_w.cholesky()?;
    let mut y = Mat::zeros(d, d);
    for j in 0..d {
        let col = l.solve_lower(&s_b.col(j));
        for i in 0..d {
            y.set(i, j, col[i]);
        }
    }
    let mut m = Mat::zeros(d, d);
    for j in 0..d {
        let col = l.solve_lower(&y.transpose().col(j));
        for i in 0..d {
            m.set(i, j, col[i]);
        }
    }
    let (_, vecs) = jacobi_eigh(&m.symmetrized())?;
    let mut proj = Mat::zeros(d, out_dim);
    for j in 0..out_dim {
        let w = l.solve_lower_transposed(&vecs.col(j));
        let norm = fmath::sqrt(w.iter().map(|v| v * v).sum());
        // Deterministic sign: largest-magnitude component positive.
        let lead = w
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            proj.set(i, j, sign * w[i] / norm);
        }
    }
    Ok(proj)
}

/// Fitted embedding preprocessing chain: LDA projection, centering,
/// whitening, length normalization.
#[derive(Debug, Clone)]
pub struct EmbeddingTransform {
    /// d_in x d_lda projection.
    pub lda: Mat,
    /// Mean of the projected training data.
    pub mean: Vec<f64>,
    /// Whitener of the projected, centered training data (eigendecomposition
    /// based: W = Lambda^{-1/2} U^T).
    pub whitener: Mat,
}

impl EmbeddingTransform {
    /// Fit on training embeddings with speaker labels.
    pub fn fit(
        embeddings: &[Vec<f64>],
        labels: &[usize],
        lda_dim: usize,
    ) -> Result<Self, ScoringError> {
        let lda = lda_fit(embeddings, labels, lda_dim)?;
        if embeddings.len() < lda_dim + 1 {
            return Err(ScoringError::InvalidArgument(String::from(
                "not enough samples to whiten",
            )));
        }
        let projected: Vec<Vec<f64>> = embeddings
            .iter()
            .map(|e| lda.transpose().matvec(e))
            .collect::<Result<_, _>>()?;
        let all: Vec<usize> = (0..projected.len()).collect();
        let mean = mean_of(&projected, &all);
        let k = lda_dim;
        let mut cov = Mat::zeros(k, k);
        for p in &projected {
            for r in 0..k {
                let dr = p[r] - mean[r];
                for c in 0..k {
                    cov.data[r * k + c] += dr * (p[c] - mean[c]);
                }
            }
        }
        let denom = (projected.len() - 1) as f64;
        for v in &mut cov.data {
            *v /= denom;
        }
        let (eigvals, u) = jacobi_eigh(&cov)?;
        let max_ev = eigvals[0].max(1e-300);
        if eigvals.iter().any(|&ev| ev <= 1e-10 * max_ev) {
            return Err(ScoringError::Numeric(String::from(
                "projected training covariance is rank deficient",
            )));
        }
        let mut whitener = Mat::zeros(k, k);
        for i in 0..k {
            let s = 1.0 / fmath::sqrt(eigvals[i]);
            for j in 0..k {
                whitener.set(i, j, s * u.at(j, i));
            }
        }
        Ok(Self {
            lda,
            mean,
            whitener,
        })
    }

    /// LDA -> center -> whiten (no length normalization).
    pub fn whitened(&self, embedding: &[f64]) -> Result<Vec<f64>, ScoringError> {
        let z = self.lda.transpose().matvec(embedding)?;
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.whitener.matvec(&centered)?)
    }

    /// Full preprocessing: output has unit norm. An input that whitens to
    /// the zero vector (for example, the training mean itself) is reported
    /// as degenerate. The whitened space has unit covariance, so the
    /// absolute threshold below is far outside legitimate inputs.
    pub fn preprocess(&self, embedding: &[f64]) -> Result<Vec<f64>, ScoringError> {
        let mut w = self.whitened(embedding)?;
        let norm = fmath::sqrt(w.iter().map(|v| v * v).sum());
        if norm < 1e-9 {
            return Err(ScoringError::DegenerateInput);
        }
        for v in &mut w {
            *v /= norm;
        }
        Ok(w)
    }

    pub fn output_dim(&self) -> usize {
        self.whitener.rows
    }
}
