//! The shared speaker-embedding backbone: a learnable (or mel) front-end,
//! five decimation-2 depthwise-separable downsampling blocks, dilated TDNN
//! layers, statistics pooling (per-channel mean and standard deviation over
//! time), a linear embedding layer and a speaker-classifier head, plus the
//! training loop that fits it all with Adam.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{backward, Adam, Tensor, TensorError};
use crate::dsp::Waveform;
use crate::filterbank::{
    self, frontend_graph, sinc_weights_graph, FilterBank, FilterMode,
    SincParams,
};
use crate::rng::{self, Rng};
use crate::vd::{self, VdLayer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    InvalidArgument(String),
    Numeric(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            ModelError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::InvalidArgument(format!("{e}"))
    }
}

impl From<filterbank::FilterbankError> for ModelError {
    fn from(e: filterbank::FilterbankError) -> Self {
        ModelError::InvalidArgument(format!("{e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontendChoice {
    Mel,
    Tdf,
    Sinc,
}

impl FrontendChoice {
    pub fn name(&self) -> &'static str {
        match self {
            FrontendChoice::Mel => "mel",
            FrontendChoice::Tdf => "tdf",
            FrontendChoice::Sinc => "sinc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutChoice {
    None,
    /// Bernoulli dropout on the first-layer weights with drop probability p.
    Bernoulli(f64),
    /// Gaussian dropout with multiplicative N(1, alpha) noise.
    Gaussian(f64),
    /// Sparse variational dropout with learned per-weight variances.
    Variational,
}

impl DropoutChoice {
    pub fn name(&self) -> &'static str {
        match self {
            DropoutChoice::None => "none",
            DropoutChoice::Bernoulli(_) => "bd",
            DropoutChoice::Gaussian(_) => "gd",
            DropoutChoice::Variational => "vd",
        }
    }
}

/// Architecture hyperparameters. The canonical geometry uses a front-end of
/// 30 filters of 400 samples (25 ms at 16 kHz) at stride 5 and five
/// decimation-2 blocks, for a total temporal reduction of 5 * 2^5 = 160
/// (10 ms per output frame at 16 kHz); channel widths are desk-scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_filters: usize,
    pub filter_len: usize,
    pub frontend_stride: usize,
    pub n_blocks: usize,
    /// Temporal decimation per block; realized as the stride (and kernel
    /// size) of each block's depthwise convolution.
    pub decimation: usize,
    pub channels: Vec<usize>,
    pub tdnn_channels: Vec<usize>,
    pub tdnn_kernel: usize,
    pub tdnn_dilations: Vec<usize>,
    pub embedding_dim: usize,
    pub n_speakers: usize,
    pub sample_rate: u32,
}

impl EncoderConfig {
    /// Desk-scale default configuration.
    pub fn toy(n_speakers: usize) -> EncoderConfig {
        EncoderConfig {
            n_filters: 30,
            filter_len: 400,
            frontend_stride: 5,
            n_blocks: 5,
            decimation: 2,
            channels: vec![32, 32, 64, 64, 128],
            tdnn_channels: vec![128, 128],
            tdnn_kernel: 3,
            tdnn_dilations: vec![1, 2],
            embedding_dim: 128,
            n_speakers,
            sample_rate: 16_000,
        }
    }

    /// Tiny configuration for gradient checks.
    pub fn tiny(n_speakers: usize) -> EncoderConfig {
        EncoderConfig {
            n_filters: 2,
            filter_len: 16,
            frontend_stride: 4,
            n_blocks: 1,
            decimation: 2,
            channels: vec![4],
            tdnn_channels: vec![4],
            tdnn_kernel: 3,
            tdnn_dilations: vec![1],
            embedding_dim: 6,
            n_speakers,
            sample_rate: 16_000,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.len() != self.n_blocks {
            return Err(ModelError::InvalidArgument(format!(
                "{} channel widths for {} blocks",
                self.channels.len(),
                self.n_blocks
            )));
        }
        if self.tdnn_channels.len() != self.tdnn_dilations.len() {
            return Err(ModelError::InvalidArgument(String::from(
                "tdnn_channels and tdnn_dilations lengths differ",
            )));
        }
        if self.n_filters == 0
            || self.filter_len < 2
            || self.frontend_stride == 0
            || self.decimation < 2
            || self.embedding_dim == 0
            || self.n_speakers < 2
        {
            return Err(ModelError::InvalidArgument(String::from(
                "degenerate encoder configuration",
            )));
        }
        Ok(())
    }

    /// Total temporal reduction from waveform samples to final frames.
    pub fn total_reduction(&self) -> usize {
        self.frontend_stride * self.decimation.pow(self.n_blocks as u32)
    }

    /// Feature-map length after each stage for a given input length:
    /// `[frontend, block_1, .., block_n, tdnn_1, .., tdnn_m]`. Errors when
    /// any stage would produce no frames.
    pub fn length_trace(&self, n_samples: usize) -> Result<Vec<usize>, ModelError> {
        let mut trace = Vec::new();
        if n_samples < self.filter_len {
            return Err(ModelError::InvalidArgument(format!(
                "input of {n_samples} samples is shorter than the filter length {}",
                self.filter_len
            )));
        }
        let mut len = (n_samples - self.filter_len) / self.frontend_stride + 1;
        trace.push(len);
        for _ in 0..self.n_blocks {
            // Depthwise kernel = stride = decimation: len -> floor(len / d).
            if len < self.decimation {
                return Err(ModelError::InvalidArgument(String::from(
                    "feature map vanished in the downsampling blocks",
                )));
            }
            len = (len - self.decimation) / self.decimation + 1;
            trace.push(len);
        }
        for &dil in &self.tdnn_dilations {
            let span = (self.tdnn_kernel - 1) * dil + 1;
            if len < span {
                return Err(ModelError::InvalidArgument(String::from(
                    "feature map vanished in the TDNN layers",
                )));
            }
            len = len - span + 1;
            trace.push(len);
        }
        Ok(trace)
    }

    /// Minimum number of input samples that still yields one output frame.
    pub fn min_input_samples(&self) -> usize {
        // Invert the recurrence from one TDNN output frame backwards.
        let mut len = 1usize;
        for &dil in self.tdnn_dilations.iter().rev() {
            len += (self.tdnn_kernel - 1) * dil;
        }
        for _ in 0..self.n_blocks {
            len = (len - 1) * self.decimation + self.decimation;
        }
        (len - 1) * self.frontend_stride + self.filter_len
    }
}

/// Front-end parameter block.
pub enum FrontendParams {
    /// Fixed mel filterbank features (not learnable).
    Mel,
    /// Non-parametric learnable filters [n_filters, filter_len].
    Tdf { weights: Tensor },
    /// Non-parametric filters under sparse variational dropout.
    TdfVd { layer: VdLayer },
    /// Parametric sinc filters: per-filter f_low and bandwidth, [n, 1] each.
    Sinc { f_low: Tensor, bw: Tensor },
}

struct BlockParams {
    dw_w: Tensor,
    dw_b: Tensor,
    pw_w: Tensor,
    pw_b: Tensor,
}

struct TdnnParams {
    w: Tensor,
    b: Tensor,
    dilation: usize,
}

/// A complete trainable model.
pub struct Model {
    pub cfg: EncoderConfig,
    pub frontend: FrontendParams,
    pub analytic: bool,
    pub dropout: DropoutChoice,
    blocks: Vec<BlockParams>,
    tdnn: Vec<TdnnParams>,
    emb_w: Tensor,
    emb_b: Tensor,
    cls_w: Tensor,
    cls_b: Tensor,
}

pub struct ForwardOut {
    pub logits: Tensor,
    pub embedding: Tensor,
}

/// Compose a model from configuration, front-end choice and dropout choice.
/// Analytic mode is invalid for the mel baseline; dropout applies only to
/// the non-parametric (tdf) filters.
pub fn build_model(
    cfg: EncoderConfig,
    frontend: FrontendChoice,
    analytic: bool,
    dropout: DropoutChoice,
    seed: u64,
) -> Result<Model, ModelError> {
    cfg.validate()?;
    if analytic && frontend == FrontendChoice::Mel {
        return Err(ModelError::InvalidArgument(String::from(
            "analytic mode is undefined for the mel front-end",
        )));
    }
    if !matches!(dropout, DropoutChoice::None) && frontend != FrontendChoice::Tdf {
        return Err(ModelError::InvalidArgument(format!(
            "dropout '{}' applies only to the non-parametric (tdf) front-end",
            dropout.name()
        )));
    }
    if let DropoutChoice::Bernoulli(p) = dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(ModelError::InvalidArgument(format!(
                "bernoulli dropout probability must lie in [0, 1), got {p}"
            )));
        }
    }
    if let DropoutChoice::Gaussian(a) = dropout {
        if a < 0.0 {
            return Err(ModelError::InvalidArgument(format!(
                "gaussian dropout variance must be non-negative, got {a}"
            )));
        }
    }

    let mut r = rng::from_seed(rng::derive_seed(seed, 0x1417));
    let frontend_params = match frontend {
        FrontendChoice::Mel => FrontendParams::Mel,
        FrontendChoice::Tdf => {
            let bank = FilterBank::gabor_init(cfg.n_filters, cfg.filter_len, cfg.sample_rate)?;
            if matches!(dropout, DropoutChoice::Variational) {
                FrontendParams::TdfVd {
                    layer: VdLayer::new(
                        &[cfg.n_filters, cfg.filter_len],
                        bank.weights,
                        -8.0,
                    )?,
                }
            } else {
                FrontendParams::Tdf {
                    weights: Tensor::leaf(&[cfg.n_filters, cfg.filter_len], bank.weights, true)?,
                }
            }
        }
        FrontendChoice::Sinc => {
            let bank = FilterBank::sinc_init(cfg.n_filters, cfg.filter_len, cfg.sample_rate)?;
            let params = bank.sinc_params.as_ref().expect("sinc bank has params");
            let f_low: Vec<f64> = params.iter().map(|p| p.f_low).collect();
            let bw: Vec<f64> = params.iter().map(|p| p.bandwidth).collect();
            FrontendParams::Sinc {
                f_low: Tensor::leaf(&[cfg.n_filters, 1], f_low, true)?,
                bw: Tensor::leaf(&[cfg.n_filters, 1], bw, true)?,
            }
        }
    };

    let he = |fan_in: usize| crate::fmath::sqrt(2.0 / fan_in as f64);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    let mut c_in = cfg.n_filters;
    for &c_out in &cfg.channels {
        let k = cfg.decimation;
        blocks.push(BlockParams {
            dw_w: Tensor::randn(&[c_in, k], he(k), &mut r, true)?,
            dw_b: Tensor::zeros(&[c_in], true)?,
            pw_w: Tensor::randn(&[c_out, c_in], he(c_in), &mut r, true)?,
            pw_b: Tensor::zeros(&[c_out], true)?,
        });
        c_in = c_out;
    }
    let mut tdnn = Vec::new();
    for (i, &c_out) in cfg.tdnn_channels.iter().enumerate() {
        tdnn.push(TdnnParams {
            w: Tensor::randn(
                &[c_out, c_in, cfg.tdnn_kernel],
                he(c_in * cfg.tdnn_kernel),
                &mut r,
                true,
            )?,
            b: Tensor::zeros(&[c_out], true)?,
            dilation: cfg.tdnn_dilations[i],
        });
        c_in = c_out;
    }
    let emb_w = Tensor::randn(&[cfg.embedding_dim, 2 * c_in], he(2 * c_in), &mut r, true)?;
    let emb_b = Tensor::zeros(&[cfg.embedding_dim], true)?;
    let cls_w = Tensor::randn(
        &[cfg.n_speakers, cfg.embedding_dim],
        he(cfg.embedding_dim),
        &mut r,
        true,
    )?;
    let cls_b = Tensor::zeros(&[cfg.n_speakers], true)?;

    Ok(Model {
        cfg,
        frontend: frontend_params,
        analytic,
        dropout,
        blocks,
        tdnn,
        emb_w,
        emb_b,
        cls_w,
        cls_b,
    })
}

impl Model {
    pub fn frontend_choice(&self) -> FrontendChoice {
        match self.frontend {
            FrontendParams::Mel => FrontendChoice::Mel,
            FrontendParams::Tdf { .. } | FrontendParams::TdfVd { .. } => FrontendChoice::Tdf,
            FrontendParams::Sinc { .. } => FrontendChoice::Sinc,
        }
    }

    /// All trainable parameters in a stable order.
    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        match &self.frontend {
            FrontendParams::Mel => {}
            FrontendParams::Tdf { weights } => {
                out.push((String::from("frontend.weights"), weights.clone()));
            }
            FrontendParams::TdfVd { layer } => {
                out.push((String::from("frontend.theta"), layer.theta.clone()));
                out.push((String::from("frontend.log_sigma2"), layer.log_sigma2.clone()));
            }
            FrontendParams::Sinc { f_low, bw } => {
                out.push((String::from("frontend.f_low"), f_low.clone()));
                out.push((String::from("frontend.bandwidth"), bw.clone()));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.dw_w"), b.dw_w.clone()));
            out.push((format!("block{i}.dw_b"), b.dw_b.clone()));
            out.push((format!("block{i}.pw_w"), b.pw_w.clone()));
            out.push((format!("block{i}.pw_b"), b.pw_b.clone()));
        }
        for (i, t) in self.tdnn.iter().enumerate() {
            out.push((format!("tdnn{i}.w"), t.w.clone()));
            out.push((format!("tdnn{i}.b"), t.b.clone()));
        }
        out.push((String::from("embed.w"), self.emb_w.clone()));
        out.push((String::from("embed.b"), self.emb_b.clone()));
        out.push((String::from("classifier.w"), self.cls_w.clone()));
        out.push((String::from("classifier.b"), self.cls_b.clone()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// The variational-dropout layer, when this model has one.
    pub fn vd_layer(&self) -> Option<&VdLayer> {
        match &self.frontend {
            FrontendParams::TdfVd { layer } => Some(layer),
            _ => None,
        }
    }

    /// Effective front-end weights at inference time (VD weights pruned at
    /// the standard threshold). None for the mel baseline.
    pub fn inference_bank(&self) -> Result<Option<FilterBank>, ModelError> {
        let mode = if self.analytic {
            FilterMode::Analytic
        } else {
            FilterMode::Real
        };
        let bank = match &self.frontend {
            FrontendParams::Mel => return Ok(None),
            FrontendParams::Tdf { weights } => FilterBank::from_weights(
                weights.data(),
                self.cfg.n_filters,
                self.cfg.filter_len,
                self.cfg.sample_rate,
                self.cfg.frontend_stride,
            )?,
            FrontendParams::TdfVd { layer } => FilterBank::from_weights(
                layer.pruned_weights(vd::PRUNE_THRESHOLD),
                self.cfg.n_filters,
                self.cfg.filter_len,
                self.cfg.sample_rate,
                self.cfg.frontend_stride,
            )?,
            FrontendParams::Sinc { f_low, bw } => {
                let params: Vec<SincParams> = f_low
                    .data()
                    .iter()
                    .zip(bw.data().iter())
                    .map(|(&f, &b)| SincParams {
                        f_low: f,
                        bandwidth: b,
                    })
                    .collect();
                FilterBank::from_sinc_params(
                    params,
                    self.cfg.filter_len,
                    self.cfg.sample_rate,
                    self.cfg.frontend_stride,
                )?
            }
        };
        Ok(Some(bank.with_mode(mode)))
    }

    fn frontend_mode(&self) -> FilterMode {
        if self.analytic {
            FilterMode::Analytic
        } else {
            FilterMode::Real
        }
    }

    /// Front-end feature graph for raw samples.
    fn frontend_features(
        &self,
        samples: &[f64],
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor, ModelError> {
        let x = Tensor::constant(&[1, samples.len()], samples.to_vec())?;
        let feat = match &self.frontend {
            FrontendParams::Mel => {
                let wave = Waveform::new(samples.to_vec(), self.cfg.sample_rate)
                    .map_err(|e| ModelError::InvalidArgument(format!("{e}")))?;
                let wg = filterbank::mel_frontend(&wave, self.cfg.n_filters)?;
                Tensor::constant(&[wg.n_filters, wg.n_frames], wg.features)?
            }
            FrontendParams::Tdf { weights } => {
                let w_eff = match (training, self.dropout) {
                    (true, DropoutChoice::Bernoulli(p)) => {
                        let noise = vd::bernoulli_noise(weights.numel(), p, true, rng)
                            .map_err(|e| ModelError::InvalidArgument(format!("{e}")))?;
                        weights.mul(&Tensor::constant(weights.shape(), noise)?)?
                    }
                    (true, DropoutChoice::Gaussian(a)) => {
                        let noise = vd::gaussian_noise(weights.numel(), a, true, rng)
                            .map_err(|e| ModelError::InvalidArgument(format!("{e}")))?;
                        weights.mul(&Tensor::constant(weights.shape(), noise)?)?
                    }
                    _ => weights.clone(),
                };
                frontend_graph(&x, &w_eff, self.frontend_mode(), self.cfg.frontend_stride)?
            }
            FrontendParams::TdfVd { layer } => {
                let w_eff = if training {
                    layer.noisy_weights_graph(rng)?
                } else {
                    Tensor::constant(layer.shape(), layer.pruned_weights(vd::PRUNE_THRESHOLD))?
                };
                frontend_graph(&x, &w_eff, self.frontend_mode(), self.cfg.frontend_stride)?
            }
            FrontendParams::Sinc { f_low, bw } => {
                let w = sinc_weights_graph(f_low, bw, self.cfg.filter_len, self.cfg.sample_rate)?;
                frontend_graph(&x, &w, self.frontend_mode(), self.cfg.frontend_stride)?
            }
        };
        Ok(feat)
    }

    /// Encoder, TDNN, pooling and heads on top of front-end features.
    fn forward_from_features(&self, feat: Tensor) -> Result<ForwardOut, ModelError> {
        let mut h = feat;
        for b in &self.blocks {
            h = h
                .depthwise_conv1d(&b.dw_w, self.cfg.decimation)?
                .bias_add(&b.dw_b)?;
            h = b.pw_w.matmul(&h)?.bias_add(&b.pw_b)?.relu();
        }
        for t in &self.tdnn {
            h = h.conv1d(&t.w, 1, t.dilation)?.bias_add(&t.b)?.relu();
        }
        let mean = h.row_mean()?;
        let std = h.row_std()?;
        let pooled = mean.concat(&std)?;
        let n = pooled.numel();
        let pooled_col = pooled.reshape(&[n, 1])?;
        let emb_col = self.emb_w.matmul(&pooled_col)?.bias_add(&self.emb_b)?;
        let embedding = emb_col.reshape(&[self.cfg.embedding_dim])?;
        let hidden = embedding.relu().reshape(&[self.cfg.embedding_dim, 1])?;
        let logits = self
            .cls_w
            .matmul(&hidden)?
            .bias_add(&self.cls_b)?
            .reshape(&[self.cfg.n_speakers])?;
        Ok(ForwardOut { logits, embedding })
    }

    /// Full forward pass from raw samples.
    pub fn forward(
        &self,
        samples: &[f64],
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardOut, ModelError> {
        let min = self.cfg.min_input_samples();
        if samples.len() < min {
            return Err(ModelError::InvalidArgument(format!(
                "input of {} samples is too short; this configuration needs at least {min}",
                samples.len()
            )));
        }
        let feat = self.frontend_features(samples, training, rng)?;
        self.forward_from_features(feat)
    }

    /// Pre-classifier speaker embedding of an utterance.
    pub fn extract_embedding(&self, x: &Waveform) -> Result<Vec<f64>, ModelError> {
        let mut r = rng::from_seed(0); // inference draws no noise
        let out = self.forward(&x.samples, false, &mut r)?;
        Ok(out.embedding.data())
    }
}

/// One labeled training utterance.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub samples: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Scale of the KL term for variational dropout; None picks 1/N (the
    /// per-datapoint ELBO convention).
    pub kl_weight: Option<f64>,
    /// Fraction of total steps over which the KL weight ramps linearly from
    /// zero to its full value.
    pub kl_warmup_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            kl_weight: None,
            kl_warmup_frac: 0.3,
            seed: 0,
        }
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
    pub kl: f64,
    pub sparsity: f64,
}

/// Train in place: softmax cross-entropy (plus the scaled VD KL when
/// applicable) minimized with Adam. Deterministic under the config seed in
/// this single-threaded implementation; returns one stats record per epoch.
pub fn train(
    model: &mut Model,
    data: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::InvalidArgument(String::from("empty dataset")));
    }
    let min = model.cfg.min_input_samples();
    for (i, item) in data.iter().enumerate() {
        if item.label >= model.cfg.n_speakers {
            return Err(ModelError::InvalidArgument(format!(
                "label {} of item {i} out of range for {} speakers",
                item.label, model.cfg.n_speakers
            )));
        }
        if item.samples.len() < min {
            return Err(ModelError::InvalidArgument(format!(
                "item {i} has {} samples; this configuration needs at least {min}",
                item.samples.len()
            )));
        }
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidArgument(String::from(
            "batch_size must be at least 1",
        )));
    }

    let params = model.params();
    let mut opt = Adam::new(cfg.lr, &params);
    let mut r = rng::from_seed(rng::derive_seed(cfg.seed, 0x7121));

    // The mel front-end is fixed, so its features are computed once.
    let mel_cache: Option<Vec<Tensor>> = if matches!(model.frontend, FrontendParams::Mel) {
        let mut cache = Vec::with_capacity(data.len());
        for item in data {
            let mut tmp = rng::from_seed(0);
            cache.push(model.frontend_features(&item.samples, false, &mut tmp)?);
        }
        Some(cache)
    } else {
        None
    };

    let kl_weight = cfg.kl_weight.unwrap_or(1.0 / data.len() as f64);
    let n_batches = data.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * n_batches).max(1);
    let warmup_steps = (cfg.kl_warmup_frac * total_steps as f64).max(1.0);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut r, &mut order);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut kl_value = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            for p in &params {
                p.zero_grad();
            }
            let inv = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let item = &data[idx];
                let out = match &mel_cache {
                    Some(cache) => model.forward_from_features(cache[idx].clone())?,
                    None => {
                        let feat = model.frontend_features(&item.samples, true, &mut r)?;
                        model.forward_from_features(feat)?
                    }
                };
                let loss = out.logits.softmax_cross_entropy(item.label)?;
                let loss_value = loss.item();
                if !loss_value.is_finite() {
                    return Err(ModelError::Numeric(format!(
                        "non-finite loss at epoch {epoch} (item {idx})"
                    )));
                }
                epoch_loss += loss_value;
                let logits = out.logits.data();
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                correct += (pred == item.label) as usize;
                backward(&loss.mul_scalar(inv))?;
            }
            if let FrontendParams::TdfVd { layer } = &model.frontend {
                let ramp = (step as f64 / warmup_steps).min(1.0);
                let coeff = ramp * kl_weight;
                kl_value = layer.kl();
                if coeff > 0.0 {
                    backward(&layer.kl_graph()?.mul_scalar(coeff))?;
                }
            }
            opt.step(&params);
            step += 1;
        }
        let sparsity = model
            .vd_layer()
            .map(|l| l.sparsity(vd::PRUNE_THRESHOLD))
            .unwrap_or(0.0);
        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            kl: kl_value,
            sparsity,
        });
    }
    Ok(history)
}

/// Serializable model state: configuration plus named weight arrays.
pub struct ModelState {
    pub frontend: FrontendChoice,
    pub analytic: bool,
    pub dropout: DropoutChoice,
    pub cfg: EncoderConfig,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Model {
    pub fn state(&self) -> ModelState {
        ModelState {
            frontend: self.frontend_choice(),
            analytic: self.analytic,
            dropout: self.dropout,
            cfg: self.cfg.clone(),
            params: self
                .named_params()
                .into_iter()
                .map(|(name, t)| (name, t.shape().to_vec(), t.data()))
                .collect(),
        }
    }

    /// Rebuild a model from saved state; weight restore is bit-exact.
    pub fn from_state(state: &ModelState) -> Result<Model, ModelError> {
        let mut model = build_model(
            state.cfg.clone(),
            state.frontend,
            state.analytic,
            state.dropout,
            0,
        )?;
        let named = model.named_params();
        if named.len() != state.params.len() {
            return Err(ModelError::InvalidArgument(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                state.params.len(),
                named.len()
            )));
        }
        for ((name, tensor), (saved_name, shape, data)) in
            named.iter().zip(state.params.iter())
        {
            if name != saved_name || tensor.shape() != &shape[..] {
                return Err(ModelError::InvalidArgument(format!(
                    "checkpoint parameter '{saved_name}' {shape:?} does not match model \
                     parameter '{name}' {:?}",
                    tensor.shape()
                )));
            }
            tensor.update_value(|v| v.copy_from_slice(data));
        }
        // Rebuild weight tensors into the frontend (leaf identity persists:
        // update_value already mutated the shared leaves).
        let _ = &mut model;
        Ok(model)
    }
}

/// Gradient checks for the composite paths built on the op set: the
/// front-end with and without the Hilbert pair, the sinc parameterization,
/// the variational-dropout reparameterization and KL, and a full tiny model.
pub fn composite_gradient_suite(seed: u64) -> Vec<crate::autodiff::GradCheck> {
    use crate::autodiff::{finite_diff_check, GradCheck};
    let mut results = Vec::new();
    let mut push = |name: &str, err: f64| {
        results.push(GradCheck {
            name: name.into(),
            max_rel_err: err,
        })
    };
    let mut r = rng::from_seed(seed);

    for (name, mode) in [
        ("frontend_real", FilterMode::Real),
        ("frontend_analytic_hilbert", FilterMode::Analytic),
    ] {
        let x = Tensor::randn(&[1, 60], 1.0, &mut r, false).expect("leaf");
        let w = Tensor::randn(&[3, 16], 0.5, &mut r, true).expect("leaf");
        let err = finite_diff_check(&[w, x], &move |l| {
            Ok(frontend_graph(&l[1], &l[0], mode, 3)?.sum_all())
        })
        .expect("composite check runs");
        push(name, err);
    }

    {
        let f_low = Tensor::leaf(&[2, 1], vec![250.0, 1100.0], true).expect("leaf");
        let bw = Tensor::leaf(&[2, 1], vec![350.0, 800.0], true).expect("leaf");
        let x = Tensor::randn(&[1, 64], 1.0, &mut r, false).expect("leaf");
        let err = finite_diff_check(&[f_low, bw, x], &|l| {
            let w = sinc_weights_graph(&l[0], &l[1], 16, 16_000)?;
            Ok(frontend_graph(&l[2], &w, FilterMode::Analytic, 4)?.sum_all())
        })
        .expect("composite check runs");
        push("sinc_parameterization", err);
    }

    {
        let theta = Tensor::randn(&[2, 4], 1.0, &mut r, true).expect("leaf");
        let ls2 = Tensor::randn(&[2, 4], 0.7, &mut r, true).expect("leaf");
        let noise_seed = rng::derive_seed(seed, 5);
        let probe_seed = rng::derive_seed(seed, 6);
        let err = finite_diff_check(&[theta.clone(), ls2.clone()], &move |l| {
            let layer = VdLayer::from_tensors(l[0].clone(), l[1].clone())
                .map_err(|e| TensorError::InvalidArgument(format!("{e}")))?;
            let mut nr = rng::from_seed(noise_seed);
            let w = layer.noisy_weights_graph(&mut nr)?;
            let mut pr = rng::from_seed(probe_seed);
            let coeffs: Vec<f64> = (0..w.numel()).map(|_| rng::normal(&mut pr)).collect();
            let probe = Tensor::constant(w.shape(), coeffs)?;
            w.mul(&probe)?.sum_all().add(&Tensor::scalar(0.0))
        })
        .expect("composite check runs");
        push("vd_forward", err);

        let err = finite_diff_check(&[theta, ls2], &|l| {
            let layer = VdLayer::from_tensors(l[0].clone(), l[1].clone())
                .map_err(|e| TensorError::InvalidArgument(format!("{e}")))?;
            layer.kl_graph()
        })
        .expect("composite check runs");
        push("vd_kl", err);
    }

    {
        let cfg = EncoderConfig::tiny(3);
        let model = build_model(
            cfg.clone(),
            FrontendChoice::Tdf,
            true,
            DropoutChoice::None,
            rng::derive_seed(seed, 9),
        )
        .expect("tiny model builds");
        let x: Vec<f64> = (0..cfg.min_input_samples() + 11)
            .map(|_| rng::normal(&mut r))
            .collect();
        let params = model.params();
        let err = finite_diff_check(&params, &move |_| {
            let mut rr = rng::from_seed(0);
            let out = model
                .forward(&x, false, &mut rr)
                .map_err(|e| TensorError::InvalidArgument(format!("{e}")))?;
            out.logits.softmax_cross_entropy(2)
        })
        .expect("composite check runs");
        push("full_tiny_model", err);
    }

    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn canonical_length_trace_and_reduction() {
        let cfg = EncoderConfig::toy(10);
        assert_eq!(cfg.total_reduction(), 160);
        let trace = cfg.length_trace(16_000).unwrap();
        // (16000-400)/5+1 = 3121, then five floor(len/2) stages, then two
        // valid dilated TDNN layers (k=3, d=1 and d=2).
        assert_eq!(trace, vec![3121, 1560, 780, 390, 195, 97, 95, 91]);
    }

    #[test]
    fn min_input_length_is_tight() {
        for cfg in [EncoderConfig::toy(5), EncoderConfig::tiny(3)] {
            let min = cfg.min_input_samples();
            assert!(cfg.length_trace(min).is_ok());
            assert!(cfg.length_trace(min - 1).is_err());
        }
    }

    #[test]
    fn invalid_combinations_rejected() {
        let cfg = EncoderConfig::tiny(3);
        assert!(build_model(
            cfg.clone(),
            FrontendChoice::Mel,
            true,
            DropoutChoice::None,
            0
        )
        .is_err());
        assert!(build_model(
            cfg.clone(),
            FrontendChoice::Sinc,
            true,
            DropoutChoice::Variational,
            0
        )
        .is_err());
        assert!(build_model(
            cfg.clone(),
            FrontendChoice::Mel,
            false,
            DropoutChoice::Bernoulli(0.2),
            0
        )
        .is_err());
        let mut bad = cfg.clone();
        bad.channels = vec![4, 4];
        assert!(build_model(bad, FrontendChoice::Tdf, false, DropoutChoice::None, 0).is_err());
    }

    #[test]
    fn logits_shape_matches_speaker_count() {
        let cfg = EncoderConfig::tiny(7);
        let model = build_model(cfg, FrontendChoice::Tdf, true, DropoutChoice::None, 1).unwrap();
        let mut r = rng::from_seed(2);
        let x: Vec<f64> = (0..model.cfg.min_input_samples() + 50)
            .map(|_| rng::normal(&mut r))
            .collect();
        let out = model.forward(&x, false, &mut r).unwrap();
        assert_eq!(out.logits.shape(), &[7]);
        assert_eq!(out.embedding.shape(), &[model.cfg.embedding_dim]);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut cfg = EncoderConfig::toy(12);
        cfg.channels = vec![16; 5];
        cfg.tdnn_channels = vec![16, 16];
        cfg.embedding_dim = 64;
        let model =
            build_model(cfg.clone(), FrontendChoice::Tdf, false, DropoutChoice::None, 0).unwrap();
        // frontend + per block (dw: C_in*k + C_in, pw: C_out*C_in + C_out)
        // + tdnn (C_out*C_in*k + C_out) + embed + classifier.
        let mut want = cfg.n_filters * cfg.filter_len;
        let mut c_in = cfg.n_filters;
        for &c_out in &cfg.channels {
            want += c_in * cfg.decimation + c_in + c_out * c_in + c_out;
            c_in = c_out;
        }
        for &c_out in &cfg.tdnn_channels {
            want += c_out * c_in * cfg.tdnn_kernel + c_out;
            c_in = c_out;
        }
        want += cfg.embedding_dim * 2 * c_in + cfg.embedding_dim;
        want += cfg.n_speakers * cfg.embedding_dim + cfg.n_speakers;
        assert_eq!(model.param_count(), want);

        // VD doubles only the front-end parameters.
        let vd_model =
            build_model(cfg.clone(), FrontendChoice::Tdf, true, DropoutChoice::Variational, 0)
                .unwrap();
        assert_eq!(
            vd_model.param_count(),
            want + cfg.n_filters * cfg.filter_len
        );
    }

    #[test]
    fn stats_pooling_is_time_permutation_invariant() {
        // Front-end stub: a raw feature map fed through pooling only.
        let mut r = rng::from_seed(5);
        let h = Tensor::randn(&[4, 50], 1.0, &mut r, false).unwrap();
        let mean = h.row_mean().unwrap();
        let std = h.row_std().unwrap();
        let reversed_data: Vec<f64> = {
            let v = h.data();
            let mut out = Vec::with_capacity(v.len());
            for c in 0..4 {
                out.extend(v[c * 50..(c + 1) * 50].iter().rev());
            }
            out
        };
        let hr = Tensor::constant(&[4, 50], reversed_data).unwrap();
        let mean_r = hr.row_mean().unwrap();
        let std_r = hr.row_std().unwrap();
        for (a, b) in mean.data().iter().zip(mean_r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in std.data().iter().zip(std_r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_full_model_gradients_match_finite_differences() {
        let cfg = EncoderConfig::tiny(3);
        let model =
            build_model(cfg.clone(), FrontendChoice::Tdf, true, DropoutChoice::None, 7).unwrap();
        let mut r = rng::from_seed(8);
        let x: Vec<f64> = (0..cfg.min_input_samples() + 13)
            .map(|_| rng::normal(&mut r))
            .collect();
        let params = model.params();
        let err = finite_diff_check(&params, &move |_| {
            let mut rr = rng::from_seed(0);
            let out = model
                .forward(&x, false, &mut rr)
                .map_err(|e| crate::autodiff::TensorError::InvalidArgument(alloc::format!("{e}")))?;
            out.logits.softmax_cross_entropy(1)
        })
        .unwrap();
        assert!(err < 1e-4, "full tiny model gradient error {err}");
    }

    #[test]
    fn too_short_input_names_minimum() {
        let cfg = EncoderConfig::toy(4);
        let model = build_model(cfg, FrontendChoice::Tdf, false, DropoutChoice::None, 0).unwrap();
        let min = model.cfg.min_input_samples();
        let x = Waveform::new(vec![0.1; min - 1], 16_000).unwrap();
        match model.extract_embedding(&x) {
            Err(ModelError::InvalidArgument(msg)) => {
                assert!(msg.contains(&format!("{min}")), "{msg}");
            }
            other => panic!("expected invalid-argument, got {other:?}"),
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let cfg = EncoderConfig::tiny(3);
        let model = build_model(cfg, FrontendChoice::Tdf, true, DropoutChoice::None, 3).unwrap();
        let mut r = rng::from_seed(4);
        let x = Waveform::new(
            (0..model.cfg.min_input_samples() + 20)
                .map(|_| rng::normal(&mut r))
                .collect(),
            16_000,
        )
        .unwrap();
        let a = model.extract_embedding(&x).unwrap();
        let b = model.extract_embedding(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), model.cfg.embedding_dim);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let cfg = EncoderConfig::tiny(2);
        let mut model =
            build_model(cfg, FrontendChoice::Tdf, false, DropoutChoice::None, 1).unwrap();
        let before: Vec<Vec<f64>> = model.params().iter().map(|p| p.data()).collect();
        let data = vec![TrainItem {
            samples: vec![0.1; model.cfg.min_input_samples() + 10],
            label: 0,
        }];
        let history = train(
            &mut model,
            &data,
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(history.is_empty());
        let after: Vec<Vec<f64>> = model.params().iter().map(|p| p.data()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = EncoderConfig::tiny(2);
        let mut model =
            build_model(cfg, FrontendChoice::Tdf, false, DropoutChoice::None, 1).unwrap();
        assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn composite_gradient_suite_passes() {
        for check in composite_gradient_suite(2025) {
            assert!(
                check.passed(),
                "{}: max relative error {}",
                check.name,
                check.max_rel_err
            );
        }
    }

    #[test]
    fn state_roundtrip_is_bit_exact() {
        let cfg = EncoderConfig::tiny(3);
        let model =
            build_model(cfg, FrontendChoice::Tdf, true, DropoutChoice::Variational, 9).unwrap();
        let state = model.state();
        let restored = Model::from_state(&state).unwrap();
        for ((na, ta), (nb, tb)) in model
            .named_params()
            .iter()
            .zip(restored.named_params().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }
}
