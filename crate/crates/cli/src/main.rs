//! Command-line driver for the raw-waveform speaker verification pipeline:
//! corpus generation, training, embedding extraction, scoring, metric
//! reports, filter-response export and the gradient-check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavespk::config::{Backend, ConfigFile, SystemConfig, DEFAULT_BD_P, DEFAULT_GD_ALPHA};
use wavespk::embeddings::{write_embeddings, EmbeddingRecord};
use wavespk::report::{evaluate, render_csv, write_csv, write_det_points, ReportParams};
use wavespk::trials::{join_score_set, read_scores, read_trials, write_scores, ScoredTrial};
use wavespk::{checkpoint, corpus, embeddings, responses, CliError};
use wavespk_core::filterbank::{FilterBank, FilterMode};
use wavespk_core::model::{
    self, build_model, composite_gradient_suite, DropoutChoice, EncoderConfig, FrontendChoice,
    TrainConfig, TrainItem,
};
use wavespk_core::scoring::{cosine_score, plda_fit, EmbeddingTransform};
use wavespk_core::synth::{Condition, ProtocolConfig};

#[derive(Parser)]
#[command(
    name = "wavespk",
    version,
    about = "Raw-waveform speaker verification: synthetic corpora, trainable front-ends, scoring and metrics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus (WAVs, manifest, trial list).
    GenCorpus(GenCorpusArgs),
    /// Train a speaker-classification model on a corpus.
    Train(TrainArgs),
    /// Extract embeddings for one corpus split.
    Extract(ExtractArgs),
    /// Score a trial list from embeddings.
    Score(ScoreArgs),
    /// Compute EER / min-DCF / bootstrap CI and emit the comparison CSV.
    Report(ReportArgs),
    /// Export filter magnitude responses as CSV.
    ExportFilters(ExportFiltersArgs),
    /// Run the finite-difference gradient suite over every op and composite.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output corpus directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Optional key=value config file (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts_per_speaker: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Utterance duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// SNR (dB) of the noisy training-augmentation copies.
    #[arg(long)]
    train_aug_snr: Option<f64>,
    /// SNR (dB) of the mismatched evaluation condition.
    #[arg(long)]
    eval_snr: Option<f64>,
    /// RT60 (seconds) of the mismatched evaluation condition.
    #[arg(long)]
    eval_rt60: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory produced by gen-corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value config file (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Front-end: mel | tdf | sinc.
    #[arg(long)]
    front_end: Option<String>,
    /// Constrain filters to analytic pairs via the Hilbert transform.
    #[arg(long)]
    analytic: bool,
    /// Dropout on the non-parametric filters: none | bd | gd | vd.
    #[arg(long)]
    dropout: Option<String>,
    /// Bernoulli drop probability (with --dropout bd).
    #[arg(long)]
    bd_p: Option<f64>,
    /// Gaussian noise variance (with --dropout gd).
    #[arg(long)]
    gd_alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// KL scale for variational dropout (default: 1 / training-set size).
    #[arg(long)]
    kl_weight: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus split: train | eval-matched | eval-mismatched.
    #[arg(long)]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Embeddings of the evaluation utterances.
    #[arg(long)]
    embeddings: PathBuf,
    /// Trial list to score.
    #[arg(long)]
    trials: PathBuf,
    /// Backend: cosine | plda.
    #[arg(long)]
    backend: Option<String>,
    /// Optional key=value config file (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled training embeddings (required for the PLDA backend).
    #[arg(long)]
    train_embeddings: Option<PathBuf>,
    /// LDA output dimension (default min(speakers - 1, dim / 2)).
    #[arg(long)]
    lda_dim: Option<usize>,
    /// PLDA latent (speaker factor) dimension, default = LDA dimension.
    #[arg(long)]
    plda_latent: Option<usize>,
    /// EM iterations for PLDA fitting.
    #[arg(long, default_value_t = 15)]
    plda_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Repeatable system spec NAME:SCORES:TRIALS[:CONDITION[:BACKEND]].
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    /// Metrics CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// DET points CSV (single --system only).
    #[arg(long)]
    det_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 0.01)]
    p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportFiltersArgs {
    /// Export from a trained checkpoint (VD filters are pruned first).
    #[arg(long, conflicts_with = "init")]
    model: Option<PathBuf>,
    /// Export an untrained initialization instead: gabor | sinc.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value_t = 30)]
    filters: usize,
    #[arg(long, default_value_t = 400)]
    filter_len: usize,
    /// Treat the bank as analytic pairs when exporting an initialization.
    #[arg(long)]
    analytic: bool,
    /// Response grid size (columns are n_fft/2 + 1 frequencies).
    #[arg(long, default_value_t = 512)]
    n_fft: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 20240817)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; everything else is usage.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.cmd {
        Cmd::GenCorpus(args) => cmd_gen_corpus(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Extract(args) => cmd_extract(args),
        Cmd::Score(args) => cmd_score(args),
        Cmd::Report(args) => cmd_report(args),
        Cmd::ExportFilters(args) => cmd_export_filters(args),
        Cmd::GradCheck(args) => cmd_grad_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

/// flag > config file > default.
fn resolve<T: Clone + std::str::FromStr>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(file.get_parsed::<T>(key)?.unwrap_or(default))
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let cfg = ProtocolConfig {
        n_speakers: resolve(args.speakers, &file, "speakers", 20)?,
        utts_per_speaker: resolve(args.utts_per_speaker, &file, "utts_per_speaker", 10)?,
        train_fraction: resolve(args.train_fraction, &file, "train_fraction", 0.5)?,
        duration_s: resolve(args.duration, &file, "duration", 1.0)?,
        train_aug: Condition::noisy(resolve(args.train_aug_snr, &file, "train_aug_snr", 10.0)?)
            .map_err(CliError::usage)?,
        eval_mismatch: Condition::noisy_reverberant(
            resolve(args.eval_snr, &file, "eval_snr", 5.0)?,
            resolve(args.eval_rt60, &file, "eval_rt60", 0.4)?,
        )
        .map_err(CliError::usage)?,
        seed: resolve(args.seed, &file, "seed", 1)?,
    };
    let protocol = corpus::generate_corpus(&cfg, &args.out_dir)?;
    println!(
        "corpus: {} train utterances, {} eval utterances per condition, {} trials -> {}",
        protocol.train.len(),
        protocol.eval_matched.len(),
        protocol.trials.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn parse_frontend(s: &str) -> Result<FrontendChoice, CliError> {
    match s {
        "mel" => Ok(FrontendChoice::Mel),
        "tdf" => Ok(FrontendChoice::Tdf),
        "sinc" => Ok(FrontendChoice::Sinc),
        other => Err(CliError::Usage(format!(
            "unknown front end '{other}' (expected mel, tdf or sinc)"
        ))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let front_end = parse_frontend(&resolve(
        args.front_end.clone(),
        &file,
        "front_end",
        String::from("tdf"),
    )?)?;
    let analytic = args.analytic || file.get("analytic") == Some("true");
    let dropout_tag = resolve(args.dropout.clone(), &file, "dropout", String::from("none"))?;
    let dropout = match dropout_tag.as_str() {
        "none" => DropoutChoice::None,
        "bd" => DropoutChoice::Bernoulli(resolve(args.bd_p, &file, "bd_p", DEFAULT_BD_P)?),
        "gd" => DropoutChoice::Gaussian(resolve(args.gd_alpha, &file, "gd_alpha", DEFAULT_GD_ALPHA)?),
        "vd" => DropoutChoice::Variational,
        other => {
            return Err(CliError::Usage(format!(
                "unknown dropout '{other}' (expected none, bd, gd or vd)"
            )))
        }
    };
    let system = SystemConfig {
        front_end,
        analytic,
        dropout,
    };
    system.validate()?;

    let seed = resolve(args.seed, &file, "seed", 0)?;
    let train_cfg = TrainConfig {
        epochs: resolve(args.epochs, &file, "epochs", 30)?,
        batch_size: resolve(args.batch_size, &file, "batch_size", 8)?,
        lr: resolve(args.lr, &file, "lr", 1e-3)?,
        kl_weight: match args.kl_weight {
            Some(v) => Some(v),
            None => file.get_parsed::<f64>("kl_weight")?,
        },
        kl_warmup_frac: 0.3,
        seed,
    };

    let items = corpus::load_split(&args.corpus, corpus::SPLIT_TRAIN)?;
    let labels = corpus::speaker_labels(
        &items.iter().map(|(e, _)| e.clone()).collect::<Vec<_>>(),
    );
    let data: Vec<TrainItem> = items
        .iter()
        .map(|(e, w)| TrainItem {
            samples: w.samples.clone(),
            label: labels[&e.speaker_id],
        })
        .collect();

    let mut model = build_model(
        EncoderConfig::toy(labels.len()),
        front_end,
        analytic,
        dropout,
        seed,
    )
    .map_err(CliError::usage)?;
    let history = model::train(&mut model, &data, &train_cfg).map_err(|e| match e {
        model::ModelError::Numeric(msg) => CliError::Numeric(msg),
        model::ModelError::InvalidArgument(msg) => CliError::Data(msg),
    })?;
    checkpoint::save_model(&args.out, &model)?;

    let mut hist_csv = String::from("epoch,mean_loss,accuracy,kl,sparsity\n");
    for h in &history {
        hist_csv.push_str(&format!(
            "{},{:.6},{:.4},{:.6},{:.4}\n",
            h.epoch, h.mean_loss, h.accuracy, h.kl, h.sparsity
        ));
    }
    let hist_path = args.out.with_extension("history.csv");
    std::fs::write(&hist_path, hist_csv)
        .map_err(|e| CliError::Data(format!("{}: {e}", hist_path.display())))?;
    if let Some(last) = history.last() {
        println!(
            "trained {} ({} params) for {} epochs: loss {:.4}, accuracy {:.3}, sparsity {:.3}",
            system.system_name(),
            model.param_count(),
            history.len(),
            last.mean_loss,
            last.accuracy,
            last.sparsity,
        );
    }
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CliError> {
    let model = checkpoint::load_model(&args.model)?;
    let items = corpus::load_split(&args.corpus, &args.split)?;
    let mut records = Vec::with_capacity(items.len());
    for (entry, wave) in &items {
        let vector = model.extract_embedding(wave).map_err(|e| match e {
            model::ModelError::Numeric(msg) => CliError::Numeric(msg),
            model::ModelError::InvalidArgument(msg) => CliError::Data(msg),
        })?;
        records.push(EmbeddingRecord {
            utt_id: entry.utt_id.clone(),
            speaker_id: entry.speaker_id.clone(),
            vector,
        });
    }
    write_embeddings(&args.out, &records)?;
    println!(
        "extracted {} embeddings from split '{}' -> {}",
        records.len(),
        args.split,
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let backend = Backend::parse(&resolve(
        args.backend.clone(),
        &file,
        "backend",
        String::from("cosine"),
    )?)?;
    let eval = embeddings::read_embeddings(&args.embeddings)?;
    let trials = read_trials(&args.trials)?;
    let by_id: std::collections::HashMap<&str, &[f64]> = eval
        .iter()
        .map(|r| (r.utt_id.as_str(), r.vector.as_slice()))
        .collect();
    let lookup = |id: &str| -> Result<&[f64], CliError> {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| CliError::Data(format!("trial references unknown utterance '{id}'")))
    };

    let scored: Vec<ScoredTrial> = match backend {
        Backend::Cosine => trials
            .iter()
            .map(|t| {
                Ok(ScoredTrial {
                    enroll: t.enroll.clone(),
                    test: t.test.clone(),
                    score: cosine_score(lookup(&t.enroll)?, lookup(&t.test)?)
                        .map_err(CliError::numeric)?,
                })
            })
            .collect::<Result<_, CliError>>()?,
        Backend::Plda => {
            let train_path = args.train_embeddings.as_ref().ok_or_else(|| {
                CliError::Usage(String::from(
                    "--backend plda requires --train-embeddings (labeled training vectors)",
                ))
            })?;
            let train = embeddings::read_embeddings(train_path)?;
            let mut speaker_ids: Vec<&str> =
                train.iter().map(|r| r.speaker_id.as_str()).collect();
            speaker_ids.sort_unstable();
            speaker_ids.dedup();
            if speaker_ids.len() < 3 {
                return Err(CliError::Data(format!(
                    "PLDA backend needs at least 3 training speakers (found {}): \
                     the LDA projection would collapse to one dimension",
                    speaker_ids.len()
                )));
            }
            let label_of: std::collections::HashMap<&str, usize> = speaker_ids
                .iter()
                .enumerate()
                .map(|(i, &s)| (s, i))
                .collect();
            let vectors: Vec<Vec<f64>> = train.iter().map(|r| r.vector.clone()).collect();
            let labels: Vec<usize> = train
                .iter()
                .map(|r| label_of[r.speaker_id.as_str()])
                .collect();
            let dim = vectors[0].len();
            let lda_dim = args
                .lda_dim
                .unwrap_or_else(|| (speaker_ids.len() - 1).min(dim / 2).max(1));
            let transform = EmbeddingTransform::fit(&vectors, &labels, lda_dim)
                .map_err(CliError::numeric)?;
            let preprocessed: Vec<Vec<f64>> = vectors
                .iter()
                .map(|v| transform.preprocess(v))
                .collect::<Result<_, _>>()
                .map_err(CliError::numeric)?;
            let latent = args.plda_latent.unwrap_or(lda_dim).min(lda_dim);
            let plda = plda_fit(&preprocessed, &labels, latent, args.plda_iters)
                .map_err(CliError::numeric)?;
            for w in &plda.warnings {
                eprintln!("plda: {w}");
            }
            let mut cache: std::collections::HashMap<&str, Vec<f64>> =
                std::collections::HashMap::new();
            for t in &trials {
                for id in [t.enroll.as_str(), t.test.as_str()] {
                    if !cache.contains_key(id) {
                        let raw = lookup(id)?;
                        cache.insert(
                            id,
                            transform.preprocess(raw).map_err(CliError::numeric)?,
                        );
                    }
                }
            }
            trials
                .iter()
                .map(|t| {
                    Ok(ScoredTrial {
                        enroll: t.enroll.clone(),
                        test: t.test.clone(),
                        score: plda
                            .score(&cache[t.enroll.as_str()], &cache[t.test.as_str()])
                            .map_err(CliError::numeric)?,
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
    };
    write_scores(&args.out, &scored)?;
    println!(
        "scored {} trials with {} -> {}",
        scored.len(),
        backend.name(),
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let params = ReportParams {
        p_target: args.p_target,
        c_miss: args.c_miss,
        c_fa: args.c_fa,
        n_boot: args.n_boot,
        confidence: args.confidence,
        seed: args.seed,
    };
    let mut rows = Vec::new();
    let mut first_set = None;
    for spec in &args.systems {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() < 3 || parts.len() > 5 {
            return Err(CliError::Usage(format!(
                "--system expects NAME:SCORES:TRIALS[:CONDITION[:BACKEND]], got '{spec}'"
            )));
        }
        let (name, scores_path, trials_path) = (parts[0], parts[1], parts[2]);
        let condition = parts.get(3).copied().unwrap_or("eval");
        let backend = parts.get(4).copied().unwrap_or("cosine");
        let trials = read_trials(Path::new(trials_path))?;
        let scores = read_scores(Path::new(scores_path))?;
        let set = join_score_set(&trials, &scores)?;
        rows.push(evaluate(name, condition, backend, &set, &params)?);
        if first_set.is_none() {
            first_set = Some(set);
        }
    }
    print!("{}", render_csv(&rows));
    if let Some(out) = &args.out {
        write_csv(out, &rows)?;
    }
    if let Some(det) = &args.det_out {
        if args.systems.len() != 1 {
            return Err(CliError::Usage(String::from(
                "--det-out requires exactly one --system",
            )));
        }
        write_det_points(det, &first_set.expect("one system parsed"))?;
    }
    Ok(())
}

fn cmd_export_filters(args: ExportFiltersArgs) -> Result<(), CliError> {
    let bank: FilterBank = if let Some(model_path) = &args.model {
        let model = checkpoint::load_model(model_path)?;
        model
            .inference_bank()
            .map_err(CliError::numeric)?
            .ok_or_else(|| {
                CliError::Usage(String::from(
                    "the mel front-end has no learnable filters to export",
                ))
            })?
    } else {
        let mode = if args.analytic {
            FilterMode::Analytic
        } else {
            FilterMode::Real
        };
        match args.init.as_deref() {
            Some("gabor") => FilterBank::gabor_init(args.filters, args.filter_len, 16_000)
                .map_err(CliError::usage)?
                .with_mode(mode),
            Some("sinc") => FilterBank::sinc_init(args.filters, args.filter_len, 16_000)
                .map_err(CliError::usage)?
                .with_mode(mode),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown initialization '{other}' (expected gabor or sinc)"
                )))
            }
            None => {
                return Err(CliError::Usage(String::from(
                    "export-filters needs either --model or --init",
                )))
            }
        }
    };
    responses::export_filter_responses(&bank, args.n_fft, &args.out)?;
    println!(
        "exported {} filter responses -> {}",
        bank.n_filters,
        args.out.display()
    );
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<(), CliError> {
    let mut all = wavespk_core::autodiff::op_gradient_suite(args.seed);
    all.extend(composite_gradient_suite(args.seed));
    let mut failed = false;
    for check in &all {
        let status = if check.passed() { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} max_rel_err {:.3e}", check.name, check.max_rel_err);
        failed |= !check.passed();
    }
    if failed {
        return Err(CliError::Numeric(String::from(
            "gradient check exceeded 1e-4 relative error",
        )));
    }
    println!("all {} gradient checks passed", all.len());
    Ok(())
}
