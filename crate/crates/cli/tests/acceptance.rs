//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `--nocapture` to see them). Criteria 1-6 and 8 exercise the
//! library directly; criterion 7 trains the end-to-end systems; criterion 9
//! drives the compiled binary twice and compares artifacts byte for byte.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use wavespk::corpus;
use wavespk::responses::{export_filter_responses, read_filter_responses};
use wavespk_core::autodiff::{op_gradient_suite, Tensor};
use wavespk_core::dsp::{self, Waveform};
use wavespk_core::filterbank::{frontend_forward, FilterBank, FilterMode};
use wavespk_core::metrics::{eer, min_dcf, ScoreSet};
use wavespk_core::model::{
    build_model, composite_gradient_suite, train, DropoutChoice, EncoderConfig, FrontendChoice,
    TrainConfig, TrainItem,
};
use wavespk_core::rng;
use wavespk_core::scoring::{cosine_score, linalg::Mat, plda_fit};
use wavespk_core::synth::{self, Condition, ProtocolConfig};
use wavespk_core::vd::PRUNE_THRESHOLD;

fn report(criterion: &str, started: Instant, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Negative-frequency magnitude of the analytic extension, relative to the
/// spectral peak, at the native DFT length.
fn negative_frequency_ratio(filter: &[f64]) -> f64 {
    let im = dsp::hilbert(filter).expect("length >= 2");
    let analytic: Vec<wavespk_core::num_complex::Complex64> = filter
        .iter()
        .zip(&im)
        .map(|(&re, &imv)| wavespk_core::num_complex::Complex64::new(re, imv))
        .collect();
    let spec = dsp::fft(&analytic).expect("non-empty");
    let n = spec.len();
    let peak = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let worst_neg = spec[n / 2 + 1..]
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if peak == 0.0 { 0.0 } else { worst_neg / peak }
}

/// Plain-data snapshot of a trained variational-dropout front-end (tensors
/// are not Sync, so the shared fixture stores buffers instead of the model).
struct VdFixture {
    /// Trained real filter weights (pre-pruning), row-major 30 x 400.
    theta: Vec<f64>,
    /// Keep-mask at the standard prune threshold.
    mask: Vec<bool>,
    sparsity: f64,
    /// Inference bank with pruned weights, analytic mode.
    pruned_bank: FilterBank,
}

/// Shared fixture: a small tdf+H+VD model trained on a noisy-augmented
/// corpus long enough (and with a strong enough KL scale) for real pruning
/// to kick in. Used by criteria 1 and 8.
fn trained_vd_fixture() -> &'static VdFixture {
    static FIXTURE: OnceLock<VdFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let proto = synth::build_protocol(&ProtocolConfig {
            n_speakers: 8,
            utts_per_speaker: 2,
            train_fraction: 0.5,
            duration_s: 0.5,
            train_aug: Condition::noisy(8.0).expect("finite snr"),
            eval_mismatch: Condition::noisy_reverberant(5.0, 0.3).expect("valid"),
            seed: 404,
        })
        .expect("protocol");
        let data: Vec<TrainItem> = proto
            .train
            .iter()
            .map(|spec| {
                let wave = synth::realize(spec, &proto.speakers).expect("synthesis");
                let label = proto
                    .train_speaker_idx
                    .iter()
                    .position(|&s| s == spec.speaker_idx)
                    .expect("train speaker");
                TrainItem {
                    samples: wave.samples,
                    label,
                }
            })
            .collect();
        let mut model = build_model(
            EncoderConfig::toy(proto.train_speaker_idx.len()),
            FrontendChoice::Tdf,
            true,
            DropoutChoice::Variational,
            404,
        )
        .expect("model builds");
        train(
            &mut model,
            &data,
            &TrainConfig {
                epochs: 80,
                batch_size: 2,
                lr: 0.02,
                kl_weight: Some(0.05),
                kl_warmup_frac: 0.3,
                seed: 404,
            },
        )
        .expect("fixture training");
        let layer = model.vd_layer().expect("vd layer");
        VdFixture {
            theta: layer.theta.data(),
            mask: layer.prune_mask(PRUNE_THRESHOLD),
            sparsity: layer.sparsity(PRUNE_THRESHOLD),
            pruned_bank: model
                .inference_bank()
                .expect("bank")
                .expect("learnable front end"),
        }
    })
}

#[test]
fn criterion_1_analyticity() {
    let fixture = trained_vd_fixture();
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut r = rng::from_seed(11);
    for _ in 0..100 {
        let filter: Vec<f64> = (0..400).map(|_| rng::normal(&mut r)).collect();
        worst = worst.max(negative_frequency_ratio(&filter));
    }
    let gabor = FilterBank::gabor_init(30, 400, 16_000).expect("bank");
    for i in 0..30 {
        worst = worst.max(negative_frequency_ratio(gabor.filter(i)));
    }
    for row in fixture.theta.chunks(400) {
        worst = worst.max(negative_frequency_ratio(row));
    }
    report(
        "1 (analyticity)",
        t0,
        worst < 1e-9,
        &format!("worst negative-frequency ratio {worst:.3e} over 160 filters"),
    );
}

#[test]
fn criterion_2_shift_invariance() {
    let t0 = Instant::now();
    let analytic = FilterBank::gabor_init(30, 400, 16_000)
        .expect("bank")
        .with_mode(FilterMode::Analytic)
        .with_stride(1);
    let real = analytic.clone().with_mode(FilterMode::Real);
    let mut worst_analytic = 0.0f64;
    let mut best_real = 0.0f64;
    for freq in [1000.0, 2520.0] {
        let master: Vec<f64> = (0..2000)
            .map(|t| (2.0 * std::f64::consts::PI * freq * t as f64 / 16_000.0).cos())
            .collect();
        let window = 1200;
        let base = Waveform::new(master[32..32 + window].to_vec(), 16_000).expect("wave");
        let wg0 = frontend_forward(&base, &analytic).expect("forward");
        let wg0_real = frontend_forward(&base, &real).expect("forward");
        for s in 1..=20usize {
            let shifted =
                Waveform::new(master[32 - s..32 - s + window].to_vec(), 16_000).expect("wave");
            let wg = frontend_forward(&shifted, &analytic).expect("forward");
            for (a, b) in wg0.features.iter().zip(&wg.features) {
                worst_analytic = worst_analytic.max((a - b).abs());
            }
            let wg_real = frontend_forward(&shifted, &real).expect("forward");
            for (a, b) in wg0_real.features.iter().zip(&wg_real.features) {
                best_real = best_real.max((a - b).abs());
            }
        }
    }
    report(
        "2 (shift invariance)",
        t0,
        worst_analytic < 1e-6 && best_real > 1e-3,
        &format!("analytic max diff {worst_analytic:.3e}, real max diff {best_real:.3e}"),
    );
}

#[test]
fn criterion_3_gradient_suite() {
    let t0 = Instant::now();
    let mut checks = op_gradient_suite(20240817);
    checks.extend(composite_gradient_suite(20240817));
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        .expect("non-empty suite")
        .clone();
    report(
        "3 (gradient suite)",
        t0,
        checks.iter().all(|c| c.passed()),
        &format!(
            "{} checks, worst {} at {:.3e}",
            checks.len(),
            worst.name,
            worst.max_rel_err
        ),
    );
}

#[test]
fn criterion_4_vd_sparsification() {
    let t0 = Instant::now();
    let (n_features, n_relevant, n_train, n_test) = (20usize, 5usize, 512usize, 256usize);
    let mut r = rng::from_seed(2024);
    let mut true_w = vec![0.0; n_features];
    for w in true_w.iter_mut().take(n_relevant) {
        *w = 2.0 + rng::uniform(&mut r) * 2.0;
        if rng::uniform(&mut r) < 0.5 {
            *w = -*w;
        }
    }
    let sample = |n: usize, rr: &mut rng::Rng| {
        let mut x = Vec::with_capacity(n * n_features);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..n_features).map(|_| rng::normal(rr)).collect();
            let clean: f64 = row.iter().zip(&true_w).map(|(a, b)| a * b).sum();
            y.push(clean + 0.1 * rng::normal(rr));
            x.extend(row);
        }
        (x, y)
    };
    let (x_train, y_train) = sample(n_train, &mut r);
    let (x_test, y_test) = sample(n_test, &mut r);

    let mut init_rng = rng::from_seed(7);
    let theta0: Vec<f64> = (0..n_features)
        .map(|_| 0.3 * rng::normal(&mut init_rng))
        .collect();
    let layer = wavespk_core::vd::VdLayer::new(&[n_features], theta0, -8.0).expect("layer");
    let params = [layer.theta.clone(), layer.log_sigma2.clone()];
    let mut opt = wavespk_core::autodiff::Adam::new(0.02, &params);
    let mut noise_rng = rng::from_seed(99);
    let x_t = Tensor::constant(&[n_train, n_features], x_train).expect("tensor");
    let y_t = Tensor::constant(&[n_train, 1], y_train).expect("tensor");
    let steps = 4000;
    for step in 0..steps {
        for t in &params {
            t.zero_grad();
        }
        let w = layer.noisy_weights_graph(&mut noise_rng).expect("graph");
        let pred = x_t
            .matmul(&w.reshape(&[n_features, 1]).expect("reshape"))
            .expect("matmul");
        let mse = pred
            .sub(&y_t)
            .expect("sub")
            .square()
            .sum_all()
            .mul_scalar(1.0 / n_train as f64);
        let ramp = (step as f64 / (0.3 * steps as f64)).min(1.0);
        let loss = mse
            .add(&layer.kl_graph().expect("kl").mul_scalar(ramp))
            .expect("add");
        wavespk_core::autodiff::backward(&loss).expect("backward");
        opt.step(&params);
    }
    let la = layer.log_alpha();
    let pruned_irrelevant = (n_relevant..n_features)
        .filter(|&i| la[i] > PRUNE_THRESHOLD)
        .count();
    let mse_of = |w: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n_test {
            let pred: f64 = x_test[i * n_features..(i + 1) * n_features]
                .iter()
                .zip(w)
                .map(|(a, b)| a * b)
                .sum();
            acc += (pred - y_test[i]) * (pred - y_test[i]);
        }
        acc / n_test as f64
    };
    let mse_unpruned = mse_of(&layer.theta.data());
    let mse_pruned = mse_of(&layer.pruned_weights(PRUNE_THRESHOLD));
    let rel = (mse_pruned - mse_unpruned).abs() / mse_unpruned;
    report(
        "4 (vd sparsification)",
        t0,
        pruned_irrelevant as f64 >= 0.9 * (n_features - n_relevant) as f64 && rel < 0.01,
        &format!(
            "{pruned_irrelevant}/{} irrelevant weights pruned, held-out MSE change {:.4}%",
            n_features - n_relevant,
            rel * 100.0
        ),
    );
}

#[test]
fn criterion_5_metrics_oracle() {
    let t0 = Instant::now();
    let mut all_exact = true;
    let mut monotone_ok = true;
    for seed in 0..100u64 {
        let mut r = rng::from_seed(3000 + seed);
        let n = 4 + rng::below(&mut r, 996);
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let target = i < 2 && i == 0 || i >= 2 && rng::uniform(&mut r) < 0.45;
            let mut s = rng::normal(&mut r) + if target { 0.7 } else { 0.0 };
            if rng::uniform(&mut r) < 0.2 {
                s = (s * 4.0).round() / 4.0;
            }
            scores.push(s);
            labels.push(target);
        }
        labels[0] = true;
        labels[1] = false;
        let set = ScoreSet::new(scores.clone(), labels.clone()).expect("score set");
        let got_eer = eer(&set).expect("eer");
        let want_eer = oracle::eer_percent(&scores, &labels);
        all_exact &= got_eer == want_eer;
        let got_dcf = min_dcf(&set, 0.01, 1.0, 1.0).expect("dcf");
        let want_dcf = oracle::min_dcf(&scores, &labels, 0.01, 1.0, 1.0);
        all_exact &= got_dcf == want_dcf;

        // Monotone transform invariance to 1e-12.
        let affine = ScoreSet::new(
            scores.iter().map(|v| 2.5 * v + 1.0).collect(),
            labels.clone(),
        )
        .expect("set");
        let expd = ScoreSet::new(scores.iter().map(|v| (v / 4.0).exp()).collect(), labels)
            .expect("set");
        monotone_ok &= (eer(&affine).expect("eer") - got_eer).abs() < 1e-12;
        monotone_ok &= (eer(&expd).expect("eer") - got_eer).abs() < 1e-12;
    }
    report(
        "5 (metrics oracle)",
        t0,
        all_exact && monotone_ok,
        &format!("100 random sets exact={all_exact}, monotone invariance={monotone_ok}"),
    );
}

#[test]
fn criterion_6_plda_recovery() {
    let t0 = Instant::now();
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
    let chol = sigma_true.cholesky().expect("spd");
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for s in 0..50usize {
        let h: Vec<f64> = (0..q).map(|_| rng::normal(&mut r)).collect();
        let fh = f_true.matvec(&h).expect("matvec");
        for _ in 0..20 {
            let eps: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
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
    let model = plda_fit(&embeddings, &labels, q, 25).expect("fit");
    let total_true = f_true
        .matmul(&f_true.transpose())
        .expect("matmul")
        .add(&sigma_true)
        .expect("add");
    let rel = model
        .total_cov()
        .sub(&total_true)
        .expect("sub")
        .frobenius_norm()
        / total_true.frobenius_norm();
    let monotone = model.loglik.windows(2).all(|w| w[1] >= w[0] - 1e-8);

    // 1-D closed form within 1e-9.
    let mut r1 = rng::from_seed(74);
    let mut e1 = Vec::new();
    let mut l1 = Vec::new();
    for s in 0..30usize {
        let h = rng::normal(&mut r1);
        for _ in 0..6 {
            e1.push(vec![0.8 * h + 0.6 * rng::normal(&mut r1)]);
            l1.push(s);
        }
    }
    let m1 = plda_fit(&e1, &l1, 1, 20).expect("fit");
    let phi = m1.f.at(0, 0) * m1.f.at(0, 0);
    let s2 = m1.sigma.at(0, 0);
    let mu = m1.mu[0];
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut closed_form_ok = true;
    for (e, t) in [(0.7, 0.9), (-1.2, 1.4), (0.0, 0.3)] {
        let (ec, tc) = (e - mu, t - mu);
        let det_same = (phi + s2) * (phi + s2) - phi * phi;
        let quad = ((phi + s2) * ec * ec - 2.0 * phi * ec * tc + (phi + s2) * tc * tc) / det_same;
        let ll_same = -0.5 * (2.0 * ln_2pi + det_same.ln() + quad);
        let ll1 = |x: f64| -0.5 * (ln_2pi + (phi + s2).ln() + x * x / (phi + s2));
        let want = ll_same - (ll1(ec) + ll1(tc));
        let got = m1.score(&[e], &[t]).expect("score");
        closed_form_ok &= (got - want).abs() < 1e-9;
    }
    report(
        "6 (plda recovery)",
        t0,
        rel < 0.10 && monotone && closed_form_ok,
        &format!(
            "total-cov error {:.1}%, EM monotone={monotone}, 1-D closed form={closed_form_ok}",
            rel * 100.0
        ),
    );
}

/// One end-to-end run: train a system, extract matched/mismatched
/// embeddings, score with cosine, return (matched EER, mismatched EER).
fn end_to_end_eer(
    system: (FrontendChoice, bool, DropoutChoice),
    kl_weight: Option<f64>,
    seed: u64,
) -> Result<(f64, f64), String> {
    let proto = synth::build_protocol(&ProtocolConfig {
        n_speakers: 20,
        utts_per_speaker: 5,
        train_fraction: 0.5,
        duration_s: 1.0,
        train_aug: Condition::noisy(10.0).map_err(|e| e.to_string())?,
        eval_mismatch: Condition::noisy_reverberant(5.0, 0.4).map_err(|e| e.to_string())?,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let data: Vec<TrainItem> = proto
        .train
        .iter()
        .map(|spec| {
            let wave = synth::realize(spec, &proto.speakers).expect("synthesis");
            let label = proto
                .train_speaker_idx
                .iter()
                .position(|&s| s == spec.speaker_idx)
                .expect("train speaker");
            TrainItem {
                samples: wave.samples,
                label,
            }
        })
        .collect();
    let mut model = build_model(
        EncoderConfig::toy(proto.train_speaker_idx.len()),
        system.0,
        system.1,
        system.2,
        seed,
    )
    .map_err(|e| e.to_string())?;
    train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            kl_weight,
            kl_warmup_frac: 0.3,
            seed,
        },
    )
    .map_err(|e| e.to_string())?;

    let mut eers = Vec::new();
    for split in [&proto.eval_matched, &proto.eval_mismatched] {
        let mut by_id = std::collections::HashMap::new();
        for spec in split.iter() {
            let wave = synth::realize(spec, &proto.speakers).expect("synthesis");
            let emb = model.extract_embedding(&wave).map_err(|e| e.to_string())?;
            by_id.insert(spec.utt_id.clone(), emb);
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for t in &proto.trials {
            scores.push(
                cosine_score(&by_id[&t.enroll], &by_id[&t.test]).map_err(|e| e.to_string())?,
            );
            labels.push(t.target);
        }
        let set = ScoreSet::new(scores, labels).map_err(|e| e.to_string())?;
        eers.push(eer(&set).map_err(|e| e.to_string())?);
    }
    Ok((eers[0], eers[1]))
}

#[test]
fn criterion_7_end_to_end_phenomenon() {
    let t0 = Instant::now();
    let seeds = [11u64, 22, 33];
    // Two worker threads (one per system) to use both cores.
    let tdf_handle = std::thread::spawn(move || {
        seeds
            .iter()
            .map(|&s| end_to_end_eer((FrontendChoice::Tdf, false, DropoutChoice::None), None, s))
            .collect::<Result<Vec<_>, _>>()
    });
    let vd_handle = std::thread::spawn(move || {
        seeds
            .iter()
            .map(|&s| {
                // KL scale chosen so variational dropout prunes in the 30
                // epochs available at desk scale.
                end_to_end_eer(
                    (FrontendChoice::Tdf, true, DropoutChoice::Variational),
                    Some(0.05),
                    s,
                )
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let tdf = tdf_handle.join().expect("tdf thread").expect("tdf runs");
    let vd = vd_handle.join().expect("vd thread").expect("vd runs");

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let tdf_matched = mean(&tdf.iter().map(|e| e.0).collect::<Vec<_>>());
    let tdf_mismatched = mean(&tdf.iter().map(|e| e.1).collect::<Vec<_>>());
    let vd_mismatched = mean(&vd.iter().map(|e| e.1).collect::<Vec<_>>());

    let pass = tdf_matched < 15.0
        && tdf_mismatched >= tdf_matched
        && vd_mismatched <= tdf_mismatched + 1.0;
    report(
        "7 (end-to-end phenomenon)",
        t0,
        pass,
        &format!(
            "tdf matched {tdf_matched:.2}% / mismatched {tdf_mismatched:.2}%, \
             tdf+H+VD mismatched {vd_mismatched:.2}% (3 seeds)"
        ),
    );
}

#[test]
fn criterion_8_filter_response_export() {
    let fixture = trained_vd_fixture();
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join("wavespk-acceptance-c8");
    std::fs::create_dir_all(&dir).expect("temp dir");

    // Gabor initialization: 30 monotone nondecreasing peaks within 2% of
    // the mel centers.
    let gabor = FilterBank::gabor_init(30, 400, 16_000).expect("bank");
    let gabor_csv = dir.join("gabor.csv");
    export_filter_responses(&gabor, 512, &gabor_csv).expect("export");
    let rows = read_filter_responses(&gabor_csv).expect("parse");
    let centers = dsp::mel_center_frequencies(30, 0.0, 8000.0).expect("centers");
    let mut monotone = rows.len() == 30;
    let mut within_two_percent = true;
    let mut prev = -1.0;
    for (row, &center) in rows.iter().zip(&centers) {
        monotone &= row.peak_hz >= prev;
        prev = row.peak_hz;
        within_two_percent &= (row.peak_hz - center).abs() / center < 0.02;
    }

    // Trained-with-VD export: pruned weights are exact zeros, and fully
    // pruned filters export all-zero response rows.
    let mask = &fixture.mask;
    let sparsity = fixture.sparsity;
    let bank = &fixture.pruned_bank;
    let mut exact_zeros = sparsity > 0.0;
    for (w, keep) in bank.weights.iter().zip(mask) {
        if !keep {
            exact_zeros &= *w == 0.0;
        }
    }
    let fully_pruned: Vec<usize> = (0..30)
        .filter(|&f| mask[f * 400..(f + 1) * 400].iter().all(|&k| !k))
        .collect();
    let vd_csv = dir.join("vd.csv");
    export_filter_responses(bank, 512, &vd_csv).expect("export");
    let vd_rows = read_filter_responses(&vd_csv).expect("parse");
    // Substantial pruning must have happened (the noise "jitters" are
    // dropped), with exact zeros behind the exported responses; any filter
    // that pruned entirely exports an all-zero row.
    let pruned_enough = sparsity > 0.5;
    let mut zero_rows_ok = vd_rows.len() == 30;
    for &f in &fully_pruned {
        zero_rows_ok &= vd_rows[f].peak_hz == 0.0;
        zero_rows_ok &= vd_rows[f].magnitudes.iter().all(|&m| m == 0.0);
    }
    report(
        "8 (filter export)",
        t0,
        monotone && within_two_percent && pruned_enough && exact_zeros && zero_rows_ok,
        &format!(
            "gabor peaks monotone={monotone} within2%={within_two_percent}; trained sparsity \
             {:.1}% ({} fully pruned filters), exact zeros={exact_zeros}, rows ok={zero_rows_ok}",
            sparsity * 100.0,
            fully_pruned.len()
        ),
    );
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wavespk"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "wavespk {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn full_pipeline(root: &Path) -> Result<Vec<u8>, String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let p = |name: &str| root.join(name).display().to_string();
    let corpus_dir = p("corpus");
    run_bin(&[
        "gen-corpus",
        "--out-dir",
        &corpus_dir,
        "--speakers",
        "6",
        "--utts-per-speaker",
        "3",
        "--duration",
        "0.6",
        "--seed",
        "77",
    ])?;
    run_bin(&[
        "train",
        "--corpus",
        &corpus_dir,
        "--out",
        &p("model.ckpt"),
        "--front-end",
        "tdf",
        "--analytic",
        "--epochs",
        "2",
        "--seed",
        "5",
    ])?;
    let trials = format!("{corpus_dir}/trials.tsv");
    for split in [corpus::SPLIT_EVAL_MATCHED, corpus::SPLIT_EVAL_MISMATCHED] {
        run_bin(&[
            "extract",
            "--model",
            &p("model.ckpt"),
            "--corpus",
            &corpus_dir,
            "--split",
            split,
            "--out",
            &p(&format!("{split}.emb")),
        ])?;
        run_bin(&[
            "score",
            "--embeddings",
            &p(&format!("{split}.emb")),
            "--trials",
            &trials,
            "--backend",
            "cosine",
            "--out",
            &p(&format!("{split}.scores")),
        ])?;
    }
    run_bin(&[
        "report",
        "--system",
        &format!("tdf+H:{}:{}:matched:cosine", p("eval-matched.scores"), trials),
        "--system",
        &format!(
            "tdf+H:{}:{}:mismatched:cosine",
            p("eval-mismatched.scores"),
            trials
        ),
        "--n-boot",
        "300",
        "--seed",
        "9",
        "--out",
        &p("metrics.csv"),
    ])?;
    let mut bytes = std::fs::read(root.join("metrics.csv")).map_err(|e| e.to_string())?;
    for extra in [
        "eval-matched.scores",
        "eval-mismatched.scores",
        "eval-matched.emb",
    ] {
        bytes.extend(std::fs::read(root.join(extra)).map_err(|e| e.to_string())?);
    }
    Ok(bytes)
}

#[test]
fn criterion_9_pipeline_determinism() {
    let t0 = Instant::now();
    let base = std::env::temp_dir().join("wavespk-acceptance-c9");
    let _ = std::fs::remove_dir_all(&base);
    let run1 = full_pipeline(&base.join("run1")).expect("pipeline run 1");
    let run2 = full_pipeline(&base.join("run2")).expect("pipeline run 2");
    report(
        "9 (determinism)",
        t0,
        run1 == run2,
        &format!(
            "two full CLI runs produced {} artifact bytes, identical={}",
            run1.len(),
            run1 == run2
        ),
    );
}

/// Brute-force metric oracles, independent of the library implementations.
mod oracle {
    fn points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
        let n_t = labels.iter().filter(|&&t| t).count() as f64;
        let n_n = labels.len() as f64 - n_t;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        let mut pts = vec![(1.0, 0.0)];
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
            pts.push((fa as f64 / n_n, miss as f64 / n_t));
        }
        pts.push((0.0, 1.0));
        pts
    }

    fn gift_wrap(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.partial_cmp(&b.1).unwrap())
        });
        pts.dedup();
        let start = *pts
            .iter()
            .min_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then(a.1.partial_cmp(&b.1).unwrap())
            })
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

    pub fn eer_percent(scores: &[f64], labels: &[bool]) -> f64 {
        let hull = gift_wrap(&points(scores, labels));
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

    pub fn min_dcf(scores: &[f64], labels: &[bool], p_t: f64, c_m: f64, c_f: f64) -> f64 {
        let norm = (c_m * p_t).min(c_f * (1.0 - p_t));
        points(scores, labels)
            .iter()
            .map(|&(pfa, pmiss)| c_m * p_t * pmiss + c_f * (1.0 - p_t) * pfa)
            .fold(f64::INFINITY, f64::min)
            / norm
    }
}
