//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measurements. Run with
//! `cargo test -p paraforge --test acceptance -- --nocapture`.

use std::path::Path;
use std::time::Instant;

use paraforge_core::augment::{random_erase, spec_augment, RandomErasingConfig, SpecAugmentConfig};
use paraforge_core::dsp::{resample, AudioClip, FbankConfig, FeatureMatrix};
use paraforge_core::metrics::{pcc, uar};
use paraforge_core::nnet::{
    cosine_distance_loss, cross_entropy_loss, gap, gsp, BatchNorm2d, BiLstmConfig,
    BiLstmRegressor, Conv2d, Dropout, GapGspPool, Linear, LstmDirection, Mode, ModelCheckpoint,
    OptimizerConfig, OptimizerKind, Relu, ResNetEmbed, ResNetEmbedConfig, TanhLayer,
    Tensor,
};
use paraforge_core::pipeline::{
    extract_embeddings, run_experiment, synth_breath_corpus, synth_mask_corpus, train_breath,
    train_mask, Manifest, PipelineConfig, Plan, PlanSystem, Split, SynthSpec,
};
use paraforge_core::rng::Rng;
use paraforge_core::svm::{
    decision_score, fuse_probabilities, predict_proba, rbf_kernel, smo_train, EmbeddingSet,
    SvmOptions,
};

// ---------------------------------------------------------------------------
// finite-difference oracle
// ---------------------------------------------------------------------------

const FD_H: f64 = 1e-5;

/// Relative error between the analytic and numeric derivative.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < 1e-7 {
        // both effectively zero; report the absolute gap scaled up so a
        // genuine mismatch still trips the threshold
        (a - n).abs() * 1e2
    } else {
        (a - n).abs() / denom
    }
}

fn random_vec(n: usize, rng: &mut Rng, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.normal() * scale).collect()
}

/// Gradient-check a single layer: loss = sum(w . forward(x)), checking both
/// the input gradient and every parameter gradient.
struct LayerCheck {
    name: &'static str,
    worst: f64,
}

#[allow(clippy::too_many_arguments)]
fn check_layer<L>(
    name: &'static str,
    layer: &mut L,
    input_shape: &[usize],
    forward: impl Fn(&mut L, &Tensor<f64>) -> Tensor<f64>,
    backward: impl Fn(&mut L, &Tensor<f64>) -> Tensor<f64>,
    visit: impl Fn(&mut L, &mut dyn FnMut(String, bool, &mut Tensor<f64>)),
    rng: &mut Rng,
) -> LayerCheck {
    let n_in: usize = input_shape.iter().product();
    let x = Tensor::from_vec(input_shape, random_vec(n_in, rng, 0.7)).unwrap();
    let probe = {
        let y = forward(layer, &x);
        random_vec(y.numel(), rng, 1.0)
    };
    let loss_of = |y: &Tensor<f64>, probe: &[f64]| -> f64 {
        y.data().iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
    };

    // analytic pass
    let y = forward(layer, &x);
    let grad_out = Tensor::from_vec(y.shape(), probe.clone()).unwrap();
    visit(layer, &mut |_, trainable, t| {
        if trainable {
            t.zero_grad();
        }
    });
    let dx = backward(layer, &grad_out);

    let mut worst = 0.0f64;

    // input gradient
    {
        let mut x2 = x.clone();
        let analytic = dx.data().to_vec();
        let base = x2.data().to_vec();
        for i in 0..base.len() {
            x2.data_mut()[i] = base[i] + FD_H;
            let up = loss_of(&forward(layer, &x2), &probe);
            x2.data_mut()[i] = base[i] - FD_H;
            let down = loss_of(&forward(layer, &x2), &probe);
            x2.data_mut()[i] = base[i];
            let numeric = (up - down) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }

    // parameter gradients (one fresh analytic pass already ran above)
    let mut analytic: Vec<(String, Vec<f64>, usize)> = Vec::new();
    visit(layer, &mut |pname, trainable, t| {
        if trainable {
            analytic.push((pname, t.grad().unwrap().to_vec(), t.numel()));
        }
    });
    for (pname, grads, n_vals) in &analytic {
        for i in 0..*n_vals {
            let mut base = 0.0;
            visit(layer, &mut |name, _, t| {
                if &name == pname {
                    base = t.data()[i];
                }
            });
            let set = |layer: &mut L, v: f64| {
                visit(layer, &mut |name, _, t| {
                    if &name == pname {
                        t.data_mut()[i] = v;
                    }
                });
            };
            set(layer, base + FD_H);
            let up = loss_of(&forward(layer, &x), &probe);
            set(layer, base - FD_H);
            let down = loss_of(&forward(layer, &x), &probe);
            set(layer, base);
            let numeric = (up - down) / (2.0 * FD_H);
            worst = worst.max(rel_err(grads[i], numeric));
        }
    }
    LayerCheck { name, worst }
}

#[test]
fn a01_gradient_correctness() {
    let started = Instant::now();
    let mut rng = Rng::new(20240);
    let mut results: Vec<LayerCheck> = Vec::new();

    // conv2d, stride 1 and 2
    for (stride, pad) in [(1usize, 1usize), (2, 1)] {
        let mut conv = Conv2d::<f64>::new(2, 3, 3, stride, pad, &mut rng);
        results.push(check_layer(
            if stride == 1 { "conv2d_s1" } else { "conv2d_s2" },
            &mut conv,
            &[2, 2, 6, 8],
            |l, x| l.forward(x).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |l, f| l.visit_state("conv", f),
            &mut rng,
        ));
    }

    // batch norm in train mode (batch statistics path)
    {
        let mut bn = BatchNorm2d::<f64>::new(3);
        results.push(check_layer(
            "batch_norm",
            &mut bn,
            &[2, 3, 4, 5],
            |l, x| l.forward(x, Mode::Train).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |l, f| l.visit_state("bn", f),
            &mut rng,
        ));
    }

    // linear
    {
        let mut lin = Linear::<f64>::new(7, 4, &mut rng);
        results.push(check_layer(
            "linear",
            &mut lin,
            &[3, 7],
            |l, x| l.forward(x).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |l, f| l.visit_state("lin", f),
            &mut rng,
        ));
    }

    // relu (offset input away from the kink)
    {
        let mut relu = Relu::<f64>::new();
        results.push(check_layer(
            "relu",
            &mut relu,
            &[40],
            |l, x| {
                let mut shifted = x.clone();
                shifted.data_mut().iter_mut().for_each(|v| {
                    if v.abs() < 1e-3 {
                        *v += 0.05;
                    }
                });
                l.forward(&shifted).unwrap()
            },
            |l, g| l.backward(g).unwrap(),
            |_, _| {},
            &mut rng,
        ));
    }

    // tanh
    {
        let mut tanh = TanhLayer::<f64>::new();
        results.push(check_layer(
            "tanh",
            &mut tanh,
            &[30],
            |l, x| l.forward(x).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |_, _| {},
            &mut rng,
        ));
    }

    // dropout with rate 0 in train mode
    {
        let mut drop = Dropout::<f64>::new(0.0);
        results.push(check_layer(
            "dropout_off",
            &mut drop,
            &[25],
            |l, x| l.forward(x, Mode::Train, &mut Rng::new(1)).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |_, _| {},
            &mut rng,
        ));
    }

    // LSTM cell/direction over a short sequence
    {
        let mut lstm = LstmDirection::<f64>::new(3, 4, false, &mut rng);
        results.push(check_layer(
            "lstm",
            &mut lstm,
            &[6, 3],
            |l, x| l.forward(x).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |l, f| l.visit_state("lstm", f),
            &mut rng,
        ));
    }

    // GAP and GSP through the pooling layer (means occupy the first C
    // outputs, deviations the rest)
    {
        let mut pool = GapGspPool::<f64>::new();
        results.push(check_layer(
            "gap_gsp",
            &mut pool,
            &[2, 3, 4, 5],
            |l, x| l.forward(x).unwrap(),
            |l, g| l.backward(g).unwrap(),
            |_, _| {},
            &mut rng,
        ));
    }

    // softmax + cross-entropy (input gradient)
    {
        let labels = vec![1usize, 0, 2];
        let mut x = Tensor::from_vec(&[3, 4], random_vec(12, &mut rng, 1.5)).unwrap();
        let (_, analytic) = cross_entropy_loss(&x, &labels).unwrap();
        let mut worst = 0.0f64;
        let base = x.data().to_vec();
        for i in 0..base.len() {
            x.data_mut()[i] = base[i] + FD_H;
            let (up, _) = cross_entropy_loss(&x, &labels).unwrap();
            x.data_mut()[i] = base[i] - FD_H;
            let (down, _) = cross_entropy_loss(&x, &labels).unwrap();
            x.data_mut()[i] = base[i];
            let numeric = (up - down) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
        results.push(LayerCheck {
            name: "softmax_ce",
            worst,
        });
    }

    // cosine distance (prediction gradient)
    {
        let target = random_vec(12, &mut rng, 1.0);
        let mut pred = random_vec(12, &mut rng, 1.0);
        let (_, analytic) = cosine_distance_loss(&pred, &target).unwrap();
        let mut worst = 0.0f64;
        for i in 0..pred.len() {
            let base = pred[i];
            pred[i] = base + FD_H;
            let (up, _) = cosine_distance_loss(&pred, &target).unwrap();
            pred[i] = base - FD_H;
            let (down, _) = cosine_distance_loss(&pred, &target).unwrap();
            pred[i] = base;
            let numeric = (up - down) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        results.push(LayerCheck {
            name: "cosine_loss",
            worst,
        });
    }

    for check in &results {
        assert!(
            check.worst < 1e-5,
            "{}: max relative gradient error {:.3e} exceeds 1e-5",
            check.name,
            check.worst
        );
    }

    // end-to-end: tiny residual classifier under cross-entropy, every
    // parameter against central differences
    let e2e_resnet = {
        let cfg = ResNetEmbedConfig {
            stage_channels: vec![4],
            blocks_per_stage: vec![1],
            embed_dim: 6,
            n_classes: 2,
            aux_fusion: paraforge_core::nnet::AuxFusion::None,
            aux_dim: 0,
        };
        let mut model = ResNetEmbed::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 1, 8, 16], random_vec(256, &mut rng, 0.8)).unwrap();
        let labels = vec![0usize, 1];

        let (logits, _) = model.forward(&x, None, Mode::Train).unwrap();
        let (_, grad) = cross_entropy_loss(&logits, &labels).unwrap();
        model.zero_grad();
        model.backward(&grad).unwrap();

        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        model.visit_state(&mut |name, trainable, t| {
            if trainable {
                analytic.push((name, t.grad().unwrap().to_vec()));
            }
        });
        let mut worst = 0.0f64;
        for (pname, grads) in &analytic {
            for i in 0..grads.len() {
                let mut base = 0.0;
                model.visit_state(&mut |name, _, t| {
                    if &name == pname {
                        base = t.data()[i];
                    }
                });
                let eval_at = |model: &mut ResNetEmbed<f64>, v: f64| -> f64 {
                    model.visit_state(&mut |name, _, t| {
                        if &name == pname {
                            t.data_mut()[i] = v;
                        }
                    });
                    let (logits, _) = model.forward(&x, None, Mode::Train).unwrap();
                    cross_entropy_loss(&logits, &labels).unwrap().0
                };
                let up = eval_at(&mut model, base + FD_H);
                let down = eval_at(&mut model, base - FD_H);
                eval_at(&mut model, base);
                let numeric = (up - down) / (2.0 * FD_H);
                worst = worst.max(rel_err(grads[i], numeric));
            }
        }
        worst
    };
    assert!(
        e2e_resnet < 1e-4,
        "resnet end-to-end gradient error {e2e_resnet:.3e} exceeds 1e-4"
    );

    // end-to-end: two-layer Bi-LSTM under cosine distance on a 10-frame toy
    let e2e_lstm = {
        let cfg = BiLstmConfig {
            in_dim: 3,
            n_layers: 2,
            hidden_per_direction: 4,
            dropout: 0.0,
            out_dim: 1,
        };
        let mut model = BiLstmRegressor::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Tensor::from_vec(&[10, 3], random_vec(30, &mut rng, 0.8)).unwrap();
        let target = random_vec(10, &mut rng, 0.5);

        let pred = model.forward(&x, Mode::Train, &mut Rng::new(0)).unwrap();
        let (_, grad) = cosine_distance_loss(pred.data(), &target).unwrap();
        let grad_t = Tensor::from_vec(pred.shape(), grad).unwrap();
        model.zero_grad();
        model.backward(&grad_t).unwrap();

        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        model.visit_state(&mut |name, trainable, t| {
            if trainable {
                analytic.push((name, t.grad().unwrap().to_vec()));
            }
        });
        let mut worst = 0.0f64;
        for (pname, grads) in &analytic {
            for i in 0..grads.len() {
                let mut base = 0.0;
                model.visit_state(&mut |name, _, t| {
                    if &name == pname {
                        base = t.data()[i];
                    }
                });
                let eval_at = |model: &mut BiLstmRegressor<f64>, v: f64| -> f64 {
                    model.visit_state(&mut |name, _, t| {
                        if &name == pname {
                            t.data_mut()[i] = v;
                        }
                    });
                    let pred = model.forward(&x, Mode::Train, &mut Rng::new(0)).unwrap();
                    cosine_distance_loss(pred.data(), &target).unwrap().0
                };
                let up = eval_at(&mut model, base + FD_H);
                let down = eval_at(&mut model, base - FD_H);
                eval_at(&mut model, base);
                let numeric = (up - down) / (2.0 * FD_H);
                worst = worst.max(rel_err(grads[i], numeric));
            }
        }
        worst
    };
    assert!(
        e2e_lstm < 1e-4,
        "bilstm end-to-end gradient error {e2e_lstm:.3e} exceeds 1e-4"
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "gradient suite took {elapsed:?}, budget is 2 minutes"
    );
    println!(
        "[PASS] 01 gradient correctness: {} layers < 1e-5, resnet e2e {:.2e}, bilstm e2e {:.2e}, {:?}",
        results.len(),
        e2e_resnet,
        e2e_lstm,
        elapsed
    );
}

#[test]
fn a02_pooling_oracle() {
    let mut rng = Rng::new(777);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let c = 1 + rng.below(5);
        let h = 1 + rng.below(7);
        let w = 1 + rng.below(7);
        let x = Tensor::from_vec(&[c, h, w], random_vec(c * h * w, &mut rng, 2.0)).unwrap();
        let got_gap = gap(&x).unwrap();
        let got_gsp = gsp(&x).unwrap();
        // naive triple-loop oracle
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..h {
                for j in 0..w {
                    sum += x.data()[ch * h * w + i * w + j];
                }
            }
            let mean = sum / (h * w) as f64;
            let mut dev = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let d = x.data()[ch * h * w + i * w + j] - mean;
                    dev += d * d;
                }
            }
            let std = (dev / (h * w) as f64).sqrt();
            worst = worst.max((got_gap.data()[ch] - mean).abs());
            worst = worst.max((got_gsp.data()[ch] - std).abs());
        }
        assert!(worst <= 1e-12, "case {case}: pooling deviates by {worst:.3e}");
    }
    // constant maps pool to exactly zero deviation
    for value in [0.0, 3.25, -7.5] {
        let x = Tensor::from_vec(&[3, 4, 5], vec![value; 60]).unwrap();
        assert!(gsp(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }
    println!("[PASS] 02 pooling oracle: 50 random tensors within 1e-12, constant maps exactly 0");
}

#[test]
fn a03_augmentation_properties() {
    const TRIALS: usize = 10_000;
    let (u, v) = (100usize, 64usize);
    let base = {
        let mut rng = Rng::new(5150);
        FeatureMatrix::new(random_vec(u * v, &mut rng, 1.0), u, v, 10.0).unwrap()
    };

    // identity with zero-width masks
    let id_cfg = SpecAugmentConfig {
        max_freq_mask: 0,
        max_time_mask: 0,
        ..Default::default()
    };
    for seed in 0..100 {
        let out = spec_augment(&base, &id_cfg, &mut Rng::new(seed)).unwrap();
        assert_eq!(out.data(), base.data());
    }

    let cfg = SpecAugmentConfig::default(); // F = 12, T = 20, mask value 0
    for seed in 0..TRIALS as u64 {
        let out = spec_augment(&base, &cfg, &mut Rng::new(seed)).unwrap();
        let mut masked_cols = 0usize;
        let mut masked_rows = 0usize;
        for b in 0..v {
            if (0..u).all(|t| out.at(t, b) == 0.0) {
                masked_cols += 1;
            }
        }
        for t in 0..u {
            if (0..v).all(|b| out.at(t, b) == 0.0) {
                masked_rows += 1;
            }
        }
        assert!(masked_cols <= cfg.max_freq_mask);
        assert!(masked_rows <= cfg.max_time_mask);
        // everything outside fully-masked rows/columns is bit-identical
        for t in 0..u {
            let row_masked = (0..v).all(|b| out.at(t, b) == 0.0);
            if row_masked {
                continue;
            }
            for b in 0..v {
                let col_masked = (0..u).all(|tt| out.at(tt, b) == 0.0);
                if !col_masked {
                    assert_eq!(out.at(t, b).to_bits(), base.at(t, b).to_bits(), "seed {seed}");
                }
            }
        }
    }

    // random erasing on an all-ones matrix: area bounds and apply rate
    let ones = FeatureMatrix::new(vec![1.0; u * v], u, v, 10.0).unwrap();
    let erase_cfg = RandomErasingConfig::default(); // (0.02, 0.2), p = 0.5
    let mut applied = 0usize;
    for seed in 0..TRIALS as u64 {
        let out = random_erase(&ones, &erase_cfg, &mut Rng::new(seed)).unwrap();
        let zeros = out.data().iter().filter(|&&x| x == 0.0).count();
        if zeros == 0 {
            continue;
        }
        applied += 1;
        let rows: Vec<usize> = (0..u).filter(|&t| (0..v).any(|b| out.at(t, b) == 0.0)).collect();
        let cols: Vec<usize> = (0..v).filter(|&b| (0..u).any(|t| out.at(t, b) == 0.0)).collect();
        let (h, w) = (rows.len(), cols.len());
        assert_eq!(zeros, h * w, "seed {seed}: erased region is not a full rectangle");
        // area within the configured range, one row+column of rounding slack
        let area = (h * w) as f64;
        let slack = (h + w + 1) as f64;
        let lo = erase_cfg.area_ratio_min * (u * v) as f64 - slack;
        let hi = erase_cfg.area_ratio_max * (u * v) as f64 + slack;
        assert!(
            area >= lo && area <= hi,
            "seed {seed}: area {area} outside [{lo:.1}, {hi:.1}]"
        );
    }
    let rate = applied as f64 / TRIALS as f64;
    assert!(
        (rate - erase_cfg.apply_prob).abs() <= 0.03,
        "apply rate {rate} deviates from {}",
        erase_cfg.apply_prob
    );
    println!(
        "[PASS] 03 augmentation properties: {TRIALS} trials each; erase apply rate {rate:.3}"
    );
}

/// FFT peak with parabolic interpolation, in Hz.
fn dominant_frequency(clip: &AudioClip) -> f64 {
    use rustfft::num_complex::Complex;
    let n = (clip.len() * 4).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = clip
        .samples()
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let peak = (1..mags.len() - 1)
        .max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())
        .unwrap();
    let (y0, y1, y2) = (mags[peak - 1], mags[peak], mags[peak + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let delta = if denom.abs() < 1e-12 { 0.0 } else { 0.5 * (y0 - y2) / denom };
    (peak as f64 + delta) * clip.sample_rate_hz() as f64 / n as f64
}

#[test]
fn a04_speed_perturbation() {
    let tone: Vec<f32> = (0..16000)
        .map(|i| (0.5 * (std::f64::consts::TAU * 440.0 * i as f64 / 16000.0).sin()) as f32)
        .collect();
    let clip = AudioClip::new(tone, 16000).unwrap();

    for (len, factor) in [(16000usize, 0.9f64), (16000, 1.1), (12345, 0.9), (12345, 1.3)] {
        let c = AudioClip::new(clip.samples()[..len].to_vec(), 16000).unwrap();
        let out = resample(&c, factor).unwrap();
        assert_eq!(out.len(), (len as f64 / factor).round() as usize);
    }
    let same = resample(&clip, 1.0).unwrap();
    assert_eq!(
        same.samples()
            .iter()
            .map(|s| s.to_bits())
            .collect::<Vec<_>>(),
        clip.samples().iter().map(|s| s.to_bits()).collect::<Vec<_>>()
    );
    for factor in [0.9, 1.1] {
        let out = resample(&clip, factor).unwrap();
        let f = dominant_frequency(&out);
        assert!(
            (f - 440.0 * factor).abs() < 1.0,
            "factor {factor}: peak at {f} Hz"
        );
    }
    println!("[PASS] 04 speed perturbation: exact lengths, bit-identical unity, tone scaling within 1 Hz");
}

#[test]
fn a05_metric_oracles() {
    // independent brute-force references
    fn uar_reference(truth: &[usize], pred: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for class in 0..k {
            let mut in_class = 0usize;
            let mut correct = 0usize;
            for (&t, &p) in truth.iter().zip(pred.iter()) {
                if t == class {
                    in_class += 1;
                    if p == class {
                        correct += 1;
                    }
                }
            }
            total += correct as f64 / in_class as f64;
        }
        total / k as f64
    }
    fn pcc_reference(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    let mut rng = Rng::new(31337);
    for case in 0..1000 {
        let k = 2 + rng.below(3);
        let n = k + 2 + rng.below(60);
        let mut truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        for (class, slot) in truth.iter_mut().take(k).enumerate() {
            *slot = class; // every class present
        }
        let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let got = uar(&truth, &pred, k).unwrap();
        let want = uar_reference(&truth, &pred, k);
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");

        let m = 2 + rng.below(80);
        let xs: Vec<f64> = (0..m).map(|_| rng.range(-10.0, 10.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| x * rng.range(-2.0, 2.0) + rng.normal())
            .collect();
        if let Ok(got) = pcc(&xs, &ys) {
            let want = pcc_reference(&xs, &ys);
            assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
        }
    }

    let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
    assert!((pcc(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
    assert!((pcc(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);

    let truth: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let constant = vec![1usize; 40];
    assert!((uar(&truth, &constant, 2).unwrap() - 0.5).abs() < 1e-15);
    println!("[PASS] 05 metric oracles: 1000 random cases within 1e-12, closed forms exact");
}

fn two_moons(n: usize, noise: f64, seed: u64) -> EmbeddingSet {
    let mut rng = Rng::new(seed);
    let mut set = EmbeddingSet::new("two-moons", 2);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.uniform();
        let (x, y, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 0u8)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1u8)
        };
        set.push(
            format!("p{i}"),
            label,
            &[x + noise * rng.normal(), y + noise * rng.normal()],
        )
        .unwrap();
    }
    set
}

#[test]
fn a06_svm() {
    // KKT residuals on two-moons, verified from raw multipliers with an
    // independently built kernel matrix
    let moons = two_moons(200, 0.1, 99);
    let opts = SvmOptions {
        c: 10.0,
        gamma: Some(2.0),
        tol: 1e-3,
        max_passes: 200,
        seed: 7,
    };
    let (model, diag) = smo_train(&moons, &opts).unwrap();
    assert!(diag.converged, "SMO failed to converge on two-moons");
    assert!(
        diag.training_accuracy >= 0.95,
        "two-moons training accuracy {}",
        diag.training_accuracy
    );

    let n = moons.len();
    let y: Vec<f64> = moons.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut scores = vec![model.bias; n];
    for i in 0..n {
        for j in 0..n {
            if diag.alphas[j] > 0.0 {
                let mut d2 = 0.0;
                for (a, b) in moons.row(i).iter().zip(moons.row(j).iter()) {
                    d2 += (a - b) * (a - b);
                }
                scores[i] += diag.alphas[j] * y[j] * (-model.gamma * d2).exp();
            }
        }
    }
    let tol = opts.tol;
    for i in 0..n {
        let margin = y[i] * scores[i];
        let a = diag.alphas[i];
        if a <= 1e-9 {
            assert!(margin >= 1.0 - tol, "point {i}: alpha 0 but margin {margin}");
        } else if a >= opts.c - 1e-9 {
            assert!(margin <= 1.0 + tol, "point {i}: alpha C but margin {margin}");
        } else {
            assert!(
                (margin - 1.0).abs() <= tol,
                "point {i}: free SV margin {margin}"
            );
        }
    }

    // dual objective is non-decreasing
    for w in diag.dual_objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "dual decreased: {} -> {}", w[0], w[1]);
    }

    // XOR with an RBF kernel trains to perfect accuracy
    let mut xor = EmbeddingSet::new("xor", 2);
    xor.push("a", 0, &[0.0, 0.0]).unwrap();
    xor.push("b", 0, &[1.0, 1.0]).unwrap();
    xor.push("c", 1, &[0.0, 1.0]).unwrap();
    xor.push("d", 1, &[1.0, 0.0]).unwrap();
    let (_, xor_diag) = smo_train(
        &xor,
        &SvmOptions {
            c: 10.0,
            gamma: Some(1.0),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(xor_diag.training_accuracy, 1.0, "XOR not separated");

    // fusing identical systems reproduces the single system's decisions
    let probs: Vec<f64> = (0..moons.len())
        .map(|i| predict_proba(&model, moons.row(i)).unwrap())
        .collect();
    let fused = fuse_probabilities(&[probs.clone(), probs.clone(), probs.clone()]).unwrap();
    for (a, b) in probs.iter().zip(fused.iter()) {
        assert!((a - b).abs() < 1e-15);
        assert_eq!(*a >= 0.5, *b >= 0.5);
    }

    // margin support vectors score close to their label
    let mut checked = 0;
    for i in 0..n {
        if diag.alphas[i] > 1e-6 && diag.alphas[i] < opts.c - 1e-6 {
            let s = decision_score(&model, moons.row(i)).unwrap();
            assert!((y[i] * s - 1.0).abs() <= tol * 2.0, "margin SV {i}: {s}");
            checked += 1;
        }
    }
    assert!(checked > 0, "no free support vectors to check");
    println!(
        "[PASS] 06 svm: KKT within {tol}, dual monotone, XOR exact, two-moons {:.3}, fusion consistent",
        diag.training_accuracy
    );
}

fn write_cfg(path: &Path, cfg: &PipelineConfig) {
    std::fs::write(path, cfg.to_text()).unwrap();
}

#[test]
fn a07_msc_end_to_end() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let spec = SynthSpec::default(); // 8 speakers x 50 one-second clips
    synth_mask_corpus(&spec, &corpus).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.seed = 42;
    cfg.optim.epochs = 2;
    let cfg_path = dir.path().join("base.cfg");
    write_cfg(&cfg_path, &cfg);

    let plan = Plan {
        corpus_manifest: corpus.join("manifest.csv"),
        base_config: Some(cfg_path),
        systems: vec![
            PlanSystem {
                name: "specaug".into(),
                augment: "speed+specaug".into(),
                fusion: "none".into(),
                starred: true,
            },
            PlanSystem {
                name: "erase".into(),
                augment: "speed+erase".into(),
                fusion: "none".into(),
                starred: true,
            },
        ],
    };
    let report = run_experiment(&plan, dir.path().join("exp")).unwrap();
    let elapsed = started.elapsed();

    let specaug_row = report.systems.iter().find(|s| s.name == "specaug").unwrap();
    let best = report
        .systems
        .iter()
        .map(|s| s.devel_uar)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        specaug_row.devel_uar >= 0.90,
        "speed+specaug devel UAR {:.4} below 0.90",
        specaug_row.devel_uar
    );
    assert!(
        report.fused_uar >= best - 0.02,
        "fused UAR {:.4} trails best single {:.4} by over 0.02",
        report.fused_uar,
        best
    );
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "MSC end-to-end took {elapsed:?}, budget 10 minutes"
    );
    println!(
        "[PASS] 07 MSC end-to-end: specaug UAR {:.4}, erase UAR {:.4}, fused {:.4}, {:?}",
        specaug_row.devel_uar,
        report.systems.iter().find(|s| s.name == "erase").unwrap().devel_uar,
        report.fused_uar,
        elapsed
    );
}

#[test]
fn a08_bsc_end_to_end() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let spec = SynthSpec {
        n_speakers: 6,
        clips_per_speaker: 1,
        seed: 42,
        ..Default::default()
    };
    synth_breath_corpus(&spec, &corpus).unwrap();
    let manifest = Manifest::load(corpus.join("manifest.csv")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.seed = 42;
    cfg.dsp = FbankConfig::bsc_default();
    cfg.bilstm = BiLstmConfig::default(); // 2 layers x 256/direction, dropout 0.6, tanh
    cfg.optim = OptimizerConfig {
        kind: OptimizerKind::Adam,
        epochs: 4,
        batch_size: 16,
        ..OptimizerConfig::adam_default()
    };
    let outcome = train_breath(&manifest, &cfg).unwrap();
    let elapsed = started.elapsed();

    assert!(
        outcome.final_devel_pcc >= 0.80,
        "held-out PCC {:.4} below 0.80",
        outcome.final_devel_pcc
    );
    assert!(
        outcome.final_devel_pcc > outcome.log.initial_devel_metric,
        "final PCC {:.4} does not exceed initialization {:.4}",
        outcome.final_devel_pcc,
        outcome.log.initial_devel_metric
    );
    assert!(
        elapsed.as_secs_f64() < 900.0,
        "BSC end-to-end took {elapsed:?}, budget 15 minutes"
    );
    println!(
        "[PASS] 08 BSC end-to-end: init PCC {:.4} -> final {:.4}, {:?}",
        outcome.log.initial_devel_metric,
        outcome.final_devel_pcc,
        elapsed
    );
}

// ---------------------------------------------------------------------------
// CLI determinism
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    let exe = env!("CARGO_BIN_EXE_paraforge");
    std::process::Command::new(exe)
        .args(args)
        .output()
        .expect("spawn paraforge")
}

fn assert_cli_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// All files under a directory as (relative path, bytes), sorted.
fn dir_snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

fn tiny_mask_corpus_spec(dir: &Path) -> std::path::PathBuf {
    let spec_path = dir.join("tiny_mask.spec");
    std::fs::write(
        &spec_path,
        "synth.n_speakers = 4\nsynth.clips_per_speaker = 4\nsynth.seed = 11\n",
    )
    .unwrap();
    spec_path
}

fn tiny_cfg_text() -> String {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 11;
    cfg.resnet.stage_channels = vec![4, 8];
    cfg.resnet.blocks_per_stage = vec![1, 1];
    cfg.resnet.embed_dim = 8;
    cfg.optim.epochs = 1;
    cfg.optim.batch_size = 8;
    cfg.to_text()
}

#[test]
fn a09_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = tiny_mask_corpus_spec(dir.path());
    let cfg_path = dir.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_cfg_text()).unwrap();

    // synth-data twice
    let (c1, c2) = (dir.path().join("c1"), dir.path().join("c2"));
    for c in [&c1, &c2] {
        let out = run_cli(&[
            "synth-data",
            "--task",
            "mask",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
        ]);
        assert_cli_ok(&out, "synth-data");
    }
    assert_eq!(dir_snapshot(&c1), dir_snapshot(&c2), "synth-data not byte-identical");

    // fbank twice over the corpus audio
    let (f1, f2) = (dir.path().join("f1"), dir.path().join("f2"));
    for f in [&f1, &f2] {
        let out = run_cli(&[
            "fbank",
            "--config",
            cfg_path.to_str().unwrap(),
            "--in",
            c1.join("audio").to_str().unwrap(),
            "--out",
            f.to_str().unwrap(),
        ]);
        assert_cli_ok(&out, "fbank");
    }
    assert_eq!(dir_snapshot(&f1), dir_snapshot(&f2), "fbank not byte-identical");

    // augment twice (specaug), also with --jobs 2 to check fan-out stability
    let (g1, g2) = (dir.path().join("g1"), dir.path().join("g2"));
    for (g, jobs) in [(&g1, "1"), (&g2, "2")] {
        let out = run_cli(&[
            "augment",
            "--scheme",
            "specaug",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "99",
            "--in",
            f1.to_str().unwrap(),
            "--out",
            g.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert_cli_ok(&out, "augment");
    }
    assert_eq!(dir_snapshot(&g1), dir_snapshot(&g2), "augment not byte-identical");

    // full run-experiment bundle twice
    let plan_path = dir.path().join("plan.txt");
    std::fs::write(
        &plan_path,
        "corpus = c1\nbase_config = tiny.cfg\n\
         system.a.augment = speed+specaug\nsystem.a.starred = true\n\
         system.b.augment = none\nsystem.b.starred = true\n",
    )
    .unwrap();
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for e in [&e1, &e2] {
        let out = run_cli(&[
            "run-experiment",
            "--plan",
            plan_path.to_str().unwrap(),
            "--out",
            e.to_str().unwrap(),
        ]);
        assert_cli_ok(&out, "run-experiment");
    }
    assert_eq!(
        dir_snapshot(&e1),
        dir_snapshot(&e2),
        "run-experiment bundle not byte-identical"
    );

    // tiny breath pipeline twice
    let breath_spec = dir.path().join("tiny_breath.spec");
    std::fs::write(
        &breath_spec,
        "synth.n_speakers = 3\nsynth.clips_per_speaker = 1\nsynth.breath_clip_secs = 12\nsynth.seed = 13\n",
    )
    .unwrap();
    let bc = dir.path().join("bc");
    let out = run_cli(&[
        "synth-data",
        "--task",
        "breath",
        "--spec",
        breath_spec.to_str().unwrap(),
        "--out",
        bc.to_str().unwrap(),
    ]);
    assert_cli_ok(&out, "synth-data breath");

    let mut bcfg = PipelineConfig::default();
    bcfg.seed = 13;
    bcfg.dsp = FbankConfig::bsc_default();
    bcfg.bilstm.n_layers = 1;
    bcfg.bilstm.hidden_per_direction = 8;
    bcfg.bilstm.dropout = 0.2;
    bcfg.bsc_target_frames = 300; // 12 s at 25 Hz
    bcfg.optim = OptimizerConfig {
        kind: OptimizerKind::Adam,
        epochs: 2,
        ..OptimizerConfig::adam_default()
    };
    let bcfg_path = dir.path().join("breath.cfg");
    write_cfg(&bcfg_path, &bcfg);
    let (b1, b2) = (dir.path().join("b1"), dir.path().join("b2"));
    for b in [&b1, &b2] {
        std::fs::create_dir_all(b).unwrap();
        let out = run_cli(&[
            "train-breath",
            "--config",
            bcfg_path.to_str().unwrap(),
            "--manifest",
            bc.join("manifest.csv").to_str().unwrap(),
            "--out",
            b.join("model.pckp").to_str().unwrap(),
            "--pred-dir",
            b.join("pred").to_str().unwrap(),
        ]);
        assert_cli_ok(&out, "train-breath");
    }
    assert_eq!(dir_snapshot(&b1), dir_snapshot(&b2), "train-breath not byte-identical");

    println!("[PASS] 09 determinism: synth/fbank/augment/run-experiment/train-breath byte-identical across reruns");
}

#[test]
fn a10_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let spec = SynthSpec {
        n_speakers: 4,
        clips_per_speaker: 4,
        seed: 17,
        ..Default::default()
    };
    let manifest = synth_mask_corpus(&spec, &corpus).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.seed = 17;
    cfg.resnet.stage_channels = vec![4, 8];
    cfg.resnet.blocks_per_stage = vec![1, 1];
    cfg.resnet.embed_dim = 8;
    cfg.optim.epochs = 1;
    cfg.optim.batch_size = 8;
    let outcome = train_mask(&manifest, &cfg).unwrap();

    // forward outputs (embeddings) from the in-memory checkpoint
    let direct = extract_embeddings(&outcome.checkpoint, &manifest, Split::Devel, "sys").unwrap();

    // save -> load -> forward must be bit-exact
    let ckpt_path = dir.path().join("model.pckp");
    outcome.checkpoint.save(&ckpt_path).unwrap();
    let loaded = ModelCheckpoint::load(&ckpt_path).unwrap();
    let reloaded = extract_embeddings(&loaded, &manifest, Split::Devel, "sys").unwrap();
    assert_eq!(direct.len(), reloaded.len());
    for i in 0..direct.len() * direct.dim {
        assert_eq!(
            (direct.data[i] as f32).to_bits(),
            (reloaded.data[i] as f32).to_bits(),
            "embedding bit mismatch at {i}"
        );
    }

    // the reloaded model reproduces the pipeline's evaluation UAR exactly
    let svm_input = extract_embeddings(&outcome.checkpoint, &manifest, Split::Train, "sys").unwrap();
    let opts = SvmOptions::default();
    let (svm_a, _) = smo_train(&svm_input, &opts).unwrap();
    let svm_input_b = extract_embeddings(&loaded, &manifest, Split::Train, "sys").unwrap();
    let (svm_b, _) = smo_train(&svm_input_b, &opts).unwrap();
    let score = |svm: &paraforge_core::svm::SvmModel, set: &EmbeddingSet| -> f64 {
        let truth: Vec<usize> = set.labels.iter().map(|&l| l as usize).collect();
        let pred: Vec<usize> = (0..set.len())
            .map(|i| if predict_proba(svm, set.row(i)).unwrap() >= 0.5 { 1 } else { 0 })
            .collect();
        uar(&truth, &pred, 2).unwrap()
    };
    assert_eq!(score(&svm_a, &direct), score(&svm_b, &reloaded));

    // corruption: truncations and a flipped magic are rejected outright
    let bytes = std::fs::read(&ckpt_path).unwrap();
    for cut in [4usize, 11, bytes.len() / 3, bytes.len() - 1] {
        let p = dir.path().join("trunc.pckp");
        std::fs::write(&p, &bytes[..cut]).unwrap();
        match ModelCheckpoint::load(&p) {
            Err(paraforge_core::Error::Integrity(_)) | Err(paraforge_core::Error::Format { .. }) => {}
            other => panic!("truncated checkpoint accepted: {other:?}"),
        }
    }
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xFF;
    let p = dir.path().join("magic.pckp");
    std::fs::write(&p, &flipped).unwrap();
    assert!(matches!(
        ModelCheckpoint::load(&p),
        Err(paraforge_core::Error::Format { .. })
    ));

    // kernel sanity so the oracle path itself stays honest
    assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 1.0);
    println!("[PASS] 10 checkpoint round-trip: bit-exact reload, UAR reproduced, corruption rejected");
}
