//! Small-scale end-to-end pipeline tests: training logs, determinism,
//! augmentation audit, experiment resume and the synthetic-corpus contract.
//! Model and corpus sizes are kept tiny; the full-scale runs live in the
//! acceptance suite.

use paraforge_core::dsp::{log_fbank, mel_filterbank, read_wav, FbankConfig};
use paraforge_core::metrics::pcc;
use paraforge_core::nnet::{OptimizerConfig, OptimizerKind};
use paraforge_core::pipeline::*;
use paraforge_core::svm::UNLABELED;

fn tiny_mask_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_speakers: 4,
        clips_per_speaker: 6,
        seed,
        ..Default::default()
    }
}

fn tiny_mask_cfg(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg.resnet.stage_channels = vec![4, 8];
    cfg.resnet.blocks_per_stage = vec![1, 1];
    cfg.resnet.embed_dim = 8;
    cfg.optim.epochs = 3;
    cfg.optim.batch_size = 8;
    cfg
}

#[test]
fn mask_training_logs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_mask_corpus(&tiny_mask_spec(5), dir.path()).unwrap();
    let cfg = tiny_mask_cfg(5);

    let a = train_mask(&manifest, &cfg).unwrap();
    assert_eq!(a.log.entries.len(), cfg.optim.epochs);
    // training loss at the last epoch does not exceed the first
    let first = a.log.entries.first().unwrap().train_loss;
    let last = a.log.entries.last().unwrap().train_loss;
    assert!(last <= first, "loss went {first} -> {last}");
    // no augmentation ever touches eval-split features
    assert!(a.log.audit.total_for_split(Split::Train) > 0);
    assert_eq!(a.log.audit.total_for_split(Split::Devel), 0);
    assert_eq!(a.log.audit.total_for_split(Split::Test), 0);
    assert!(a.log.max_group_size <= cfg.optim.batch_size);

    // same seed, same bytes
    let b = train_mask(&manifest, &cfg).unwrap();
    let (pa, pb) = (dir.path().join("a.pckp"), dir.path().join("b.pckp"));
    a.checkpoint.save(&pa).unwrap();
    b.checkpoint.save(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn embeddings_are_stable_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_mask_corpus(&tiny_mask_spec(6), dir.path()).unwrap();
    let mut cfg = tiny_mask_cfg(6);
    cfg.optim.epochs = 1;
    let outcome = train_mask(&manifest, &cfg).unwrap();

    let devel = manifest.split_records(Split::Devel);
    let e1 = extract_embeddings(&outcome.checkpoint, &manifest, Split::Devel, "sys").unwrap();
    assert_eq!(e1.len(), devel.len());
    for (row, record) in e1.ids.iter().zip(devel.iter()) {
        assert_eq!(row, &record.path);
    }
    let e2 = extract_embeddings(&outcome.checkpoint, &manifest, Split::Devel, "sys").unwrap();
    assert_eq!(e1.data, e2.data);
}

#[test]
fn masked_features_embed_close_to_originals() {
    use paraforge_core::augment::{spec_augment, SpecAugmentConfig};
    use paraforge_core::rng::Rng;

    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_mask_corpus(&tiny_mask_spec(7), dir.path()).unwrap();
    let cfg = tiny_mask_cfg(7);
    let outcome = train_mask(&manifest, &cfg).unwrap();

    // one devel clip, plain vs SpecAugment-masked features
    let record = manifest.split_records(Split::Devel)[0].clone();
    let clip = read_wav(manifest.resolve(&record.path)).unwrap();
    let feat = prepare_clip_features(&clip, &cfg.dsp).unwrap();
    let masked = spec_augment(&feat, &SpecAugmentConfig::default(), &mut Rng::new(3)).unwrap();
    let set = extract_embeddings_from_features(
        &outcome.checkpoint,
        &[("plain".into(), feat), ("masked".into(), masked)],
        "sys",
    )
    .unwrap();
    assert_eq!(set.labels, vec![UNLABELED, UNLABELED]);
    let (a, b) = (set.row(0), set.row(1));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (na * nb);
    assert!(cosine > 0.8, "masked embedding drifted: cosine {cosine}");
}

#[test]
fn breath_training_improves_and_groups_batches() {
    let dir = tempfile::tempdir().unwrap();
    // 10 speakers x 3 clips of 12 s: 18 train utterances, so a batch of 16
    // forces two optimizer steps per epoch
    let spec = SynthSpec {
        n_speakers: 10,
        clips_per_speaker: 3,
        breath_clip_secs: 12.0,
        seed: 8,
        ..Default::default()
    };
    let manifest = synth_breath_corpus(&spec, dir.path()).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.seed = 8;
    cfg.dsp = FbankConfig::bsc_default();
    cfg.bilstm.n_layers = 1;
    cfg.bilstm.hidden_per_direction = 8;
    cfg.bilstm.dropout = 0.2;
    cfg.bsc_target_frames = 300;
    cfg.optim = OptimizerConfig {
        kind: OptimizerKind::Adam,
        epochs: 3,
        batch_size: 16,
        ..OptimizerConfig::adam_default()
    };
    let outcome = train_breath(&manifest, &cfg).unwrap();
    assert_eq!(outcome.log.entries.len(), 3);
    assert_eq!(outcome.log.optimizer_steps, 3 * 2);
    assert_eq!(outcome.log.max_group_size, 16);
    assert!(outcome.final_devel_pcc > outcome.log.initial_devel_metric);

    // belt predictions line up with the devel split and stay inside (-1, 1)
    let preds = predict_belts(&outcome.checkpoint, &manifest, Split::Devel).unwrap();
    assert_eq!(preds.len(), manifest.split_records(Split::Devel).len());
    for (_, belt) in &preds {
        assert_eq!(belt.len(), 300);
        assert!(belt.iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn belt_length_mismatch_names_the_clip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_speakers: 3,
        clips_per_speaker: 1,
        breath_clip_secs: 12.0,
        seed: 9,
        ..Default::default()
    };
    let manifest = synth_breath_corpus(&spec, dir.path()).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.dsp = FbankConfig::bsc_default();
    cfg.bilstm.hidden_per_direction = 4;
    cfg.bilstm.n_layers = 1;
    cfg.bsc_target_frames = 290; // deliberately off the 300-sample belts
    cfg.optim = OptimizerConfig {
        kind: OptimizerKind::Adam,
        epochs: 1,
        ..OptimizerConfig::adam_default()
    };
    let err = train_breath(&manifest, &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, paraforge_core::Error::Data(_)), "{msg}");
    assert!(msg.contains("spk00_000"), "{msg}");
}

#[test]
fn experiment_single_system_fuses_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    synth_mask_corpus(&tiny_mask_spec(10), &corpus).unwrap();
    let mut cfg = tiny_mask_cfg(10);
    cfg.optim.epochs = 1;
    let cfg_path = dir.path().join("cfg.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).unwrap();

    let plan = Plan {
        corpus_manifest: corpus.join("manifest.csv"),
        base_config: Some(cfg_path),
        systems: vec![PlanSystem {
            name: "solo".into(),
            augment: "speed".into(),
            fusion: "none".into(),
            starred: true,
        }],
    };
    let out = dir.path().join("exp");
    let report = run_experiment(&plan, &out).unwrap();
    assert_eq!(report.systems.len(), 1);
    assert_eq!(report.fused_members, vec!["solo".to_string()]);
    assert!((report.fused_uar - report.systems[0].devel_uar).abs() < 1e-12);

    // fused predictions equal the single system's
    let single = std::fs::read_to_string(out.join("systems/solo/devel_pred.csv")).unwrap();
    let fused = std::fs::read_to_string(out.join("fused_pred.csv")).unwrap();
    assert_eq!(single, fused);
}

#[test]
fn experiment_resumes_from_artifacts_in_plan_order() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = synth_mask_corpus(&tiny_mask_spec(11), &corpus).unwrap();
    let mut cfg = tiny_mask_cfg(11);
    cfg.optim.epochs = 1;
    let cfg_path = dir.path().join("cfg.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).unwrap();

    let plan = Plan {
        corpus_manifest: corpus.join("manifest.csv"),
        base_config: Some(cfg_path),
        systems: vec![
            PlanSystem {
                name: "zeta".into(),
                augment: "none".into(),
                fusion: "none".into(),
                starred: false,
            },
            PlanSystem {
                name: "alpha".into(),
                augment: "speed".into(),
                fusion: "none".into(),
                starred: true,
            },
        ],
    };
    let out = dir.path().join("exp");
    let report = run_experiment(&plan, &out).unwrap();
    // rows follow plan order, not alphabetical order
    assert_eq!(report.systems[0].name, "zeta");
    assert_eq!(report.systems[1].name, "alpha");
    assert_eq!(report.fused_members, vec!["alpha".to_string()]);

    // doctor one artifact; the rerun must consume it instead of retraining
    let devel = manifest.split_records(Split::Devel);
    let mut doctored = String::from("path,probability,decision\n");
    for r in &devel {
        doctored.push_str(&format!("{},1.000000,mask\n", r.path));
    }
    std::fs::write(out.join("systems/alpha/devel_pred.csv"), &doctored).unwrap();
    let rerun = run_experiment(&plan, &out).unwrap();
    // all-mask predictions on balanced devel data score exactly 0.5
    let alpha = rerun.systems.iter().find(|s| s.name == "alpha").unwrap();
    assert!((alpha.devel_uar - 0.5).abs() < 1e-12, "resume ignored artifacts");
}

#[test]
fn mask_corpus_attenuates_above_the_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_speakers: 3,
        clips_per_speaker: 4,
        seed: 12,
        ..Default::default()
    };
    let manifest = synth_mask_corpus(&spec, dir.path()).unwrap();
    let cfg = FbankConfig::msc_default();
    let filters = mel_filterbank(&cfg, spec.sample_rate_hz).unwrap();
    let high_bins: Vec<usize> = filters
        .iter()
        .enumerate()
        .filter(|(_, f)| f.center_hz > spec.mask_cutoff_hz)
        .map(|(i, _)| i)
        .collect();
    assert!(!high_bins.is_empty());

    let mut mean_by_class = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for r in manifest.records() {
        let clip = read_wav(manifest.resolve(&r.path)).unwrap();
        let feat = log_fbank(&clip, &cfg).unwrap();
        let mut sum = 0.0;
        for t in 0..feat.n_frames() {
            for &b in &high_bins {
                sum += feat.at(t, b);
            }
        }
        let idx = r.label.unwrap().index();
        mean_by_class[idx] += sum / (feat.n_frames() * high_bins.len()) as f64;
        counts[idx] += 1;
    }
    let clear_mean = mean_by_class[0] / counts[0] as f64;
    let masked_mean = mean_by_class[1] / counts[1] as f64;
    // natural-log difference converted to decibels
    let diff_db = (clear_mean - masked_mean) * 10.0 / std::f64::consts::LN_10;
    assert!(
        diff_db >= spec.mask_attenuation_db / 2.0,
        "above-cutoff attenuation only {diff_db:.1} dB"
    );
}

#[test]
fn breath_envelope_tracks_derivative_via_pcc_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_speakers: 3,
        clips_per_speaker: 1,
        breath_clip_secs: 30.0,
        seed: 14,
        ..Default::default()
    };
    let manifest = synth_breath_corpus(&spec, dir.path()).unwrap();
    for r in manifest.records() {
        let clip = read_wav(manifest.resolve(&r.path)).unwrap();
        let belt = read_belt(manifest.resolve(r.belt_path.as_ref().unwrap())).unwrap();
        assert_eq!(belt.len(), 750); // 30 s at 25 Hz
        assert!(belt.iter().all(|v| v.abs() <= 1.0));
        let spf = clip.sample_rate_hz() as usize / 25;
        let rms: Vec<f64> = (0..belt.len())
            .map(|k| {
                let lo = k * spf;
                let hi = ((k + 1) * spf).min(clip.len());
                let sum: f64 = clip.samples()[lo..hi].iter().map(|&s| (s as f64).powi(2)).sum();
                (sum / (hi - lo) as f64).sqrt()
            })
            .collect();
        let deriv: Vec<f64> = (0..belt.len())
            .map(|k| {
                if k == 0 {
                    belt[1] - belt[0]
                } else if k == belt.len() - 1 {
                    belt[k] - belt[k - 1]
                } else {
                    (belt[k + 1] - belt[k - 1]) / 2.0
                }
            })
            .collect();
        let r_val = pcc(&rms, &deriv).unwrap();
        assert!(r_val > 0.5, "{}: correlation {r_val}", r.path);
    }
}

#[test]
fn experiment_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let plan = Plan {
        corpus_manifest: dir.path().join("missing/manifest.csv"),
        base_config: None,
        systems: vec![PlanSystem {
            name: "a".into(),
            augment: "none".into(),
            fusion: "none".into(),
            starred: false,
        }],
    };
    let err = run_experiment(&plan, dir.path().join("exp")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("load-manifest"), "{msg}");
}

#[test]
fn default_msc_target_matches_one_second_of_frames() {
    let cfg = PipelineConfig::default();
    let dsp = &cfg.dsp;
    let win = dsp.window_samples(16000);
    let shift = dsp.shift_samples(16000);
    let frames_for_one_second = (16000 - win) / shift + 1;
    assert_eq!(cfg.target_frames, frames_for_one_second);
}

#[test]
fn descriptor_mismatch_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_mask_corpus(&tiny_mask_spec(15), dir.path()).unwrap();
    let mut cfg = tiny_mask_cfg(15);
    cfg.optim.epochs = 1;
    let outcome = train_mask(&manifest, &cfg).unwrap();

    // a breath flow must reject a mask checkpoint
    let err = predict_belts(&outcome.checkpoint, &manifest, Split::Devel).unwrap_err();
    assert!(matches!(err, paraforge_core::Error::Integrity(_)), "{err}");

    // dropping a parameter breaks the round trip
    let mut broken = outcome.checkpoint.clone();
    broken.params.pop();
    let err = extract_embeddings(&broken, &manifest, Split::Devel, "sys").unwrap_err();
    assert!(matches!(err, paraforge_core::Error::Integrity(_)), "{err}");
}
