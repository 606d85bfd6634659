//! Breath-monitoring flow: Fbank (or stacked) sequence features, stacked
//! Bi-LSTM regression against the belt trace under cosine distance, Adam
//! updates on utterance groups, and belt prediction for evaluation.

use std::collections::BTreeMap;

use crate::dsp::read_wav;
use crate::error::{Error, Result};
use crate::metrics::{bsc_score, BscAggregation};
use crate::nnet::{
    collect_state, cosine_distance_loss, plateau_lr, restore_state, BiLstmConfig, BiLstmRegressor,
    Mode, ModelCheckpoint, Optimizer, Tensor,
};
use crate::rng::Rng;

use super::belt_io::read_belt;
use super::config::PipelineConfig;
use super::features::prepare_breath_features;
use super::manifest::{Manifest, ManifestRecord, Split, Task};
use super::{TrainLog, TrainLogEntry};

const STREAM_MODEL_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_DROPOUT: u64 = 12;

#[derive(Debug)]
pub struct BreathTrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
    pub final_devel_pcc: f64,
}

struct Utterance {
    speaker: String,
    seq: Tensor<f32>,
    belt: Vec<f64>,
}

fn load_utterances(records: &[&ManifestRecord], manifest: &Manifest, cfg: &PipelineConfig) -> Result<Vec<Utterance>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let clip = read_wav(manifest.resolve(&r.path))?;
        let feat = prepare_breath_features(&clip, cfg)?;
        let belt_rel = r
            .belt_path
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("clip `{}` misses a belt path", r.path)))?;
        let belt = read_belt(manifest.resolve(belt_rel))?;
        if belt.len() != feat.n_frames() {
            return Err(Error::Data(format!(
                "clip `{}`: belt holds {} samples but features hold {} frames after padding",
                r.path,
                belt.len(),
                feat.n_frames()
            )));
        }
        out.push(Utterance {
            speaker: r.speaker.clone(),
            seq: super::features::feature_to_sequence(&feat),
            belt,
        });
    }
    Ok(out)
}

/// Mean per-speaker PCC of eval-mode predictions; sequences of the same
/// speaker are concatenated before correlating.
fn devel_pcc(model: &mut BiLstmRegressor<f32>, utts: &[Utterance], rng: &mut Rng) -> Result<f64> {
    let mut per_speaker: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for u in utts {
        let pred = model.forward(&u.seq, Mode::Eval, rng)?;
        let entry = per_speaker.entry(u.speaker.as_str()).or_default();
        entry.0.extend(pred.data().iter().map(|&v| v as f64));
        entry.1.extend_from_slice(&u.belt);
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = per_speaker.into_values().collect();
    bsc_score(&pairs, BscAggregation::MeanPerSpeaker)
}

pub fn train_breath(manifest: &Manifest, cfg: &PipelineConfig) -> Result<BreathTrainOutcome> {
    cfg.validate()?;
    manifest.validate_for_task(Task::Breath)?;
    let base_rng = Rng::new(cfg.seed);

    let train_utts = load_utterances(&manifest.split_records(Split::Train), manifest, cfg)?;
    let devel_utts = load_utterances(&manifest.split_records(Split::Devel), manifest, cfg)?;
    let feat_width = train_utts[0].seq.shape()[1];

    let bilstm_cfg = BiLstmConfig {
        in_dim: feat_width,
        ..cfg.bilstm.clone()
    };
    let mut init_rng = base_rng.split(STREAM_MODEL_INIT);
    let mut model = BiLstmRegressor::<f32>::new(&bilstm_cfg, &mut init_rng)?;
    let mut optimizer = Optimizer::new(&cfg.optim)?;
    let mut shuffle_rng = base_rng.split(STREAM_SHUFFLE);
    let mut dropout_rng = base_rng.split(STREAM_DROPOUT);

    let mut log = TrainLog::default();
    log.initial_devel_metric = devel_pcc(&mut model, &devel_utts, &mut dropout_rng)?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_utts.len()).collect();
    let mut final_pcc = log.initial_devel_metric;

    for epoch in 0..cfg.optim.epochs {
        let lr = plateau_lr(&history, &cfg.optim);
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_losses = 0usize;
        // utterances grouped per optimizer step; gradients accumulate
        // across the group before one update
        for group in order.chunks(cfg.optim.batch_size) {
            model.zero_grad();
            let inv_group = 1.0 / group.len() as f64;
            for &i in group {
                let u = &train_utts[i];
                let pred = model.forward(&u.seq, Mode::Train, &mut dropout_rng)?;
                let target: Vec<f32> = u.belt.iter().map(|&v| v as f32).collect();
                let (loss, grad) = cosine_distance_loss(pred.data(), &target)?;
                if !(0.0..=2.0 + 1e-4).contains(&(loss as f64)) {
                    return Err(Error::NumericFault {
                        context: "train_breath".into(),
                        detail: format!("cosine loss {loss} outside [0, 2]"),
                    });
                }
                let scaled: Vec<f32> = grad.iter().map(|&g| g * inv_group as f32).collect();
                let grad_t = Tensor::from_vec(pred.shape(), scaled)?;
                model.backward(&grad_t)?;
                epoch_loss += loss as f64;
                n_losses += 1;
            }
            model.visit_state(&mut |name, trainable, t| {
                if trainable {
                    optimizer.step_param(&name, lr, t);
                }
            });
            log.optimizer_steps += 1;
            log.max_group_size = log.max_group_size.max(group.len());
        }
        epoch_loss /= n_losses.max(1) as f64;
        history.push(epoch_loss);
        final_pcc = devel_pcc(&mut model, &devel_utts, &mut dropout_rng)?;
        log.entries.push(TrainLogEntry {
            epoch: epoch + 1,
            lr,
            train_loss: epoch_loss,
            devel_metric: final_pcc,
        });
    }

    let params = collect_state(|f| model.visit_state(f))
        .into_iter()
        .map(|(n, s, d)| (format!("main.{n}"), s, d))
        .collect();
    let mut cfg_with_width = cfg.clone();
    cfg_with_width.bilstm.in_dim = feat_width;
    let checkpoint = ModelCheckpoint {
        descriptor: super::make_descriptor("breath_bilstm", 0, &cfg_with_width),
        epoch: cfg.optim.epochs as u32,
        seed: cfg.seed,
        params,
        opt_state: optimizer.export_state(),
    };
    Ok(BreathTrainOutcome {
        checkpoint,
        log,
        final_devel_pcc: final_pcc,
    })
}

pub(crate) fn rebuild_breath_model(ckpt: &ModelCheckpoint) -> Result<(BiLstmRegressor<f32>, PipelineConfig)> {
    let (kind, _, cfg) = super::parse_descriptor(&ckpt.descriptor)?;
    if kind != "breath_bilstm" {
        return Err(Error::Integrity(format!(
            "checkpoint holds a `{kind}` model, expected `breath_bilstm`"
        )));
    }
    let mut entries = Vec::new();
    for (name, shape, data) in &ckpt.params {
        match name.strip_prefix("main.") {
            Some(rest) => entries.push((rest.to_string(), shape.clone(), data.clone())),
            None => return Err(Error::Integrity(format!("unexpected parameter `{name}`"))),
        }
    }
    let mut rng = Rng::new(0);
    let mut model = BiLstmRegressor::<f32>::new(&cfg.bilstm, &mut rng)?;
    restore_state(&entries, |f| model.visit_state(f))?;
    Ok((model, cfg))
}

/// Eval-mode belt predictions for every clip of a split, in manifest order.
pub fn predict_belts(
    ckpt: &ModelCheckpoint,
    manifest: &Manifest,
    split: Split,
) -> Result<Vec<(String, Vec<f64>)>> {
    let (mut model, cfg) = rebuild_breath_model(ckpt)?;
    let records = manifest.split_records(split);
    if records.is_empty() {
        return Err(Error::Validation(format!("split `{}` is empty", split.as_str())));
    }
    let mut rng = Rng::new(0); // eval mode draws nothing
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let clip = read_wav(manifest.resolve(&r.path))?;
        let feat = prepare_breath_features(&clip, &cfg)?;
        let seq = super::features::feature_to_sequence::<f32>(&feat);
        let pred = model.forward(&seq, Mode::Eval, &mut rng)?;
        out.push((
            r.path.clone(),
            pred.data().iter().map(|&v| v as f64).collect(),
        ));
    }
    Ok(out)
}
