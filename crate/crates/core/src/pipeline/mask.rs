//! Mask-detection flow: speed-perturbed training pool, on-the-fly
//! SpecAugment / random erasing, cross-entropy training of the embedding
//! classifier, optional gender/speaker auxiliary fusion, and embedding
//! extraction for the SVM back-end.

use std::collections::BTreeMap;

use crate::augment::{crop_or_pad, random_erase, spec_augment, speed_perturb_set, CropMode, SpeedPerturbConfig};
use crate::dsp::{read_wav, FeatureMatrix};
use crate::error::{Error, Result};
use crate::metrics::uar;
use crate::nnet::{
    collect_state, cross_entropy_loss, plateau_lr, restore_state, Mode, ModelCheckpoint, Optimizer,
    OptimizerConfig, OptimizerKind, ResNetEmbed, StateEntry, Tensor,
};
use crate::rng::Rng;
use crate::svm::EmbeddingSet;

use super::config::PipelineConfig;
use super::features::{feature_to_tensor, prepare_clip_features, AugmentAudit};
use super::manifest::{Gender, Manifest, ManifestRecord, Split, Task};
use super::{TrainLog, TrainLogEntry};
use crate::nnet::AuxFusion;

fn fusion_enabled(cfg: &PipelineConfig) -> bool {
    cfg.resnet.aux_fusion != AuxFusion::None
}

// rng stream ids
const STREAM_MODEL_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_SPECAUG: u64 = 2;
const STREAM_ERASE: u64 = 3;
const STREAM_CROP: u64 = 4;
const STREAM_AUX_INIT: u64 = 5;
const STREAM_AUX_TRAIN: u64 = 6;

#[derive(Debug)]
pub struct MaskTrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
    pub final_devel_uar: f64,
}

struct PoolItem {
    feat: FeatureMatrix,
    label: usize,
    gender: usize,
    speaker: usize,
    aux: Option<Vec<f32>>,
}

fn speaker_index(manifest: &Manifest) -> BTreeMap<String, usize> {
    let mut speakers: Vec<String> = manifest
        .split_records(Split::Train)
        .iter()
        .map(|r| r.speaker.clone())
        .collect();
    speakers.sort();
    speakers.dedup();
    speakers.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
}

fn load_pool(manifest: &Manifest, cfg: &PipelineConfig) -> Result<Vec<PoolItem>> {
    let speakers = speaker_index(manifest);
    let speed_cfg = SpeedPerturbConfig {
        factors: cfg.speed_factors.clone(),
        target_frames: cfg.target_frames,
    };
    let mut pool = Vec::new();
    for r in manifest.split_records(Split::Train) {
        let clip = read_wav(manifest.resolve(&r.path))?;
        let variants = if cfg.speed_enabled {
            speed_perturb_set(&clip, &speed_cfg)?
        } else {
            vec![clip]
        };
        let label = r.label.expect("validated").index();
        for v in variants {
            pool.push(PoolItem {
                feat: prepare_clip_features(&v, &cfg.dsp)?,
                label,
                gender: r.gender.index(),
                speaker: speakers[&r.speaker],
                aux: None,
            });
        }
    }
    Ok(pool)
}

fn eval_features(records: &[&ManifestRecord], manifest: &Manifest, cfg: &PipelineConfig) -> Result<Vec<(FeatureMatrix, usize)>> {
    records
        .iter()
        .map(|r| {
            let clip = read_wav(manifest.resolve(&r.path))?;
            Ok((
                prepare_clip_features(&clip, &cfg.dsp)?,
                r.label.map(|l| l.index()).unwrap_or(0),
            ))
        })
        .collect()
}

/// Centered-crop eval tensor for one feature matrix.
fn eval_tensor(feat: &FeatureMatrix, target: usize) -> Result<Tensor<f32>> {
    let mut no_rng = Rng::new(0); // eval crop is deterministic, rng unused
    let cropped = crop_or_pad(feat, target, &mut no_rng, CropMode::Eval)?;
    Ok(feature_to_tensor(&cropped))
}

fn stack_batch(items: &[Tensor<f32>]) -> Tensor<f32> {
    let shape = items[0].shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[items.len(), c, h, w], data).unwrap()
}

fn stack_aux(rows: &[&[f32]]) -> Tensor<f32> {
    let dim = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::from_vec(&[rows.len(), dim], data).unwrap()
}

/// Train the small frozen classifier whose penultimate activations act as
/// gender- or speaker-aware auxiliary features.
fn train_aux_extractor(
    pool: &[PoolItem],
    cfg: &PipelineConfig,
    aux_classes: usize,
    base_rng: &Rng,
) -> Result<ResNetEmbed<f32>> {
    let aux_cfg = cfg.aux_model_config(aux_classes);
    let mut init_rng = base_rng.split(STREAM_AUX_INIT);
    let mut model = ResNetEmbed::<f32>::new(&aux_cfg, &mut init_rng)?;
    let mut train_rng = base_rng.split(STREAM_AUX_TRAIN);

    let opt_cfg = OptimizerConfig {
        kind: OptimizerKind::SgdNesterov,
        epochs: cfg.aux_epochs,
        ..OptimizerConfig::sgd_default()
    };
    let mut optimizer = Optimizer::new(&opt_cfg)?;

    let labels_of = |item: &PoolItem| -> usize {
        if cfg.aux_kind == "gender" {
            item.gender
        } else {
            item.speaker
        }
    };

    let mut order: Vec<usize> = (0..pool.len()).collect();
    for _epoch in 0..cfg.aux_epochs {
        train_rng.shuffle(&mut order);
        for chunk in order.chunks(opt_cfg.batch_size) {
            let mut tensors = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let cropped =
                    crop_or_pad(&pool[i].feat, cfg.target_frames, &mut train_rng, CropMode::Train)?;
                tensors.push(feature_to_tensor::<f32>(&cropped));
                labels.push(labels_of(&pool[i]));
            }
            let x = stack_batch(&tensors);
            let (logits, _) = model.forward(&x, None, Mode::Train)?;
            let (_, grad) = cross_entropy_loss(&logits, &labels)?;
            model.zero_grad();
            model.backward(&grad)?;
            model.visit_state(&mut |name, trainable, t| {
                if trainable {
                    optimizer.step_param(&name, opt_cfg.lr, t);
                }
            });
        }
    }
    Ok(model)
}

/// Frozen-extractor embedding of one feature matrix (eval mode, centered
/// crop).
fn aux_embedding(model: &mut ResNetEmbed<f32>, feat: &FeatureMatrix, target: usize) -> Result<Vec<f32>> {
    let x = eval_tensor(feat, target)?;
    let batch = stack_batch(&[x]);
    let (_, emb) = model.forward(&batch, None, Mode::Eval)?;
    Ok(emb.data().to_vec())
}

fn devel_uar(
    model: &mut ResNetEmbed<f32>,
    feats: &[(FeatureMatrix, usize)],
    aux_rows: Option<&Vec<Vec<f32>>>,
    cfg: &PipelineConfig,
) -> Result<f64> {
    let mut truth = Vec::with_capacity(feats.len());
    let mut pred = Vec::with_capacity(feats.len());
    let batch = cfg.optim.batch_size.max(1);
    let mut idx = 0;
    while idx < feats.len() {
        let hi = (idx + batch).min(feats.len());
        let mut tensors = Vec::with_capacity(hi - idx);
        for (feat, _) in &feats[idx..hi] {
            tensors.push(eval_tensor(feat, cfg.target_frames)?);
        }
        let x = stack_batch(&tensors);
        let aux_t = aux_rows.map(|rows| {
            let slice: Vec<&[f32]> = (idx..hi).map(|i| rows[i].as_slice()).collect();
            stack_aux(&slice)
        });
        let (logits, _) = model.forward(&x, aux_t.as_ref(), Mode::Eval)?;
        let k = logits.shape()[1];
        for (row, (_, label)) in (idx..hi).enumerate().map(|(r, i)| (r, &feats[i])) {
            let slice = &logits.data()[row * k..(row + 1) * k];
            let arg = (0..k)
                .max_by(|&a, &b| slice[a].partial_cmp(&slice[b]).unwrap())
                .unwrap();
            truth.push(*label);
            pred.push(arg);
        }
        idx = hi;
    }
    uar(&truth, &pred, cfg.resnet.n_classes)
}

pub fn train_mask(manifest: &Manifest, cfg: &PipelineConfig) -> Result<MaskTrainOutcome> {
    cfg.validate()?;
    manifest.validate_for_task(Task::Mask)?;
    let base_rng = Rng::new(cfg.seed);

    if fusion_enabled(cfg) && cfg.aux_kind == "gender" {
        let unknown = manifest
            .records()
            .iter()
            .any(|r| r.split == Split::Train && r.gender == Gender::Unknown);
        if unknown {
            return Err(Error::Validation(
                "gender-aware fusion needs f/m gender labels on every training clip".into(),
            ));
        }
    }

    let mut audit = AugmentAudit::default();
    let mut pool = load_pool(manifest, cfg)?;
    let devel_records = manifest.split_records(Split::Devel);
    let devel_feats = eval_features(&devel_records, manifest, cfg)?;

    // auxiliary extractor, trained first and then frozen
    let aux_classes = match (fusion_enabled(cfg), cfg.aux_kind.as_str()) {
        (false, _) => 0,
        (true, "gender") => 2,
        (true, _) => speaker_index(manifest).len(),
    };
    let mut aux_model = if fusion_enabled(cfg) {
        let mut m = train_aux_extractor(&pool, cfg, aux_classes.max(2), &base_rng)?;
        for item in pool.iter_mut() {
            item.aux = Some(aux_embedding(&mut m, &item.feat, cfg.target_frames)?);
        }
        Some(m)
    } else {
        None
    };
    let devel_aux: Option<Vec<Vec<f32>>> = match aux_model.as_mut() {
        Some(m) => Some(
            devel_feats
                .iter()
                .map(|(f, _)| aux_embedding(m, f, cfg.target_frames))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };

    // main classifier
    let mut init_rng = base_rng.split(STREAM_MODEL_INIT);
    let mut model = ResNetEmbed::<f32>::new(&cfg.resnet, &mut init_rng)?;
    let mut optimizer = Optimizer::new(&cfg.optim)?;
    let mut shuffle_rng = base_rng.split(STREAM_SHUFFLE);
    let mut spec_rng = base_rng.split(STREAM_SPECAUG);
    let mut erase_rng = base_rng.split(STREAM_ERASE);
    let mut crop_rng = base_rng.split(STREAM_CROP);

    let mut log = TrainLog::default();
    log.initial_devel_metric = devel_uar(&mut model, &devel_feats, devel_aux.as_ref(), cfg)?;
    let mut history: Vec<f64> = Vec::new();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut final_uar = log.initial_devel_metric;

    for epoch in 0..cfg.optim.epochs {
        let lr = plateau_lr(&history, &cfg.optim);
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.optim.batch_size) {
            let mut tensors = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            let mut aux_slices: Vec<&[f32]> = Vec::new();
            for &i in chunk {
                let mut feat = pool[i].feat.clone();
                if cfg.specaugment_enabled {
                    feat = spec_augment(&feat, &cfg.specaugment, &mut spec_rng)?;
                    audit.record(Split::Train, "specaugment");
                }
                if cfg.erasing_enabled {
                    feat = random_erase(&feat, &cfg.erasing, &mut erase_rng)?;
                    audit.record(Split::Train, "erasing");
                }
                let cropped = crop_or_pad(&feat, cfg.target_frames, &mut crop_rng, CropMode::Train)?;
                tensors.push(feature_to_tensor::<f32>(&cropped));
                labels.push(pool[i].label);
                if let Some(aux) = &pool[i].aux {
                    aux_slices.push(aux);
                }
            }
            let x = stack_batch(&tensors);
            let aux_t = if aux_slices.is_empty() {
                None
            } else {
                Some(stack_aux(&aux_slices))
            };
            let (logits, _) = model.forward(&x, aux_t.as_ref(), Mode::Train)?;
            let (loss, grad) = cross_entropy_loss(&logits, &labels)?;
            model.zero_grad();
            model.backward(&grad)?;
            model.visit_state(&mut |name, trainable, t| {
                if trainable {
                    optimizer.step_param(&name, lr, t);
                }
            });
            log.optimizer_steps += 1;
            log.max_group_size = log.max_group_size.max(chunk.len());
            epoch_loss += loss as f64;
            batches += 1;
        }
        epoch_loss /= batches.max(1) as f64;
        history.push(epoch_loss);
        final_uar = devel_uar(&mut model, &devel_feats, devel_aux.as_ref(), cfg)?;
        log.entries.push(TrainLogEntry {
            epoch: epoch + 1,
            lr,
            train_loss: epoch_loss,
            devel_metric: final_uar,
        });
    }
    log.audit = audit;

    // self-contained checkpoint: main model plus the frozen aux extractor
    let mut params: Vec<StateEntry> = collect_state(|f| model.visit_state(f))
        .into_iter()
        .map(|(n, s, d)| (format!("main.{n}"), s, d))
        .collect();
    if let Some(aux) = aux_model.as_mut() {
        params.extend(
            collect_state(|f| aux.visit_state(f))
                .into_iter()
                .map(|(n, s, d)| (format!("aux.{n}"), s, d)),
        );
    }
    let checkpoint = ModelCheckpoint {
        descriptor: super::make_descriptor("mask_resnet", aux_classes, cfg),
        epoch: cfg.optim.epochs as u32,
        seed: cfg.seed,
        params,
        opt_state: optimizer.export_state(),
    };
    Ok(MaskTrainOutcome {
        checkpoint,
        log,
        final_devel_uar: final_uar,
    })
}

/// Rebuild the models a mask checkpoint describes and restore their
/// parameters. Architecture mismatches surface as integrity errors.
pub(crate) fn rebuild_mask_system(
    ckpt: &ModelCheckpoint,
) -> Result<(ResNetEmbed<f32>, Option<ResNetEmbed<f32>>, PipelineConfig)> {
    let (kind, aux_classes, cfg) = super::parse_descriptor(&ckpt.descriptor)?;
    if kind != "mask_resnet" {
        return Err(Error::Integrity(format!(
            "checkpoint holds a `{kind}` model, expected `mask_resnet`"
        )));
    }
    let mut main_entries = Vec::new();
    let mut aux_entries = Vec::new();
    for (name, shape, data) in &ckpt.params {
        if let Some(rest) = name.strip_prefix("main.") {
            main_entries.push((rest.to_string(), shape.clone(), data.clone()));
        } else if let Some(rest) = name.strip_prefix("aux.") {
            aux_entries.push((rest.to_string(), shape.clone(), data.clone()));
        } else {
            return Err(Error::Integrity(format!("unexpected parameter `{name}`")));
        }
    }
    let mut rng = Rng::new(0);
    let mut model = ResNetEmbed::<f32>::new(&cfg.resnet, &mut rng)?;
    restore_state(&main_entries, |f| model.visit_state(f))?;
    let aux_model = if fusion_enabled(&cfg) {
        let aux_cfg = cfg.aux_model_config(aux_classes.max(2));
        let mut aux = ResNetEmbed::<f32>::new(&aux_cfg, &mut rng)?;
        restore_state(&aux_entries, |f| aux.visit_state(f))?;
        Some(aux)
    } else if !aux_entries.is_empty() {
        return Err(Error::Integrity(
            "checkpoint carries aux parameters but fusion is disabled".into(),
        ));
    } else {
        None
    };
    Ok((model, aux_model, cfg))
}

/// Eval-mode embeddings straight from prepared feature matrices, bypassing
/// audio IO; used for robustness measurements on augmented features.
pub fn extract_embeddings_from_features(
    ckpt: &ModelCheckpoint,
    feats: &[(String, FeatureMatrix)],
    source: &str,
) -> Result<EmbeddingSet> {
    let (mut model, mut aux_model, cfg) = rebuild_mask_system(ckpt)?;
    let mut set = EmbeddingSet::new(source, cfg.resnet.embed_dim);
    for (id, feat) in feats {
        let aux_t = match aux_model.as_mut() {
            Some(aux) => {
                let row = aux_embedding(aux, feat, cfg.target_frames)?;
                Some(stack_aux(&[row.as_slice()]))
            }
            None => None,
        };
        let x = stack_batch(&[eval_tensor(feat, cfg.target_frames)?]);
        let (_, emb) = model.forward(&x, aux_t.as_ref(), Mode::Eval)?;
        let vec: Vec<f64> = emb.data().iter().map(|&v| v as f64).collect();
        set.push(id.clone(), crate::svm::UNLABELED, &vec)?;
    }
    Ok(set)
}

/// Eval-mode embeddings for every clip of a split, in manifest order.
pub fn extract_embeddings(
    ckpt: &ModelCheckpoint,
    manifest: &Manifest,
    split: Split,
    source: &str,
) -> Result<EmbeddingSet> {
    let (mut model, mut aux_model, cfg) = rebuild_mask_system(ckpt)?;
    let records = manifest.split_records(split);
    if records.is_empty() {
        return Err(Error::Validation(format!("split `{}` is empty", split.as_str())));
    }
    let mut set = EmbeddingSet::new(source, cfg.resnet.embed_dim);
    let batch = cfg.optim.batch_size.max(1);
    let mut idx = 0;
    while idx < records.len() {
        let hi = (idx + batch).min(records.len());
        let mut tensors = Vec::with_capacity(hi - idx);
        let mut aux_rows: Vec<Vec<f32>> = Vec::new();
        for r in &records[idx..hi] {
            let clip = read_wav(manifest.resolve(&r.path))?;
            let feat = prepare_clip_features(&clip, &cfg.dsp)?;
            if let Some(aux) = aux_model.as_mut() {
                aux_rows.push(aux_embedding(aux, &feat, cfg.target_frames)?);
            }
            tensors.push(eval_tensor(&feat, cfg.target_frames)?);
        }
        let x = stack_batch(&tensors);
        let aux_t = if aux_rows.is_empty() {
            None
        } else {
            let slices: Vec<&[f32]> = aux_rows.iter().map(|r| r.as_slice()).collect();
            Some(stack_aux(&slices))
        };
        let (_, emb) = model.forward(&x, aux_t.as_ref(), Mode::Eval)?;
        let d = cfg.resnet.embed_dim;
        for (row, r) in records[idx..hi].iter().enumerate() {
            let vec: Vec<f64> = emb.data()[row * d..(row + 1) * d]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let label = r.label.map(|l| l.index() as u8).unwrap_or(crate::svm::UNLABELED);
            set.push(r.path.clone(), label, &vec)?;
        }
        idx = hi;
    }
    Ok(set)
}
