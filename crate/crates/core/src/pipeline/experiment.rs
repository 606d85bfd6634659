//! Experiment plans: train a set of named system variants, score each on
//! the development split through the SVM back-end, fuse the starred ones
//! by probability averaging and emit a report. Finished artifacts are
//! reused on rerun, so an aborted experiment resumes where it stopped.

use std::path::{Path, PathBuf};

use crate::error::{in_stage, Error, Result};
use crate::metrics::uar;
use crate::nnet::{AuxFusion, ModelCheckpoint};
use crate::svm::{
    fuse_probabilities, predict_proba, read_embeddings, read_svm_model, smo_train,
    write_embeddings, write_svm_model, EmbeddingSet, SvmOptions,
};
use crate::rng::Rng;

use super::config::PipelineConfig;
use super::manifest::{Manifest, MaskLabel, Split};
use super::mask::{extract_embeddings, train_mask};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSystem {
    pub name: String,
    pub augment: String,
    pub fusion: String,
    pub starred: bool,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub corpus_manifest: PathBuf,
    pub base_config: Option<PathBuf>,
    pub systems: Vec<PlanSystem>,
}

impl Plan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut corpus: Option<PathBuf> = None;
        let mut base_config = None;
        let mut systems: Vec<PlanSystem> = Vec::new();

        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("plan line {}: expected `key = value`", no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "corpus" => corpus = Some(base.join(value)),
                "base_config" => base_config = Some(base.join(value)),
                _ => {
                    let rest = key.strip_prefix("system.").ok_or_else(|| {
                        Error::Validation(format!("plan line {}: unknown key `{key}`", no + 1))
                    })?;
                    let (name, field) = rest.split_once('.').ok_or_else(|| {
                        Error::Validation(format!(
                            "plan line {}: expected system.<name>.<field>",
                            no + 1
                        ))
                    })?;
                    let entry = match systems.iter_mut().find(|s| s.name == name) {
                        Some(e) => e,
                        None => {
                            systems.push(PlanSystem {
                                name: name.to_string(),
                                augment: "none".into(),
                                fusion: "none".into(),
                                starred: false,
                            });
                            systems.last_mut().unwrap()
                        }
                    };
                    match field {
                        "augment" => entry.augment = value.to_string(),
                        "fusion" => entry.fusion = value.to_string(),
                        "starred" => {
                            entry.starred = match value {
                                "true" => true,
                                "false" => false,
                                _ => {
                                    return Err(Error::Validation(format!(
                                        "plan line {}: starred must be true/false",
                                        no + 1
                                    )))
                                }
                            }
                        }
                        other => {
                            return Err(Error::Validation(format!(
                                "plan line {}: unknown system field `{other}`",
                                no + 1
                            )))
                        }
                    }
                }
            }
        }
        let corpus = corpus
            .ok_or_else(|| Error::Validation("plan misses the `corpus` entry".into()))?;
        let corpus_manifest = if corpus.extension().map(|e| e == "csv").unwrap_or(false) {
            corpus
        } else {
            corpus.join("manifest.csv")
        };
        if systems.is_empty() {
            return Err(Error::Validation("plan defines no systems".into()));
        }
        Ok(Plan {
            corpus_manifest,
            base_config,
            systems,
        })
    }
}

/// Apply a plan system's augmentation/fusion variant to a base config.
fn configure_system(base: &PipelineConfig, sys: &PlanSystem, seed: u64) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    match sys.augment.as_str() {
        "none" => {
            cfg.speed_enabled = false;
            cfg.specaugment_enabled = false;
            cfg.erasing_enabled = false;
        }
        "speed" => {
            cfg.speed_enabled = true;
            cfg.specaugment_enabled = false;
            cfg.erasing_enabled = false;
        }
        "speed+specaug" => {
            cfg.speed_enabled = true;
            cfg.specaugment_enabled = true;
            cfg.erasing_enabled = false;
        }
        "speed+erase" => {
            cfg.speed_enabled = true;
            cfg.specaugment_enabled = false;
            cfg.erasing_enabled = true;
        }
        "all" => {
            cfg.speed_enabled = true;
            cfg.specaugment_enabled = true;
            cfg.erasing_enabled = true;
        }
        other => {
            return Err(Error::Validation(format!(
                "system `{}`: unknown augment variant `{other}`",
                sys.name
            )))
        }
    }
    match sys.fusion.as_str() {
        "none" => cfg.resnet.aux_fusion = AuxFusion::None,
        "feat_gender" => {
            cfg.resnet.aux_fusion = AuxFusion::FeatLevel;
            cfg.aux_kind = "gender".into();
        }
        "feat_speaker" => {
            cfg.resnet.aux_fusion = AuxFusion::FeatLevel;
            cfg.aux_kind = "speaker".into();
        }
        "emb_gender" => {
            cfg.resnet.aux_fusion = AuxFusion::EmbLevel;
            cfg.aux_kind = "gender".into();
        }
        "emb_speaker" => {
            cfg.resnet.aux_fusion = AuxFusion::EmbLevel;
            cfg.aux_kind = "speaker".into();
        }
        other => {
            return Err(Error::Validation(format!(
                "system `{}`: unknown fusion variant `{other}`",
                sys.name
            )))
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct SystemResult {
    pub name: String,
    pub augment: String,
    pub fusion: String,
    pub starred: bool,
    pub devel_uar: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub systems: Vec<SystemResult>,
    pub fused_members: Vec<String>,
    pub fused_uar: f64,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,augment,fusion,starred,devel_uar\n");
        for s in &self.systems {
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                s.name, s.augment, s.fusion, s.starred, s.devel_uar
            ));
        }
        out.push_str(&format!(
            "fused({}),-,-,-,{:.4}\n",
            self.fused_members.join("+"),
            self.fused_uar
        ));
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| System | Augmentation | Fusion | Devel UAR |\n|---|---|---|---|\n");
        for s in &self.systems {
            let star = if s.starred { " (*)" } else { "" };
            out.push_str(&format!(
                "| {}{star} | {} | {} | {:.4} |\n",
                s.name, s.augment, s.fusion, s.devel_uar
            ));
        }
        out.push_str(&format!(
            "| fused ({}) | - | - | {:.4} |\n",
            self.fused_members.join("+"),
            self.fused_uar
        ));
        out
    }
}

fn prob_csv(ids: &[String], probs: &[f64]) -> String {
    let mut out = String::from("path,probability,decision\n");
    for (id, &p) in ids.iter().zip(probs.iter()) {
        let decision = if p >= 0.5 { MaskLabel::Mask } else { MaskLabel::Clear };
        out.push_str(&format!("{id},{p:.6},{}\n", decision.as_str()));
    }
    out
}

fn parse_prob_csv(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if no == 0 {
            if line != "path,probability,decision" {
                return Err(Error::Validation(format!("bad prediction header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Validation(format!("bad prediction line `{line}`")));
        }
        ids.push(fields[0].to_string());
        probs.push(fields[1].parse::<f64>().map_err(|_| {
            Error::Validation(format!("bad probability `{}` on line {}", fields[1], no + 1))
        })?);
    }
    Ok((ids, probs))
}

fn uar_from_probs(manifest: &Manifest, ids: &[String], probs: &[f64]) -> Result<f64> {
    let mut truth = Vec::with_capacity(ids.len());
    let mut pred = Vec::with_capacity(ids.len());
    for (id, &p) in ids.iter().zip(probs.iter()) {
        let record = manifest
            .records()
            .iter()
            .find(|r| &r.path == id)
            .ok_or_else(|| Error::Data(format!("prediction for unknown clip `{id}`")))?;
        let label = record
            .label
            .ok_or_else(|| Error::Data(format!("clip `{id}` has no truth label")))?;
        truth.push(label.index());
        pred.push(if p >= 0.5 { 1 } else { 0 });
    }
    uar(&truth, &pred, 2)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn svm_predictions(model: &crate::svm::SvmModel, set: &EmbeddingSet) -> Result<Vec<f64>> {
    (0..set.len()).map(|i| predict_proba(model, set.row(i))).collect()
}

/// Run (or resume) every system of a plan, then fuse the starred ones.
pub fn run_experiment(plan: &Plan, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref();
    let manifest = in_stage("load-manifest", Manifest::load(&plan.corpus_manifest))?;
    let base_cfg = match &plan.base_config {
        Some(p) => in_stage("load-config", PipelineConfig::load(p))?,
        None => PipelineConfig::default(),
    };
    let seed_root = Rng::new(base_cfg.seed);

    let mut results = Vec::new();
    let mut devel_probs: Vec<(String, Vec<String>, Vec<f64>)> = Vec::new();

    for (idx, sys) in plan.systems.iter().enumerate() {
        let sys_seed = seed_root.split(1000 + idx as u64).seed();
        let cfg = configure_system(&base_cfg, sys, sys_seed)?;
        let sys_dir = out_dir.join("systems").join(&sys.name);
        std::fs::create_dir_all(&sys_dir).map_err(|source| Error::Io {
            path: sys_dir.clone(),
            source,
        })?;

        let ckpt_path = sys_dir.join("checkpoint.pckp");
        let stage_name = format!("train[{}]", sys.name);
        let ckpt = if ckpt_path.exists() {
            in_stage(&stage_name, ModelCheckpoint::load(&ckpt_path))?
        } else {
            let outcome = in_stage(&stage_name, train_mask(&manifest, &cfg))?;
            in_stage(&stage_name, outcome.checkpoint.save(&ckpt_path))?;
            in_stage(
                &stage_name,
                write_text(&sys_dir.join("train_log.txt"), &outcome.log.to_text()),
            )?;
            outcome.checkpoint
        };

        let stage_name = format!("embed[{}]", sys.name);
        let train_emb_path = sys_dir.join("train.pemb");
        let train_emb = if train_emb_path.exists() {
            in_stage(&stage_name, read_embeddings(&train_emb_path))?
        } else {
            let set = in_stage(
                &stage_name,
                extract_embeddings(&ckpt, &manifest, Split::Train, &sys.name),
            )?;
            in_stage(&stage_name, write_embeddings(&train_emb_path, &set))?;
            set
        };
        let devel_emb_path = sys_dir.join("devel.pemb");
        let devel_emb = if devel_emb_path.exists() {
            in_stage(&stage_name, read_embeddings(&devel_emb_path))?
        } else {
            let set = in_stage(
                &stage_name,
                extract_embeddings(&ckpt, &manifest, Split::Devel, &sys.name),
            )?;
            in_stage(&stage_name, write_embeddings(&devel_emb_path, &set))?;
            set
        };

        let stage_name = format!("svm[{}]", sys.name);
        let svm_path = sys_dir.join("model.psvm");
        let svm_model = if svm_path.exists() {
            in_stage(&stage_name, read_svm_model(&svm_path))?
        } else {
            let opts = SvmOptions {
                c: cfg.svm.c,
                gamma: cfg.svm.gamma,
                tol: cfg.svm.tol,
                max_passes: cfg.svm.max_passes,
                seed: cfg.seed,
            };
            let (model, _diag) = in_stage(&stage_name, smo_train(&train_emb, &opts))?;
            in_stage(&stage_name, write_svm_model(&svm_path, &model))?;
            model
        };

        let stage_name = format!("predict[{}]", sys.name);
        let pred_path = sys_dir.join("devel_pred.csv");
        let (ids, probs) = if pred_path.exists() {
            let text = std::fs::read_to_string(&pred_path).map_err(|source| Error::Io {
                path: pred_path.clone(),
                source,
            })?;
            in_stage(&stage_name, parse_prob_csv(&text))?
        } else {
            let probs = in_stage(&stage_name, svm_predictions(&svm_model, &devel_emb))?;
            in_stage(
                &stage_name,
                write_text(&pred_path, &prob_csv(&devel_emb.ids, &probs)),
            )?;
            (devel_emb.ids.clone(), probs)
        };

        let devel_uar = in_stage(&format!("eval[{}]", sys.name), uar_from_probs(&manifest, &ids, &probs))?;
        results.push(SystemResult {
            name: sys.name.clone(),
            augment: sys.augment.clone(),
            fusion: sys.fusion.clone(),
            starred: sys.starred,
            devel_uar,
        });
        devel_probs.push((sys.name.clone(), ids, probs));
    }

    // fuse starred systems (all systems when none is starred)
    let starred: Vec<usize> = {
        let marked: Vec<usize> = plan
            .systems
            .iter()
            .enumerate()
            .filter(|(_, s)| s.starred)
            .map(|(i, _)| i)
            .collect();
        if marked.is_empty() {
            (0..plan.systems.len()).collect()
        } else {
            marked
        }
    };
    let ref_ids = &devel_probs[starred[0]].1;
    for &i in &starred[1..] {
        if &devel_probs[i].1 != ref_ids {
            return Err(Error::Data(format!(
                "system `{}` scored different clips than `{}`; cannot fuse",
                devel_probs[i].0, devel_probs[starred[0]].0
            )));
        }
    }
    let member_probs: Vec<Vec<f64>> = starred.iter().map(|&i| devel_probs[i].2.clone()).collect();
    let fused = in_stage("fuse", fuse_probabilities(&member_probs))?;
    let fused_uar = in_stage("eval[fused]", uar_from_probs(&manifest, ref_ids, &fused))?;
    let fused_members: Vec<String> = starred.iter().map(|&i| devel_probs[i].0.clone()).collect();
    write_text(&out_dir.join("fused_pred.csv"), &prob_csv(ref_ids, &fused))?;

    let report = ExperimentReport {
        systems: results,
        fused_members,
        fused_uar,
    };
    write_text(&out_dir.join("report.csv"), &report.to_csv())?;
    write_text(&out_dir.join("report.md"), &report.to_markdown())?;
    Ok(report)
}
