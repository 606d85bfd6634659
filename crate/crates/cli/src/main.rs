//! Command-line front-end for the mask-detection and breath-monitoring
//! pipelines. Exit codes: 0 success, 2 validation error, 3 data error,
//! 4 numeric fault.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use paraforge_core::augment::{random_erase, spec_augment, speed_perturb_set, SpeedPerturbConfig};
use paraforge_core::dsp::{log_fbank, read_features, read_wav, write_features, write_wav};
use paraforge_core::error::Error;
use paraforge_core::metrics::{bsc_score, uar, BscAggregation, ConfusionMatrix, EvalReport};
use paraforge_core::nnet::ModelCheckpoint;
use paraforge_core::pipeline::{
    extract_embeddings, predict_belts, read_belt, run_experiment, synth_breath_corpus,
    synth_mask_corpus, train_breath, train_mask, write_belt, Manifest, MaskLabel, PipelineConfig,
    Plan, Split, SynthSpec,
};
use paraforge_core::svm::{
    fuse_probabilities, predict_proba, read_embeddings, read_svm_model, smo_train,
    write_embeddings, write_svm_model, SvmOptions,
};
use paraforge_core::Result;

#[derive(Parser)]
#[command(name = "paraforge", version, about = "Mask-detection and breath-monitoring toolkit")]
struct Cli {
    /// Master seed; overrides the seed from config or spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration file (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-file fan-out commands.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Mask,
    Breath,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Specaug,
    Erase,
    Speed,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Devel,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Devel => Split::Devel,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Mean,
    Pooled,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (audio, belts, manifest).
    SynthData {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Synthesis spec file (synth.* keys); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract log-Fbank features from a WAV file or directory.
    Fbank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one augmentation scheme to a directory of inputs.
    Augment {
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the mask-detection embedding classifier.
    TrainMask {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training log path (default: checkpoint path + .log).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the breath-monitoring Bi-LSTM regressor.
    TrainBreath {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for devel-split belt predictions (default:
        /// <out dir>/devel_pred).
        #[arg(long)]
        pred_dir: Option<PathBuf>,
    },
    /// Extract embeddings from a trained mask checkpoint.
    ExtractEmbed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Source-system identifier stored in the embedding file.
        #[arg(long, default_value = "paraforge")]
        source: String,
    },
    /// Train the RBF-SVM back-end on labeled embeddings.
    SvmTrain {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score embeddings with a trained SVM model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average per-system probability CSVs.
    Fuse {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the manifest truth.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Manifest CSV holding the truth.
        #[arg(long)]
        truth: PathBuf,
        /// Prediction CSV (mask) or directory of .pblt files (breath).
        #[arg(long)]
        pred: PathBuf,
        /// Breath aggregation across speakers.
        #[arg(long, value_enum, default_value = "mean")]
        aggregation: AggArg,
        /// Write the report as CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, score and fuse every system of an experiment plan.
    RunExperiment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match cli_config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Sorted files with one extension under a directory, or the file itself.
fn gather_inputs(input: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    let entries = std::fs::read_dir(input).map_err(io_err(input))?;
    for entry in entries {
        let entry = entry.map_err(io_err(input))?;
        let path = entry.path();
        if path.extension().map(|e| e == ext).unwrap_or(false) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!(
            "no .{ext} files under {}",
            input.display()
        )));
    }
    Ok(files)
}

/// Run a per-file job with up to `jobs` workers. Outputs depend only on
/// each file and its index, so parallel execution stays deterministic.
fn for_each_file<F>(files: &[PathBuf], jobs: usize, job: F) -> Result<()>
where
    F: Fn(usize, &Path) -> Result<()> + Sync,
{
    if jobs <= 1 || files.len() <= 1 {
        for (i, f) in files.iter().enumerate() {
            job(i, f)?;
        }
        return Ok(());
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let failure = std::sync::Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(files.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= files.len() {
                    return;
                }
                if let Err(e) = job(i, &files[i]) {
                    *failure.lock().unwrap() = Some(e);
                    return;
                }
            });
        }
    });
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_synth(task: TaskArg, spec: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => match task {
            TaskArg::Mask => SynthSpec::default(),
            TaskArg::Breath => SynthSpec {
                n_speakers: 6,
                clips_per_speaker: 1,
                ..Default::default()
            },
        },
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = match task {
        TaskArg::Mask => synth_mask_corpus(&spec, &out)?,
        TaskArg::Breath => synth_breath_corpus(&spec, &out)?,
    };
    println!(
        "wrote {} clips under {}",
        manifest.records().len(),
        out.display()
    );
    Ok(())
}

fn cmd_fbank(input: PathBuf, out: PathBuf, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let files = gather_inputs(&input, "wav")?;
    for_each_file(&files, jobs, |_, path| {
        let clip = read_wav(path)?;
        let feat = log_fbank(&clip, &cfg.dsp)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        write_features(out.join(format!("{stem}.pfea")), &feat)
    })?;
    println!("extracted features for {} files into {}", files.len(), out.display());
    Ok(())
}

fn cmd_augment(
    scheme: SchemeArg,
    input: PathBuf,
    out: PathBuf,
    cfg: &PipelineConfig,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let master = paraforge_core::Rng::new(seed);
    match scheme {
        SchemeArg::Speed => {
            let files = gather_inputs(&input, "wav")?;
            let speed_cfg = SpeedPerturbConfig {
                factors: cfg.speed_factors.clone(),
                target_frames: cfg.target_frames,
            };
            for_each_file(&files, jobs, |_, path| {
                let clip = read_wav(path)?;
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
                for (clip_out, factor) in
                    speed_perturb_set(&clip, &speed_cfg)?.iter().zip(&speed_cfg.factors)
                {
                    write_wav(out.join(format!("{stem}_sp{factor}.wav")), clip_out)?;
                }
                Ok(())
            })?;
            println!("speed-perturbed {} files into {}", files.len(), out.display());
        }
        SchemeArg::Specaug | SchemeArg::Erase => {
            let files = gather_inputs(&input, "pfea")?;
            for_each_file(&files, jobs, |i, path| {
                let feat = read_features(path)?;
                // per-file stream keyed by sorted position: stable under --jobs
                let mut rng = master.split(i as u64);
                let augmented = match scheme {
                    SchemeArg::Specaug => spec_augment(&feat, &cfg.specaugment, &mut rng)?,
                    _ => random_erase(&feat, &cfg.erasing, &mut rng)?,
                };
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                write_features(out.join(format!("{stem}.pfea")), &augmented)
            })?;
            println!("augmented {} feature files into {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log");
    PathBuf::from(p)
}

fn cmd_train_mask(manifest: PathBuf, out: PathBuf, log: Option<PathBuf>, cfg: &PipelineConfig) -> Result<()> {
    let manifest = Manifest::load(&manifest)?;
    let outcome = train_mask(&manifest, cfg)?;
    outcome.checkpoint.save(&out)?;
    let log_path = log.unwrap_or_else(|| default_log_path(&out));
    std::fs::write(&log_path, outcome.log.to_text()).map_err(io_err(&log_path))?;
    println!(
        "trained mask model: devel UAR {:.4}; checkpoint {}",
        outcome.final_devel_uar,
        out.display()
    );
    Ok(())
}

/// A clip's prediction file name: the manifest path with separators
/// flattened to underscores and a .pblt extension.
fn belt_pred_name(clip_rel: &str) -> String {
    let flat = clip_rel.replace(['/', '\\'], "_");
    match flat.rsplit_once('.') {
        Some((stem, _)) => format!("{stem}.pblt"),
        None => format!("{flat}.pblt"),
    }
}

fn cmd_train_breath(
    manifest_path: PathBuf,
    out: PathBuf,
    log: Option<PathBuf>,
    pred_dir: Option<PathBuf>,
    cfg: &PipelineConfig,
) -> Result<()> {
    let manifest = Manifest::load(&manifest_path)?;
    let outcome = train_breath(&manifest, cfg)?;
    outcome.checkpoint.save(&out)?;
    let log_path = log.unwrap_or_else(|| default_log_path(&out));
    std::fs::write(&log_path, outcome.log.to_text()).map_err(io_err(&log_path))?;

    let pred_dir =
        pred_dir.unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).join("devel_pred"));
    std::fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;
    for (id, belt) in predict_belts(&outcome.checkpoint, &manifest, Split::Devel)? {
        write_belt(pred_dir.join(belt_pred_name(&id)), &belt)?;
    }
    println!(
        "trained breath model: devel PCC {:.4}; checkpoint {}; predictions {}",
        outcome.final_devel_pcc,
        out.display(),
        pred_dir.display()
    );
    Ok(())
}

fn cmd_extract(checkpoint: PathBuf, manifest: PathBuf, split: Split, out: PathBuf, source: String) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&checkpoint)?;
    let manifest = Manifest::load(&manifest)?;
    let set = extract_embeddings(&ckpt, &manifest, split, &source)?;
    write_embeddings(&out, &set)?;
    println!("wrote {} embeddings to {}", set.len(), out.display());
    Ok(())
}

fn cmd_svm_train(embeddings: PathBuf, out: PathBuf, cfg: &PipelineConfig) -> Result<()> {
    let set = read_embeddings(&embeddings)?;
    let opts = SvmOptions {
        c: cfg.svm.c,
        gamma: cfg.svm.gamma,
        tol: cfg.svm.tol,
        max_passes: cfg.svm.max_passes,
        seed: cfg.seed,
    };
    let (model, diag) = smo_train(&set, &opts)?;
    if !diag.converged {
        eprintln!(
            "warning: SMO stopped after {} iterations with KKT violation {:.2e} (tolerance {:.2e})",
            diag.iterations, diag.final_violation, opts.tol
        );
    }
    write_svm_model(&out, &model)?;
    println!(
        "trained SVM: {} support vectors, training accuracy {:.4}; model {}",
        model.n_support(),
        diag.training_accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_predict(model: PathBuf, embeddings: PathBuf, out: PathBuf) -> Result<()> {
    let model = read_svm_model(&model)?;
    let set = read_embeddings(&embeddings)?;
    let mut text = String::from("path,probability,decision\n");
    for i in 0..set.len() {
        let p = predict_proba(&model, set.row(i))?;
        let decision = if p >= 0.5 { MaskLabel::Mask } else { MaskLabel::Clear };
        text.push_str(&format!("{},{p:.6},{}\n", set.ids[i], decision.as_str()));
    }
    std::fs::write(&out, text).map_err(io_err(&out))?;
    println!("scored {} embeddings into {}", set.len(), out.display());
    Ok(())
}

fn read_prob_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if no == 0 {
            if line != "path,probability,decision" {
                return Err(Error::Validation(format!(
                    "{}: bad prediction header `{line}`",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Validation(format!(
                "{}: bad prediction line `{line}`",
                path.display()
            )));
        }
        ids.push(fields[0].to_string());
        probs.push(fields[1].parse::<f64>().map_err(|_| {
            Error::Validation(format!("{}: bad probability on line {}", path.display(), no + 1))
        })?);
    }
    Ok((ids, probs))
}

fn cmd_fuse(inputs: Vec<PathBuf>, out: PathBuf) -> Result<()> {
    let mut all_ids: Option<Vec<String>> = None;
    let mut systems = Vec::new();
    for p in &inputs {
        let (ids, probs) = read_prob_csv(p)?;
        match &all_ids {
            None => all_ids = Some(ids),
            Some(expect) => {
                if expect != &ids {
                    return Err(Error::Data(format!(
                        "{} scores different clips than {}",
                        p.display(),
                        inputs[0].display()
                    )));
                }
            }
        }
        systems.push(probs);
    }
    let ids = all_ids.unwrap_or_default();
    let fused = fuse_probabilities(&systems)?;
    let mut text = String::from("path,probability,decision\n");
    for (id, &p) in ids.iter().zip(fused.iter()) {
        let decision = if p >= 0.5 { MaskLabel::Mask } else { MaskLabel::Clear };
        text.push_str(&format!("{id},{p:.6},{}\n", decision.as_str()));
    }
    std::fs::write(&out, text).map_err(io_err(&out))?;
    println!("fused {} systems into {}", inputs.len(), out.display());
    Ok(())
}

fn mask_eval_report(manifest: &Manifest, pred: &Path) -> Result<EvalReport> {
    let (ids, probs) = read_prob_csv(pred)?;
    let mut truth_labels = Vec::new();
    let mut pred_labels = Vec::new();
    for (id, &p) in ids.iter().zip(probs.iter()) {
        let record = manifest
            .records()
            .iter()
            .find(|r| &r.path == id)
            .ok_or_else(|| Error::Data(format!("prediction for unknown clip `{id}`")))?;
        let label = record
            .label
            .ok_or_else(|| Error::Data(format!("clip `{id}` has no label")))?;
        truth_labels.push(label.index());
        pred_labels.push(if p >= 0.5 { 1 } else { 0 });
    }
    let value = uar(&truth_labels, &pred_labels, 2)?;
    let names = vec!["clear".to_string(), "mask".to_string()];
    let cm = ConfusionMatrix::from_labels(&truth_labels, &pred_labels, &names)?;
    let per_item = names
        .iter()
        .enumerate()
        .map(|(i, n)| (format!("recall_{n}"), cm.recall(i).unwrap_or(f64::NAN)))
        .collect();
    Ok(EvalReport {
        metric: "UAR".into(),
        value,
        per_item,
        sample_count: truth_labels.len(),
    })
}

fn breath_eval_report(manifest: &Manifest, pred: &Path, agg: BscAggregation) -> Result<EvalReport> {
    use std::collections::BTreeMap;
    let mut per_speaker: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut n = 0usize;
    for r in manifest.records() {
        let pred_file = pred.join(belt_pred_name(&r.path));
        if !pred_file.exists() {
            continue;
        }
        let belt_rel = r
            .belt_path
            .as_ref()
            .ok_or_else(|| Error::Data(format!("clip `{}` has no belt path", r.path)))?;
        let truth_belt = read_belt(manifest.resolve(belt_rel))?;
        let pred_belt = read_belt(&pred_file)?;
        if truth_belt.len() != pred_belt.len() {
            return Err(Error::Data(format!(
                "clip `{}`: prediction holds {} samples, truth {}",
                r.path,
                pred_belt.len(),
                truth_belt.len()
            )));
        }
        let entry = per_speaker.entry(r.speaker.as_str()).or_default();
        entry.0.extend_from_slice(&pred_belt);
        entry.1.extend_from_slice(&truth_belt);
        n += 1;
    }
    if per_speaker.is_empty() {
        return Err(Error::Data(format!(
            "no predictions under {} match the manifest",
            pred.display()
        )));
    }
    let speakers: Vec<String> = per_speaker.keys().map(|s| s.to_string()).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = per_speaker.into_values().collect();
    let value = bsc_score(&pairs, agg)?;
    let per_item = speakers
        .iter()
        .zip(pairs.iter())
        .map(|(s, (p, t))| {
            (
                format!("pcc_{s}"),
                paraforge_core::metrics::pcc(p, t).unwrap_or(f64::NAN),
            )
        })
        .collect();
    Ok(EvalReport {
        metric: "PCC".into(),
        value,
        per_item,
        sample_count: n,
    })
}

fn cmd_eval(
    task: TaskArg,
    truth: PathBuf,
    pred: PathBuf,
    aggregation: AggArg,
    out: Option<PathBuf>,
) -> Result<()> {
    let manifest = Manifest::load(&truth)?;
    let report = match task {
        TaskArg::Mask => mask_eval_report(&manifest, &pred)?,
        TaskArg::Breath => {
            let agg = match aggregation {
                AggArg::Mean => BscAggregation::MeanPerSpeaker,
                AggArg::Pooled => BscAggregation::Pooled,
            };
            breath_eval_report(&manifest, &pred, agg)?
        }
    };
    print!("{}", report.to_text());
    if let Some(out) = out {
        std::fs::write(&out, report.to_csv()).map_err(io_err(&out))?;
    }
    Ok(())
}

fn cmd_run_experiment(plan: PathBuf, out: PathBuf, cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut plan = Plan::load(&plan)?;
    if plan.base_config.is_none() {
        plan.base_config = cli_config.clone();
    }
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    // a seed override flows through a rewritten base config
    if let Some(s) = seed {
        let mut cfg = match &plan.base_config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.seed = s;
        let rewritten = out.join("base_config.cfg");
        std::fs::write(&rewritten, cfg.to_text()).map_err(io_err(&rewritten))?;
        plan.base_config = Some(rewritten);
    }
    let report = run_experiment(&plan, &out)?;
    print!("{}", report.to_markdown());
    println!("report written to {}", out.join("report.md").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::SynthData { task, spec, out } => cmd_synth(task, spec, out, cli.seed),
        Command::Fbank { input, out } => cmd_fbank(input, out, &cfg, cli.jobs),
        Command::Augment { scheme, input, out } => {
            cmd_augment(scheme, input, out, &cfg, cfg.seed, cli.jobs)
        }
        Command::TrainMask { manifest, out, log } => cmd_train_mask(manifest, out, log, &cfg),
        Command::TrainBreath {
            manifest,
            out,
            log,
            pred_dir,
        } => cmd_train_breath(manifest, out, log, pred_dir, &cfg),
        Command::ExtractEmbed {
            checkpoint,
            manifest,
            split,
            out,
            source,
        } => cmd_extract(checkpoint, manifest, split.into(), out, source),
        Command::SvmTrain { embeddings, out } => cmd_svm_train(embeddings, out, &cfg),
        Command::Predict {
            model,
            embeddings,
            out,
        } => cmd_predict(model, embeddings, out),
        Command::Fuse { inputs, out } => cmd_fuse(inputs, out),
        Command::Eval {
            task,
            truth,
            pred,
            aggregation,
            out,
        } => cmd_eval(task, truth, pred, aggregation, out),
        Command::RunExperiment { plan, out } => {
            cmd_run_experiment(plan, out, &cli.config, cli.seed)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(e.exit_code());
    }
}
