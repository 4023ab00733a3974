use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use replysent_core::corpus::{load_labeled_corpus, load_threads, write_labeled_corpus, RecordFormat};
use replysent_core::models::{
    load_checkpoint, load_checkpoint_as, predict_label, save_checkpoint, ArchitectureKind, Ensemble, Predictor,
    SentimentModel,
};
use replysent_core::pipeline::{
    autolabel_stage, evaluate, evaluate_threads, require, train_stage1, train_stage2, two_stage_run, write_eval,
    write_json, EvalBlock, StageOutput, AUTOLABELED_CORPUS, STAGE1_CHECKPOINT, STAGE2_BILSTM_CHECKPOINT,
    STAGE2_CNN_CHECKPOINT,
};
use replysent_core::{Error, Result};
use serde_json::json;

use crate::config::{self, RunConfig};
use crate::{Command, Common, Stage2Model};

fn setup(common: &Common) -> Result<RunConfig> {
    let cfg = config::resolve(
        common.config.as_deref(),
        &common.sets,
        common.seed,
        common.out.as_deref(),
    )?;
    config::echo(&cfg)?;
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainBase(common) => train_base(&setup(&common)?),
        Command::Autolabel { common, checkpoint } => autolabel(&setup(&common)?, checkpoint),
        Command::TrainReply { common, model } => train_reply(&setup(&common)?, model),
        Command::Evaluate {
            common,
            checkpoints,
            direct,
            labeled,
        } => evaluate_cmd(&setup(&common)?, &checkpoints, direct, labeled),
        Command::Predict { checkpoint, text, file } => predict(&checkpoint, text, file),
        Command::Run(common) => {
            let cfg = setup(&common)?;
            let report = two_stage_run(&cfg)?;
            for (name, block) in [
                ("proposed", &report.proposed),
                ("ensemble", &report.ensemble),
                ("direct_baseline", &report.direct_baseline),
            ] {
                print_block(name, block);
            }
            println!("report: {}", cfg.out_dir.join("report.json").display());
            Ok(())
        }
    }
}

fn print_block(name: &str, block: &EvalBlock) {
    let m = &block.metrics;
    println!(
        "{name}: accuracy {:.4} eq1_precision {:.4} eq1_recall {:.4} eq1_f1 {:.4}",
        m.accuracy, m.eq1_precision, m.eq1_recall, m.eq1_f1
    );
}

fn save_stage(out: &Path, file: &str, history_file: &str, stage: &StageOutput) -> Result<()> {
    save_checkpoint(&stage.model, out.join(file))?;
    write_json(out.join(history_file), &stage.history)?;
    println!(
        "{}: {} epochs, kept epoch {}, wrote {}",
        stage.model.meta.stage,
        stage.history.epochs.len(),
        stage.history.selected_epoch,
        out.join(file).display()
    );
    Ok(())
}

fn train_base(cfg: &RunConfig) -> Result<()> {
    let path = require("labeled_path", &cfg.labeled_path)?;
    let data = load_labeled_corpus(path, RecordFormat::JsonLines)?;
    let stage = train_stage1(cfg, &data)?;
    save_stage(&cfg.out_dir, STAGE1_CHECKPOINT, "stage1_history.json", &stage)?;
    if let Some(m) = &stage.validation {
        write_json(cfg.out_dir.join("metrics_stage1_validation.json"), m)?;
    }
    Ok(())
}

fn autolabel(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let threads_path = require("threads_path", &cfg.threads_path)?;
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.out_dir.join(STAGE1_CHECKPOINT));
    let model = load_checkpoint(&checkpoint)?;
    let threads = load_threads(threads_path)?;
    let (corpus, summary) = autolabel_stage(cfg, &model, &threads)?;
    let out = cfg.out_dir.join(AUTOLABELED_CORPUS);
    write_labeled_corpus(&out, &corpus)?;
    write_json(cfg.out_dir.join("autolabel_distribution.json"), &summary)?;
    println!(
        "kept {} of {} threads ({} excluded: fewer than {} replies after filtering)",
        summary.threads_kept, summary.threads_total, summary.threads_excluded, cfg.min_replies
    );
    let d = &summary.distribution;
    println!(
        "labels: negative {} ({:.3}) neutral {} ({:.3}) positive {} ({:.3})",
        d.counts[0], d.fractions[0], d.counts[1], d.fractions[1], d.counts[2], d.fractions[2]
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn train_reply(cfg: &RunConfig, which: Stage2Model) -> Result<()> {
    let path = cfg
        .autolabeled_path
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(AUTOLABELED_CORPUS));
    let data = load_labeled_corpus(&path, RecordFormat::JsonLines)?;
    let kinds: &[ArchitectureKind] = match which {
        Stage2Model::Bilstm => &[ArchitectureKind::BiLstm],
        Stage2Model::Cnn => &[ArchitectureKind::Cnn],
        Stage2Model::Both => &[ArchitectureKind::BiLstm, ArchitectureKind::Cnn],
    };
    let results: Vec<Result<StageOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| s.spawn({
                let data = &data;
                move || train_stage2(cfg, k, data)
            }))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    for (&kind, result) in kinds.iter().zip(results) {
        let stage = result?;
        let (file, history) = match kind {
            ArchitectureKind::BiLstm => (STAGE2_BILSTM_CHECKPOINT, "stage2_bilstm_history.json"),
            ArchitectureKind::Cnn => (STAGE2_CNN_CHECKPOINT, "stage2_cnn_history.json"),
        };
        save_stage(&cfg.out_dir, file, history, &stage)?;
    }
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, checkpoints: &[PathBuf], direct: bool, labeled: Option<PathBuf>) -> Result<()> {
    let name = match (checkpoints.len(), direct) {
        (1, true) => "direct_baseline",
        (1, false) => "model",
        (2, false) => "ensemble",
        (2, true) => return Err(Error::Config("--direct takes a single message-level checkpoint".into())),
        (n, _) => return Err(Error::Config(format!("expected one or two checkpoints, got {n}"))),
    };
    let models: Vec<SentimentModel> = if direct {
        vec![load_checkpoint_as(&checkpoints[0], ArchitectureKind::BiLstm)?]
    } else {
        checkpoints.iter().map(load_checkpoint).collect::<Result<_>>()?
    };
    let ensemble;
    let predictor: &dyn Predictor = if let [a, b] = &models[..] {
        ensemble = Ensemble { first: a, second: b };
        &ensemble
    } else {
        &models[0]
    };
    let (block, data): (EvalBlock, PathBuf) = match labeled {
        Some(path) => {
            let data = load_labeled_corpus(&path, RecordFormat::JsonLines)?;
            (evaluate(predictor, &data)?.into(), path)
        }
        None => {
            let path = require("gold_path", &cfg.gold_path)?;
            let threads = load_threads(path)?;
            (evaluate_threads(predictor, &threads)?.into(), path.to_path_buf())
        }
    };
    write_eval(&cfg.out_dir, name, &block)?;
    write_json(
        cfg.out_dir.join(format!("evaluation_{name}.json")),
        &json!({
            "name": name,
            "checkpoints": checkpoints,
            "data": data,
            "metrics": block.metrics,
            "confusion": block.confusion,
        }),
    )?;
    print_block(name, &block);
    Ok(())
}

fn predict(checkpoint: &Path, texts: Vec<String>, file: Option<PathBuf>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let texts = match file {
        Some(path) => fs::read_to_string(&path)
            .map_err(io_err(&path))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect(),
        None => texts,
    };
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let dists = model.predict(&refs)?;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for d in &dists {
        let [n, u, p] = d.0;
        // A closed pipe is not worth an error.
        if writeln!(w, "{} {n:.6} {u:.6} {p:.6}", predict_label(d)).is_err() {
            break;
        }
    }
    let _ = w.flush();
    Ok(())
}
