//! Stage drivers and the end-to-end two-stage run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, evaluate_threads, render_confusion, ConfusionMatrix, Metrics};
use super::train::{train, SelectionRule, TrainConfig, TrainingHistory};
use crate::aggregate::{autolabel_threads, AggregationThresholds, Threshold};
use crate::corpus::{
    class_distribution, filter_threads, load_labeled_corpus, load_threads, split, write_labeled_corpus,
    ClassDistribution, LabeledTweet, RecordFormat, ThreadRecord,
};
use crate::error::{Error, Result};
use crate::models::{
    save_checkpoint, ArchitectureConfig, ArchitectureKind, BiLstmConfig, CnnConfig, Ensemble, SentimentModel,
};
use crate::nncore::derive_seed;
use crate::text::{build_vocabulary, load_embeddings, tokenize};

/// Every setting of a run, under flat keys. Paths have no default; all
/// other fields do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub autolabeled_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings_path: Option<PathBuf>,

    pub embed_dim: usize,
    pub stage1_vocab_size: usize,
    pub stage2_vocab_size: usize,
    pub stage1_hidden_size: usize,
    pub stage2_hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub cnn_filter_widths: Vec<usize>,
    pub cnn_maps_per_width: usize,

    pub min_replies: usize,
    pub min_tokens: usize,
    pub val_fraction: f64,

    pub neutral_fraction: Threshold,
    pub pos_over_neg: Threshold,
    pub neg_over_pos: Threshold,

    pub stage1_lr: f64,
    pub stage1_weight_decay: f64,
    pub stage2_lr: f64,
    pub stage2_weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub selection: SelectionRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let th = AggregationThresholds::default();
        let s1 = TrainConfig::stage1(0);
        let s2 = TrainConfig::stage2(0);
        let cnn = CnnConfig::standard(0);
        PipelineConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            labeled_path: None,
            threads_path: None,
            gold_path: None,
            autolabeled_path: None,
            embeddings_path: None,
            embed_dim: 200,
            stage1_vocab_size: 50_000,
            stage2_vocab_size: 750_000,
            stage1_hidden_size: 256,
            stage2_hidden_size: 300,
            num_layers: 2,
            dropout: 0.5,
            cnn_filter_widths: cnn.filter_widths,
            cnn_maps_per_width: cnn.maps_per_width,
            min_replies: 20,
            min_tokens: 0,
            val_fraction: 0.1,
            neutral_fraction: th.neutral_fraction,
            pos_over_neg: th.pos_over_neg,
            neg_over_pos: th.neg_over_pos,
            stage1_lr: s1.lr,
            stage1_weight_decay: s1.weight_decay,
            stage2_lr: s2.lr,
            stage2_weight_decay: s2.weight_decay,
            batch_size: s1.batch_size,
            max_epochs: s1.max_epochs,
            selection: SelectionRule::default(),
        }
    }
}

/// Returns the path stored under `field`, or a config error naming it.
pub fn require<'a>(field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing required setting `{field}`")))
}

impl PipelineConfig {
    pub fn thresholds(&self) -> AggregationThresholds {
        AggregationThresholds {
            neutral_fraction: self.neutral_fraction,
            pos_over_neg: self.pos_over_neg,
            neg_over_pos: self.neg_over_pos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds().validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if self.stage1_vocab_size < 3 || self.stage2_vocab_size < 3 {
            return Err(Error::Config("vocabulary sizes must be at least 3".into()));
        }
        self.stage1_train().validate()?;
        self.stage2_train(ArchitectureKind::BiLstm).validate()?;
        self.stage1_architecture(3).validate()?;
        for kind in [ArchitectureKind::BiLstm, ArchitectureKind::Cnn] {
            self.stage2_architecture(kind, 3).validate()?;
        }
        Ok(())
    }

    pub fn stage1_train(&self) -> TrainConfig {
        TrainConfig {
            stage: "stage1".into(),
            lr: self.stage1_lr,
            weight_decay: self.stage1_weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed: derive_seed(self.seed, "stage1/train"),
            selection: self.selection,
        }
    }

    pub fn stage2_train(&self, kind: ArchitectureKind) -> TrainConfig {
        TrainConfig {
            stage: format!("stage2-{}", kind.id()),
            lr: self.stage2_lr,
            weight_decay: self.stage2_weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed: derive_seed(self.seed, &format!("stage2/{}/train", kind.id())),
            selection: self.selection,
        }
    }

    fn bilstm(&self, vocab_size: usize, hidden_size: usize) -> BiLstmConfig {
        BiLstmConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_size,
            num_layers: self.num_layers,
            dropout: self.dropout,
            num_classes: 3,
        }
    }

    pub fn stage1_architecture(&self, vocab_size: usize) -> ArchitectureConfig {
        ArchitectureConfig::BiLstm(self.bilstm(vocab_size, self.stage1_hidden_size))
    }

    pub fn stage2_architecture(&self, kind: ArchitectureKind, vocab_size: usize) -> ArchitectureConfig {
        match kind {
            ArchitectureKind::BiLstm => ArchitectureConfig::BiLstm(self.bilstm(vocab_size, self.stage2_hidden_size)),
            ArchitectureKind::Cnn => ArchitectureConfig::Cnn(CnnConfig {
                vocab_size,
                embed_dim: self.embed_dim,
                filter_widths: self.cnn_filter_widths.clone(),
                maps_per_width: self.cnn_maps_per_width,
                dropout: self.dropout,
                num_classes: 3,
            }),
        }
    }
}

/// A trained model with its history and held-out scores.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub model: SentimentModel,
    pub history: TrainingHistory,
    pub validation: Option<Metrics>,
}

fn fit(
    cfg: &PipelineConfig,
    label: &str,
    arch: impl FnOnce(usize) -> ArchitectureConfig,
    vocab_max: usize,
    tcfg: &TrainConfig,
    data: &[LabeledTweet],
) -> Result<StageOutput> {
    let (train_set, val_set) = split(data, cfg.val_fraction, derive_seed(cfg.seed, &format!("{label}/split")));
    let vocab = build_vocabulary(train_set.iter().map(|t| tokenize(&t.text)), vocab_max);
    let embeddings = match &cfg.embeddings_path {
        Some(p) => Some(load_embeddings(
            p,
            cfg.embed_dim,
            &vocab,
            derive_seed(cfg.seed, &format!("{label}/embedding")),
        )?),
        None => None,
    };
    let model = SentimentModel::new(
        arch(vocab.len()),
        vocab,
        embeddings.as_ref(),
        derive_seed(cfg.seed, &format!("{label}/init")),
    )?;
    let (model, history) = train(model, tcfg, &train_set, &val_set)?;
    let validation = if val_set.is_empty() {
        None
    } else {
        Some(evaluate(&model, &val_set)?.0)
    };
    Ok(StageOutput {
        model,
        history,
        validation,
    })
}

/// Trains the message-level classifier on manually labeled tweets.
pub fn train_stage1(cfg: &PipelineConfig, data: &[LabeledTweet]) -> Result<StageOutput> {
    fit(
        cfg,
        "stage1",
        |v| cfg.stage1_architecture(v),
        cfg.stage1_vocab_size,
        &cfg.stage1_train(),
        data,
    )
}

/// Trains a reply-sentiment classifier on automatically labeled sources.
pub fn train_stage2(cfg: &PipelineConfig, kind: ArchitectureKind, data: &[LabeledTweet]) -> Result<StageOutput> {
    fit(
        cfg,
        &format!("stage2/{}", kind.id()),
        |v| cfg.stage2_architecture(kind, v),
        cfg.stage2_vocab_size,
        &cfg.stage2_train(kind),
        data,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutolabelSummary {
    pub threads_total: usize,
    pub threads_kept: usize,
    pub threads_excluded: usize,
    pub distribution: ClassDistribution,
}

/// Filters threads and labels each surviving source tweet from its replies.
pub fn autolabel_stage(
    cfg: &PipelineConfig,
    stage1: &SentimentModel,
    threads: &[ThreadRecord],
) -> Result<(Vec<LabeledTweet>, AutolabelSummary)> {
    let kept = filter_threads(threads, cfg.min_replies, cfg.min_tokens, tokenize);
    let corpus = autolabel_threads(&kept, stage1, &cfg.thresholds())?;
    let summary = AutolabelSummary {
        threads_total: threads.len(),
        threads_kept: kept.len(),
        threads_excluded: threads.len() - kept.len(),
        distribution: class_distribution(&corpus),
    };
    Ok((corpus, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalBlock {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

impl From<(Metrics, ConfusionMatrix)> for EvalBlock {
    fn from((metrics, confusion): (Metrics, ConfusionMatrix)) -> Self {
        EvalBlock { metrics, confusion }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub epochs_run: usize,
    pub selected_epoch: usize,
    pub validation: Option<Metrics>,
}

impl From<&StageOutput> for StageSummary {
    fn from(s: &StageOutput) -> Self {
        StageSummary {
            epochs_run: s.history.epochs.len(),
            selected_epoch: s.history.selected_epoch,
            validation: s.validation,
        }
    }
}

/// Consolidated results of a two-stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: PipelineConfig,
    pub stage1: StageSummary,
    pub autolabel: AutolabelSummary,
    pub stage2_bilstm: StageSummary,
    pub stage2_cnn: StageSummary,
    /// Stage-2 BiLSTM on the gold threads.
    pub proposed: EvalBlock,
    /// Mean of the stage-2 BiLSTM and CNN predictions.
    pub ensemble: EvalBlock,
    /// Stage-1 classifier applied to the source text.
    pub direct_baseline: EvalBlock,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `metrics_<name>.json` and `confusion_<name>.{txt,csv,svg}`.
pub fn write_eval(dir: &Path, name: &str, block: &EvalBlock) -> Result<()> {
    write_json(dir.join(format!("metrics_{name}.json")), &block.metrics)?;
    render_confusion(&block.confusion, dir.join(format!("confusion_{name}.txt")))?;
    Ok(())
}

pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const STAGE2_BILSTM_CHECKPOINT: &str = "stage2_bilstm.ckpt";
pub const STAGE2_CNN_CHECKPOINT: &str = "stage2_cnn.ckpt";
pub const AUTOLABELED_CORPUS: &str = "autolabeled.jsonl";

/// Runs both stages and all evaluations, writing every artifact under
/// `cfg.out_dir`. Each stage's outputs are on disk before the next stage
/// starts, so a later failure leaves earlier artifacts in place.
pub fn two_stage_run(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let labeled_path = require("labeled_path", &cfg.labeled_path)?;
    let threads_path = require("threads_path", &cfg.threads_path)?;
    let gold_path = require("gold_path", &cfg.gold_path)?;
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(out.join("config.json"), cfg)?;

    let stage1 = (|| {
        let labeled = load_labeled_corpus(labeled_path, RecordFormat::JsonLines)?;
        let s = train_stage1(cfg, &labeled)?;
        save_checkpoint(&s.model, out.join(STAGE1_CHECKPOINT))?;
        write_json(out.join("stage1_history.json"), &s.history)?;
        Ok(s)
    })()
    .map_err(|e: Error| e.in_stage("stage1"))?;

    let (corpus, autolabel) = (|| {
        let threads = load_threads(threads_path)?;
        let (corpus, summary) = autolabel_stage(cfg, &stage1.model, &threads)?;
        write_labeled_corpus(out.join(AUTOLABELED_CORPUS), &corpus)?;
        write_json(out.join("autolabel_distribution.json"), &summary)?;
        Ok((corpus, summary))
    })()
    .map_err(|e: Error| e.in_stage("autolabel"))?;

    let (bilstm, cnn) = (|| {
        let (bilstm, cnn) = std::thread::scope(|s| {
            let cnn = s.spawn(|| train_stage2(cfg, ArchitectureKind::Cnn, &corpus));
            let bilstm = train_stage2(cfg, ArchitectureKind::BiLstm, &corpus);
            (bilstm, cnn.join().expect("CNN training thread panicked"))
        });
        let (bilstm, cnn) = (bilstm?, cnn?);
        save_checkpoint(&bilstm.model, out.join(STAGE2_BILSTM_CHECKPOINT))?;
        save_checkpoint(&cnn.model, out.join(STAGE2_CNN_CHECKPOINT))?;
        write_json(out.join("stage2_bilstm_history.json"), &bilstm.history)?;
        write_json(out.join("stage2_cnn_history.json"), &cnn.history)?;
        Ok((bilstm, cnn))
    })()
    .map_err(|e: Error| e.in_stage("stage2"))?;

    let report = (|| {
        let gold = load_threads(gold_path)?;
        let ensemble = Ensemble {
            first: &bilstm.model,
            second: &cnn.model,
        };
        let report = Report {
            config: cfg.clone(),
            stage1: (&stage1).into(),
            autolabel,
            stage2_bilstm: (&bilstm).into(),
            stage2_cnn: (&cnn).into(),
            proposed: evaluate_threads(&bilstm.model, &gold)?.into(),
            ensemble: evaluate_threads(&ensemble, &gold)?.into(),
            direct_baseline: super::metrics::direct_baseline(&stage1.model, &gold)?.into(),
        };
        write_eval(out, "proposed", &report.proposed)?;
        write_eval(out, "ensemble", &report.ensemble)?;
        write_eval(out, "direct_baseline", &report.direct_baseline)?;
        write_json(out.join("report.json"), &report)?;
        Ok(report)
    })()
    .map_err(|e: Error| e.in_stage("evaluate"))?;
    Ok(report)
}
