//! Mini-batch training with class-weighted loss and Adam.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, Metrics};
use crate::corpus::{class_distribution, class_weights, LabeledTweet, SentimentLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{predict_label, PredictedDistribution, SentimentModel};
use crate::nncore::{adam_step, derive_seed, AdamState, Graph, RngStream};
use crate::text::UNK_INDEX;

/// Which epoch's weights `train` returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Highest validation eq1 F1, ties broken by lower validation loss and
    /// then by the earlier epoch. Falls back to the last epoch when there is
    /// no validation data.
    #[default]
    BestValEq1F1,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub selection: SelectionRule,
}

impl TrainConfig {
    pub fn stage1(seed: u64) -> Self {
        TrainConfig {
            stage: "stage1".into(),
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 30,
            seed,
            selection: SelectionRule::default(),
        }
    }

    pub fn stage2(seed: u64) -> Self {
        TrainConfig {
            stage: "stage2".into(),
            lr: 9e-5,
            weight_decay: 1e-4,
            ..Self::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "lr and weight_decay must be finite and non-negative, got {} and {}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Weighted loss over the training split, measured with dropout off
    /// after the epoch's updates.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_eq1_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub selected_epoch: usize,
}

struct Encoded {
    indices: Vec<usize>,
    target: usize,
}

fn encode_all(model: &SentimentModel, data: &[LabeledTweet]) -> Vec<Encoded> {
    data.iter()
        .map(|t| {
            let mut indices = model.encode(&t.text);
            if indices.is_empty() {
                indices.push(UNK_INDEX);
            }
            Encoded {
                indices,
                target: t.label.index(),
            }
        })
        .collect()
}

struct Pass {
    loss: f64,
    confusion: ConfusionMatrix,
}

/// Dropout-off loss and confusion over a dataset, summed in a fixed order.
fn inference_pass(model: &SentimentModel, data: &[Encoded], weights: &[f32; NUM_CLASSES], batch: usize) -> Result<Pass> {
    let chunks: Vec<&[Encoded]> = data.chunks(batch).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| {
            let mut g = Graph::new(model.classifier.params());
            let seqs: Vec<Vec<usize>> = chunk.iter().map(|e| e.indices.clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|e| e.target).collect();
            let mut rng = RngStream::new(0);
            let z = model.classifier.logits(&mut g, &seqs, false, &mut rng)?;
            let loss = g.weighted_cross_entropy(z, &targets, weights)?;
            let p = g.softmax(z, 1)?;
            let preds: Vec<SentimentLabel> = g
                .value(p)
                .data()
                .chunks(NUM_CLASSES)
                .map(|r| predict_label(&PredictedDistribution([r[0] as f64, r[1] as f64, r[2] as f64])))
                .collect();
            Ok((g.value(loss).item() as f64 * chunk.len() as f64, preds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut confusion = ConfusionMatrix::default();
    for ((loss, preds), chunk) in parts.into_iter().zip(&chunks) {
        total += loss;
        for (e, p) in chunk.iter().zip(preds) {
            confusion.record(SentimentLabel::from_index(e.target).expect("valid target"), p);
        }
    }
    Ok(Pass {
        loss: total / data.len() as f64,
        confusion,
    })
}

/// Trains `model` in place and returns it with the weights picked by
/// `cfg.selection`. Loss weights are the inverted class frequencies of
/// `train_data`; a class missing from it is an error before any update.
pub fn train(
    mut model: SentimentModel,
    cfg: &TrainConfig,
    train_data: &[LabeledTweet],
    val_data: &[LabeledTweet],
) -> Result<(SentimentModel, TrainingHistory)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let w = class_weights(&class_distribution(train_data))?;
    let weights = SentimentLabel::ALL.map(|l| w.get(l) as f32);
    let train_set = encode_all(&model, train_data);
    let val_set = encode_all(&model, val_data);

    let mut adam = AdamState::new(model.classifier.params());
    let mut order_rng = RngStream::new(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = RngStream::new(derive_seed(cfg.seed, "dropout"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = TrainingHistory::default();
    // (eq1 F1, loss, epoch, weights)
    let mut best: Option<(f64, f64, usize, SentimentModel)> = None;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<Vec<usize>> = batch.iter().map(|&i| train_set[i].indices.clone()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| train_set[i].target).collect();
            let grads = {
                let mut g = Graph::new(model.classifier.params());
                let z = model.classifier.logits(&mut g, &seqs, true, &mut dropout_rng)?;
                let loss = g.weighted_cross_entropy(z, &targets, &weights)?;
                g.backward(loss)?
            };
            let params = model.classifier.params_mut();
            params.accumulate(&grads);
            adam_step(params, &mut adam, cfg.lr, cfg.weight_decay);
        }

        let tr = inference_pass(&model, &train_set, &weights, cfg.batch_size)?;
        if !tr.loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let val = if val_set.is_empty() {
            None
        } else {
            Some(inference_pass(&model, &val_set, &weights, cfg.batch_size)?)
        };
        let val_eq1 = val.as_ref().map(|v| Metrics::from_confusion(&v.confusion).eq1_f1);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_accuracy: Metrics::from_confusion(&tr.confusion).accuracy,
            val_loss: val.as_ref().map(|v| v.loss),
            val_eq1_f1: val_eq1,
        });

        if let (SelectionRule::BestValEq1F1, Some(score), Some(v)) = (cfg.selection, val_eq1, &val) {
            let better = best
                .as_ref()
                .map_or(true, |(s, l, _, _)| score > *s || (score == *s && v.loss < *l));
            if better {
                best = Some((score, v.loss, epoch, model.clone()));
            }
        }
    }

    let (mut model, selected) = match best {
        Some((_, _, epoch, snapshot)) => (snapshot, epoch),
        None => (model, cfg.max_epochs),
    };
    history.selected_epoch = selected;
    let rec = &history.epochs[selected - 1];
    model.meta.stage = cfg.stage.clone();
    model.meta.seed = cfg.seed;
    model.meta.epochs = selected;
    model.meta.metrics.clear();
    model.meta.metrics.insert("train_loss".into(), rec.train_loss);
    model.meta.metrics.insert("train_accuracy".into(), rec.train_accuracy);
    if let Some(v) = rec.val_loss {
        model.meta.metrics.insert("val_loss".into(), v);
    }
    if let Some(v) = rec.val_eq1_f1 {
        model.meta.metrics.insert("val_eq1_f1".into(), v);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArchitectureConfig, BiLstmConfig, CnnConfig};
    use crate::text::{build_vocabulary, tokenize};
    use SentimentLabel::*;

    fn corpus() -> Vec<LabeledTweet> {
        let rows = [
            ("love this so much", Positive),
            ("great happy day", Positive),
            ("what a wonderful show", Positive),
            ("awesome love it", Positive),
            ("hate this so much", Negative),
            ("awful sad day", Negative),
            ("what a terrible show", Negative),
            ("worst hate it", Negative),
            ("the meeting is at noon", Neutral),
            ("report released today", Neutral),
            ("the show airs at nine", Neutral),
            ("schedule for the day", Neutral),
        ];
        rows.iter()
            .enumerate()
            .map(|(i, (t, l))| LabeledTweet {
                id: format!("t{i}"),
                text: t.to_string(),
                label: *l,
            })
            .collect()
    }

    fn model(data: &[LabeledTweet], cnn: bool) -> SentimentModel {
        let vocab = build_vocabulary(data.iter().map(|t| tokenize(&t.text)), 100);
        let v = vocab.len();
        let config = if cnn {
            ArchitectureConfig::Cnn(CnnConfig {
                embed_dim: 8,
                maps_per_width: 4,
                ..CnnConfig::standard(v)
            })
        } else {
            ArchitectureConfig::BiLstm(BiLstmConfig {
                embed_dim: 8,
                hidden_size: 8,
                ..BiLstmConfig::stage1(v)
            })
        };
        SentimentModel::new(config, vocab, None, 3).unwrap()
    }

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 4,
            max_epochs: 3,
            ..TrainConfig::stage1(seed)
        }
    }

    #[test]
    fn defaults_per_stage() {
        let s1 = TrainConfig::stage1(0);
        assert_eq!((s1.lr, s1.weight_decay), (1e-4, 1e-5));
        let s2 = TrainConfig::stage2(0);
        assert_eq!((s2.lr, s2.weight_decay), (9e-5, 1e-4));
        assert_eq!(s2.selection, SelectionRule::BestValEq1F1);
    }

    #[test]
    fn same_seed_same_history() {
        let data = corpus();
        for cnn in [false, true] {
            let (m1, h1) = train(model(&data, cnn), &quick(7), &data, &data[..6]).unwrap();
            let (m2, h2) = train(model(&data, cnn), &quick(7), &data, &data[..6]).unwrap();
            assert_eq!(h1, h2);
            assert_eq!(m1.classifier.params(), m2.classifier.params());
            assert_eq!(h1.epochs.len(), 3);
            let (_, h3) = train(model(&data, cnn), &quick(8), &data, &data[..6]).unwrap();
            assert_ne!(h1, h3);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let data = corpus();
        let cfg = TrainConfig {
            lr: 0.0,
            ..quick(1)
        };
        let (m, h) = train(model(&data, false), &cfg, &data, &[]).unwrap();
        let first = h.epochs[0].train_loss;
        assert!(h.epochs.iter().all(|e| (e.train_loss - first).abs() < 1e-6));
        assert_eq!(m.classifier.params(), model(&data, false).classifier.params());
        assert_eq!(h.selected_epoch, 3);
        assert!(h.epochs[0].val_loss.is_none());
    }

    #[test]
    fn missing_class_fails_before_training() {
        let data: Vec<_> = corpus().into_iter().filter(|t| t.label != Neutral).collect();
        let err = train(model(&data, false), &quick(1), &data, &[]).unwrap_err();
        assert!(matches!(err, Error::MissingClass("neutral")));
        assert!(matches!(train(model(&data, false), &quick(1), &[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn selection_prefers_best_validation_epoch() {
        let data = corpus();
        let cfg = TrainConfig {
            max_epochs: 6,
            ..quick(2)
        };
        let (m, h) = train(model(&data, false), &cfg, &data, &data).unwrap();
        let key = |e: &EpochRecord| (e.val_eq1_f1.unwrap(), -e.val_loss.unwrap());
        let mut expect = &h.epochs[0];
        for e in &h.epochs[1..] {
            if key(e) > key(expect) {
                expect = e;
            }
        }
        assert_eq!(h.selected_epoch, expect.epoch);
        assert_eq!(m.meta.epochs, expect.epoch);
        assert_eq!(m.meta.metrics["val_eq1_f1"], expect.val_eq1_f1.unwrap());
        let last = TrainConfig {
            selection: SelectionRule::LastEpoch,
            ..cfg
        };
        assert_eq!(train(model(&data, false), &last, &data, &data).unwrap().1.selected_epoch, 6);
    }
}
