//! Confusion matrices, per-class scores and the positive/negative average.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledTweet, SentimentLabel, ThreadRecord, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{predict_label, Predictor};

/// Counts indexed `[gold][predicted]` in canonical label order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (SentimentLabel, SentimentLabel)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (gold, pred) in pairs {
            cm.record(gold, pred);
        }
        cm
    }

    pub fn record(&mut self, gold: SentimentLabel, predicted: SentimentLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: SentimentLabel, predicted: SentimentLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    /// Gold counts per class.
    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    /// Prediction counts per class.
    pub fn col_sums(&self) -> [u64; NUM_CLASSES] {
        let mut out = [0; NUM_CLASSES];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub negative: ClassScores,
    pub neutral: ClassScores,
    pub positive: ClassScores,
}

impl PerClass {
    pub fn get(&self, label: SentimentLabel) -> &ClassScores {
        match label {
            SentimentLabel::Negative => &self.negative,
            SentimentLabel::Neutral => &self.neutral,
            SentimentLabel::Positive => &self.positive,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: PerClass,
    pub eq1_precision: f64,
    pub eq1_recall: f64,
    pub eq1_f1: f64,
}

/// Mean of the positive-class and negative-class values of a score.
pub fn eq1(score_pos: f64, score_neg: f64) -> f64 {
    (score_pos + score_neg) / 2.0
}

impl Metrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let rows = cm.row_sums();
        let cols = cm.col_sums();
        let scores = |k: usize| {
            let precision = ratio(cm.counts[k][k], cols[k]);
            let recall = ratio(cm.counts[k][k], rows[k]);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
            }
        };
        let per_class = PerClass {
            negative: scores(0),
            neutral: scores(1),
            positive: scores(2),
        };
        let (pos, neg) = (per_class.positive, per_class.negative);
        Metrics {
            accuracy: ratio(cm.trace(), cm.total()),
            per_class,
            eq1_precision: eq1(pos.precision, neg.precision),
            eq1_recall: eq1(pos.recall, neg.recall),
            eq1_f1: eq1(pos.f1, neg.f1),
        }
    }
}

/// Scores `model` against labeled texts.
pub fn evaluate(model: &dyn Predictor, data: &[LabeledTweet]) -> Result<(Metrics, ConfusionMatrix)> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let texts: Vec<&str> = data.iter().map(|t| t.text.as_str()).collect();
    let preds = model.predict(&texts)?;
    let cm = ConfusionMatrix::from_pairs(data.iter().zip(&preds).map(|(t, p)| (t.label, predict_label(p))));
    Ok((Metrics::from_confusion(&cm), cm))
}

/// Gold threads as (source text, gold reply label) examples.
pub fn gold_examples(threads: &[ThreadRecord]) -> Result<Vec<LabeledTweet>> {
    threads
        .iter()
        .map(|t| {
            let label = t.gold_label.ok_or_else(|| Error::MissingGold(t.source_id.clone()))?;
            Ok(LabeledTweet {
                id: t.source_id.clone(),
                text: t.source_text.clone(),
                label,
            })
        })
        .collect()
}

/// Scores a source-text model on gold threads.
pub fn evaluate_threads(model: &dyn Predictor, threads: &[ThreadRecord]) -> Result<(Metrics, ConfusionMatrix)> {
    evaluate(model, &gold_examples(threads)?)
}

/// Predicts reply sentiment as the source tweet's own sentiment.
pub fn direct_baseline(stage1: &dyn Predictor, threads: &[ThreadRecord]) -> Result<(Metrics, ConfusionMatrix)> {
    evaluate_threads(stage1, threads)
}

/// Writes `path` as an aligned text table, plus `<path>.csv` with raw
/// counts and `<path>.svg` with a heatmap. Returns the three paths.
pub fn render_confusion(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<[PathBuf; 3]> {
    let path = path.as_ref();
    let csv = path.with_extension("csv");
    let svg = path.with_extension("svg");
    for (p, body) in [(path, confusion_table(cm)), (&csv, confusion_csv(cm)), (&svg, confusion_svg(cm))] {
        fs::write(p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok([path.to_path_buf(), csv, svg])
}

pub fn confusion_table(cm: &ConfusionMatrix) -> String {
    let width = cm
        .counts
        .iter()
        .flatten()
        .map(|c| c.to_string().len())
        .max()
        .unwrap_or(1)
        .max("positive".len());
    let mut out = format!("{:<11}", "gold\\pred");
    for l in SentimentLabel::ALL {
        write!(out, " {:>width$}", l.as_str()).unwrap();
    }
    out.push('\n');
    for g in SentimentLabel::ALL {
        write!(out, "{:<11}", g.as_str()).unwrap();
        for p in SentimentLabel::ALL {
            write!(out, " {:>width$}", cm.get(g, p)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("gold,negative,neutral,positive\n");
    for g in SentimentLabel::ALL {
        let row = &cm.counts[g.index()];
        writeln!(out, "{},{},{},{}", g.as_str(), row[0], row[1], row[2]).unwrap();
    }
    out
}

pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let bad = |msg: &str| Error::Config(format!("confusion csv: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some("gold,negative,neutral,positive") {
        return Err(bad("unexpected header"));
    }
    let mut cm = ConfusionMatrix::default();
    for g in SentimentLabel::ALL {
        let line = lines.next().ok_or_else(|| bad("missing row"))?;
        let mut fields = line.split(',');
        if fields.next() != Some(g.as_str()) {
            return Err(bad("rows out of order"));
        }
        for slot in cm.counts[g.index()].iter_mut() {
            *slot = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| bad("bad count"))?;
        }
        if fields.next().is_some() {
            return Err(bad("too many columns"));
        }
    }
    Ok(cm)
}

fn confusion_svg(cm: &ConfusionMatrix) -> String {
    const CELL: u64 = 80;
    const MARGIN: u64 = 90;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let side = MARGIN + 3 * CELL + 10;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (k, l) in SentimentLabel::ALL.iter().enumerate() {
        let mid = MARGIN + k as u64 * CELL + CELL / 2;
        writeln!(out, "<text x=\"{mid}\" y=\"{}\" text-anchor=\"middle\">{l}</text>", MARGIN - 10).unwrap();
        writeln!(out, "<text x=\"{}\" y=\"{mid}\" text-anchor=\"end\">{l}</text>", MARGIN - 8).unwrap();
    }
    for g in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            let c = cm.counts[g][p];
            let shade = 255 - (c * 200 / max) as u8;
            let (x, y) = (MARGIN + p as u64 * CELL, MARGIN + g as u64 * CELL);
            writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#333\"/>"
            )
            .unwrap();
            writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{c}</text>",
                x + CELL / 2,
                y + CELL / 2 + 4
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}
