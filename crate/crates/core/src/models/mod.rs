//! Classifier architectures, prediction helpers and checkpoints.

mod bilstm;
mod checkpoint;
mod cnn;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bilstm::{lstm_cell, lstm_direction, BiLstm, BiLstmConfig, LstmVars, LstmWeights};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint, CHECKPOINT_VERSION,
};
pub use cnn::{Cnn, CnnConfig};

use crate::corpus::{SentimentLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nncore::{Graph, ParamStore, Real, RngStream, Tensor, Var};
use crate::text::{encode, tokenize, EmbeddingMatrix, Vocabulary, PAD_INDEX};

pub(crate) fn init_uniform<F: Real>(t: &mut Tensor<F>, bound: f64, rng: &mut RngStream) {
    for x in t.data_mut() {
        *x = F::lit(rng.gen_range(-bound..=bound));
    }
}

/// Drops trailing pad indices; they never influence a prediction.
pub fn trim_padding(indices: &[usize]) -> &[usize] {
    let end = indices.iter().rposition(|&i| i != PAD_INDEX).map_or(0, |p| p + 1);
    &indices[..end]
}

/// Class probabilities in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedDistribution(pub [f64; NUM_CLASSES]);

impl PredictedDistribution {
    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&p| p >= 0.0 && p.is_finite()) && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}

/// Elementwise mean of two distributions.
pub fn ensemble_predict(p: &PredictedDistribution, q: &PredictedDistribution) -> PredictedDistribution {
    let mut out = [0.0; NUM_CLASSES];
    for (o, (a, b)) in out.iter_mut().zip(p.0.iter().zip(&q.0)) {
        *o = (a + b) / 2.0;
    }
    PredictedDistribution(out)
}

/// Argmax; exact ties go to the lowest class index.
pub fn predict_label(p: &PredictedDistribution) -> SentimentLabel {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if p.0[k] > p.0[best] {
            best = k;
        }
    }
    SentimentLabel::from_index(best).expect("index below NUM_CLASSES")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    BiLstm,
    Cnn,
}

impl ArchitectureKind {
    pub fn id(self) -> &'static str {
        match self {
            ArchitectureKind::BiLstm => "bilstm",
            ArchitectureKind::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "config", rename_all = "lowercase")]
pub enum ArchitectureConfig {
    BiLstm(BiLstmConfig),
    Cnn(CnnConfig),
}

impl ArchitectureConfig {
    pub fn kind(&self) -> ArchitectureKind {
        match self {
            ArchitectureConfig::BiLstm(_) => ArchitectureKind::BiLstm,
            ArchitectureConfig::Cnn(_) => ArchitectureKind::Cnn,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ArchitectureConfig::BiLstm(c) => c.vocab_size,
            ArchitectureConfig::Cnn(c) => c.vocab_size,
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            ArchitectureConfig::BiLstm(c) => c.embed_dim,
            ArchitectureConfig::Cnn(c) => c.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArchitectureConfig::BiLstm(c) => c.validate(),
            ArchitectureConfig::Cnn(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Classifier<F> {
    BiLstm(BiLstm<F>),
    Cnn(Cnn<F>),
}

impl<F: Real> Classifier<F> {
    pub fn new(config: ArchitectureConfig, embeddings: Option<&EmbeddingMatrix>, seed: u64) -> Result<Self> {
        Ok(match config {
            ArchitectureConfig::BiLstm(c) => Classifier::BiLstm(BiLstm::new(c, embeddings, seed)?),
            ArchitectureConfig::Cnn(c) => Classifier::Cnn(Cnn::new(c, embeddings, seed)?),
        })
    }

    pub fn zeroed(config: ArchitectureConfig) -> Result<Self> {
        Ok(match config {
            ArchitectureConfig::BiLstm(c) => Classifier::BiLstm(BiLstm::zeroed(c)?),
            ArchitectureConfig::Cnn(c) => Classifier::Cnn(Cnn::zeroed(c)?),
        })
    }

    pub fn config(&self) -> ArchitectureConfig {
        match self {
            Classifier::BiLstm(m) => ArchitectureConfig::BiLstm(m.config.clone()),
            Classifier::Cnn(m) => ArchitectureConfig::Cnn(m.config.clone()),
        }
    }

    pub fn kind(&self) -> ArchitectureKind {
        match self {
            Classifier::BiLstm(_) => ArchitectureKind::BiLstm,
            Classifier::Cnn(_) => ArchitectureKind::Cnn,
        }
    }

    pub fn params(&self) -> &ParamStore<F> {
        match self {
            Classifier::BiLstm(m) => &m.params,
            Classifier::Cnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        match self {
            Classifier::BiLstm(m) => &mut m.params,
            Classifier::Cnn(m) => &mut m.params,
        }
    }

    /// `[B, num_classes]` scores for a batch of index sequences.
    pub fn logits(&self, g: &mut Graph<'_, F>, batch: &[Vec<usize>], training: bool, rng: &mut RngStream) -> Result<Var> {
        match self {
            Classifier::BiLstm(m) => m.logits(g, batch, training, rng),
            Classifier::Cnn(m) => m.logits(g, batch, training, rng),
        }
    }

    /// Class distribution for one sequence.
    pub fn forward(&self, indices: &[usize], training: bool, rng: &mut RngStream) -> Result<PredictedDistribution> {
        let mut g = Graph::new(self.params());
        let z = self.logits(&mut g, &[indices.to_vec()], training, rng)?;
        let p = g.softmax(z, 1)?;
        let v = g.value(p).data();
        Ok(PredictedDistribution([v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]))
    }
}

/// Anything that maps texts to class distributions.
pub trait Predictor: Sync {
    fn predict(&self, texts: &[&str]) -> Result<Vec<PredictedDistribution>>;
}

/// Free-form training metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub seed: u64,
    pub epochs: usize,
    pub metrics: BTreeMap<String, f64>,
}

/// A trained classifier bundled with its vocabulary.
#[derive(Debug, Clone)]
pub struct SentimentModel {
    pub classifier: Classifier<f32>,
    pub vocab: Vocabulary,
    pub meta: TrainingMeta,
}

impl SentimentModel {
    pub fn new(config: ArchitectureConfig, vocab: Vocabulary, embeddings: Option<&EmbeddingMatrix>, seed: u64) -> Result<Self> {
        if config.vocab_size() != vocab.len() {
            return Err(Error::Config(format!(
                "model vocab_size {} does not match vocabulary of {} entries",
                config.vocab_size(),
                vocab.len()
            )));
        }
        Ok(SentimentModel {
            classifier: Classifier::new(config, embeddings, seed)?,
            vocab,
            meta: TrainingMeta::default(),
        })
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        encode(&tokenize(text), &self.vocab)
    }

    /// Inference-mode distribution for one text.
    pub fn predict_text(&self, text: &str) -> Result<PredictedDistribution> {
        // Dropout is off, so the stream is never drawn from.
        self.classifier.forward(&self.encode(text), false, &mut RngStream::new(0))
    }
}

impl Predictor for SentimentModel {
    fn predict(&self, texts: &[&str]) -> Result<Vec<PredictedDistribution>> {
        texts.par_iter().map(|t| self.predict_text(t)).collect()
    }
}

/// Two models whose predictions are averaged.
#[derive(Debug, Clone, Copy)]
pub struct Ensemble<'a> {
    pub first: &'a SentimentModel,
    pub second: &'a SentimentModel,
}

impl Predictor for Ensemble<'_> {
    fn predict(&self, texts: &[&str]) -> Result<Vec<PredictedDistribution>> {
        let p = self.first.predict(texts)?;
        let q = self.second.predict(texts)?;
        Ok(p.iter().zip(&q).map(|(a, b)| ensemble_predict(a, b)).collect())
    }
}
