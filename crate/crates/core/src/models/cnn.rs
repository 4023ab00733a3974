//! Convolutional sentence classifier with max-over-time pooling.

use serde::{Deserialize, Serialize};

use super::{init_uniform, trim_padding};
use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nncore::{Graph, ParamId, ParamStore, Real, RngStream, Tensor, Var};
use crate::text::{EmbeddingMatrix, PAD_INDEX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub maps_per_width: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl CnnConfig {
    pub fn standard(vocab_size: usize) -> Self {
        CnnConfig {
            vocab_size,
            embed_dim: 200,
            filter_widths: vec![3, 4, 5],
            maps_per_width: 200,
            dropout: 0.5,
            num_classes: NUM_CLASSES,
        }
    }

    /// Width of the pooled feature vector fed to the classifier head.
    pub fn feature_dim(&self) -> usize {
        self.filter_widths.len() * self.maps_per_width
    }

    pub fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.vocab_size, self.embed_dim, self.maps_per_width, self.num_classes];
        if sizes.contains(&0) || self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::Config(format!("CNN sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Cnn<F> {
    pub config: CnnConfig,
    pub params: ParamStore<F>,
    embedding: ParamId,
    // (filter bank, bias) per width
    convs: Vec<(ParamId, ParamId)>,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl<F: Real> Cnn<F> {
    pub fn zeroed(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (e, maps) = (config.embed_dim, config.maps_per_width);
        let embedding = params.add("embedding", Tensor::zeros(&[config.vocab_size, e]));
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| {
                (
                    params.add(format!("conv{w}.weight"), Tensor::zeros(&[w, e, maps])),
                    params.add(format!("conv{w}.bias"), Tensor::zeros(&[maps])),
                )
            })
            .collect();
        let fc_w = params.add("fc.weight", Tensor::zeros(&[config.feature_dim(), config.num_classes]));
        let fc_b = params.add("fc.bias", Tensor::zeros(&[config.num_classes]));
        Ok(Cnn {
            config,
            params,
            embedding,
            convs,
            fc_w,
            fc_b,
        })
    }

    pub fn new(config: CnnConfig, embeddings: Option<&EmbeddingMatrix>, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let rng = RngStream::new(seed);
        let (v, e) = (model.config.vocab_size, model.config.embed_dim);
        let table = match embeddings {
            Some(m) => m.clone(),
            None => EmbeddingMatrix::random(v, e, rng.fork("embedding").seed()),
        };
        if table.dim != e || table.rows() != v {
            return Err(Error::shape("embedding init", &[v, e], &[table.rows(), table.dim]));
        }
        for (dst, &src) in model.params.get_mut(model.embedding).value.data_mut().iter_mut().zip(&table.values) {
            *dst = F::lit(src as f64);
        }
        let mut rng = rng.fork("weights");
        for (i, &(w, b)) in model.convs.iter().enumerate() {
            let k = 1.0 / ((model.config.filter_widths[i] * e) as f64).sqrt();
            init_uniform(&mut model.params.get_mut(w).value, k, &mut rng);
            init_uniform(&mut model.params.get_mut(b).value, k, &mut rng);
        }
        let k = 1.0 / (model.config.feature_dim() as f64).sqrt();
        init_uniform(&mut model.params.get_mut(model.fc_w).value, k, &mut rng);
        init_uniform(&mut model.params.get_mut(model.fc_b).value, k, &mut rng);
        Ok(model)
    }

    /// Pooled `[1, feature_dim]` features of one sequence. Inputs shorter than
    /// the widest filter are right-padded with the pad index.
    pub fn features(&self, g: &mut Graph<'_, F>, indices: &[usize]) -> Result<Var> {
        let seq = trim_padding(indices);
        if seq.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut padded = seq.to_vec();
        padded.resize(seq.len().max(self.config.max_width()), PAD_INDEX);
        let x = g.embedding(self.embedding, &padded, Some(PAD_INDEX))?;
        let mut pooled = Vec::with_capacity(self.convs.len());
        for &(w, b) in &self.convs {
            let (wv, bv) = (g.param(w), g.param(b));
            let conv = g.conv1d(x, wv)?;
            let conv = g.add_bias(conv, bv)?;
            let act = g.relu(conv)?;
            pooled.push(g.max_over_time(act)?);
        }
        g.concat(&pooled, 1)
    }

    pub fn logits(&self, g: &mut Graph<'_, F>, batch: &[Vec<usize>], training: bool, rng: &mut RngStream) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let rows = batch.iter().map(|s| self.features(g, s)).collect::<Result<Vec<_>>>()?;
        let feats = g.concat(&rows, 0)?;
        let feats = g.dropout(feats, self.config.dropout, training, rng)?;
        let w = g.param(self.fc_w);
        let b = g.param(self.fc_b);
        let z = g.matmul(feats, w)?;
        g.add_bias(z, b)
    }
}
