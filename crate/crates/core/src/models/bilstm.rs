//! Stacked bidirectional LSTM classifier.
//!
//! embedding -> dropout -> BiLSTM -> dropout -> BiLSTM -> dropout -> linear.
//! Between layers the full per-step `[forward; backward]` sequence is passed
//! on; the classifier head sees the top layer's final forward and backward
//! hidden states.

use serde::{Deserialize, Serialize};

use super::{init_uniform, trim_padding};
use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nncore::{Graph, ParamId, ParamStore, Real, RngStream, Tensor, Var};
use crate::text::{EmbeddingMatrix, PAD_INDEX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl BiLstmConfig {
    /// Message-level classifier: hidden size 256.
    pub fn stage1(vocab_size: usize) -> Self {
        BiLstmConfig {
            vocab_size,
            embed_dim: 200,
            hidden_size: 256,
            num_layers: 2,
            dropout: 0.5,
            num_classes: NUM_CLASSES,
        }
    }

    /// Reply-sentiment classifier: hidden size 300.
    pub fn stage2(vocab_size: usize) -> Self {
        BiLstmConfig {
            hidden_size: 300,
            ..Self::stage1(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.vocab_size, self.embed_dim, self.hidden_size, self.num_layers, self.num_classes];
        if positive.contains(&0) || self.vocab_size < 2 {
            return Err(Error::Config(format!("BiLSTM sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Weights of one LSTM direction. Gate blocks are ordered input, forget,
/// cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmWeights {
    /// Graph nodes for these weights, shared across all steps of a sequence.
    pub fn bind<F: Real>(&self, g: &mut Graph<'_, F>) -> LstmVars {
        LstmVars {
            w_ih: g.param(self.w_ih),
            w_hh: g.param(self.w_hh),
            bias: g.param(self.bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step on a batch: `x [B, in]`, `h, c [B, H]`.
pub fn lstm_cell<F: Real>(g: &mut Graph<'_, F>, w: LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(w.w_hh)[0];
    let LstmVars { w_ih, w_hh, bias } = w;
    let xi = g.matmul(x, w_ih)?;
    let hh = g.matmul(h, w_hh)?;
    let pre = g.add(xi, hh)?;
    let gates = g.add_bias(pre, bias)?;
    let gate = |g: &mut Graph<'_, F>, k: usize| g.narrow(gates, 1, k * hidden, hidden);
    let (i, f, cand, o) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let tc = g.tanh(c_new)?;
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Runs one direction over per-step inputs. Rows whose sequence has ended
/// (`lengths[b] <= t`) keep their previous state. Returns the per-step
/// hidden states in time order and the final hidden state.
pub fn lstm_direction<F: Real>(
    g: &mut Graph<'_, F>,
    w: LstmWeights,
    inputs: &[Var],
    lengths: &[usize],
    reverse: bool,
) -> Result<(Vec<Var>, Var)> {
    let hidden = g.params().value(w.w_hh).shape()[0];
    let w = w.bind(g);
    let batch = lengths.len();
    let zeros = Tensor::zeros(&[batch, hidden]);
    let mut h = g.constant(zeros.clone())?;
    let mut c = g.constant(zeros)?;
    let steps = inputs.len();
    let mut outputs = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let (h_new, c_new) = lstm_cell(g, w, inputs[t], h, c)?;
        let live: Vec<bool> = lengths.iter().map(|&n| t < n).collect();
        h = g.blend(h_new, h, &live)?;
        c = g.blend(c_new, c, &live)?;
        outputs[t] = h;
    }
    Ok((outputs, h))
}

#[derive(Debug, Clone)]
pub struct BiLstm<F> {
    pub config: BiLstmConfig,
    pub params: ParamStore<F>,
    embedding: ParamId,
    // [layer][direction]
    layers: Vec<[LstmWeights; 2]>,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl<F: Real> BiLstm<F> {
    /// All-zero parameters with the right names and shapes.
    pub fn zeroed(config: BiLstmConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (e, h) = (config.embed_dim, config.hidden_size);
        let embedding = params.add("embedding", Tensor::zeros(&[config.vocab_size, e]));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let input = if l == 0 { e } else { 2 * h };
            let mut dir = |name: &str| LstmWeights {
                w_ih: params.add(format!("lstm{l}.{name}.w_ih"), Tensor::zeros(&[input, 4 * h])),
                w_hh: params.add(format!("lstm{l}.{name}.w_hh"), Tensor::zeros(&[h, 4 * h])),
                bias: params.add(format!("lstm{l}.{name}.bias"), Tensor::zeros(&[4 * h])),
            };
            layers.push([dir("fwd"), dir("bwd")]);
        }
        let fc_w = params.add("fc.weight", Tensor::zeros(&[2 * h, config.num_classes]));
        let fc_b = params.add("fc.bias", Tensor::zeros(&[config.num_classes]));
        Ok(BiLstm {
            config,
            params,
            embedding,
            layers,
            fc_w,
            fc_b,
        })
    }

    /// Seeded initialization. Recurrent and output weights are uniform in
    /// `±1/sqrt(fan)`; the embedding table comes from `embeddings` when
    /// given, else uniform `±0.05` with a zero pad row.
    pub fn new(config: BiLstmConfig, embeddings: Option<&EmbeddingMatrix>, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let rng = RngStream::new(seed);
        let table = match embeddings {
            Some(m) => m.clone(),
            None => EmbeddingMatrix::random(model.config.vocab_size, model.config.embed_dim, rng.fork("embedding").seed()),
        };
        if table.dim != model.config.embed_dim || table.rows() != model.config.vocab_size {
            return Err(Error::shape(
                "embedding init",
                &[model.config.vocab_size, model.config.embed_dim],
                &[table.rows(), table.dim],
            ));
        }
        let emb = model.params.get_mut(model.embedding);
        for (dst, &src) in emb.value.data_mut().iter_mut().zip(&table.values) {
            *dst = F::lit(src as f64);
        }
        let k_lstm = 1.0 / (model.config.hidden_size as f64).sqrt();
        let k_fc = 1.0 / ((2 * model.config.hidden_size) as f64).sqrt();
        let mut rng = rng.fork("weights");
        for id in model.params.ids().skip(1) {
            let k = if id == model.fc_w || id == model.fc_b { k_fc } else { k_lstm };
            init_uniform(&mut model.params.get_mut(id).value, k, &mut rng);
        }
        Ok(model)
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    pub fn layer_weights(&self, layer: usize, backward: bool) -> LstmWeights {
        self.layers[layer][usize::from(backward)]
    }

    /// Unnormalized class scores `[B, num_classes]` for a batch of index
    /// sequences. Trailing padding is ignored.
    pub fn logits(&self, g: &mut Graph<'_, F>, batch: &[Vec<usize>], training: bool, rng: &mut RngStream) -> Result<Var> {
        let seqs: Vec<&[usize]> = batch.iter().map(|s| trim_padding(s)).collect();
        if batch.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyInput);
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let steps = *lengths.iter().max().expect("non-empty batch");
        let p = self.config.dropout;

        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let idx: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD_INDEX)).collect();
            let x = g.embedding(self.embedding, &idx, Some(PAD_INDEX))?;
            inputs.push(g.dropout(x, p, training, rng)?);
        }

        let mut summary = None;
        for (l, [fwd, bwd]) in self.layers.iter().enumerate() {
            let (out_f, last_f) = lstm_direction(g, *fwd, &inputs, &lengths, false)?;
            let (out_b, last_b) = lstm_direction(g, *bwd, &inputs, &lengths, true)?;
            if l + 1 == self.layers.len() {
                summary = Some(g.concat(&[last_f, last_b], 1)?);
            } else {
                for t in 0..steps {
                    let both = g.concat(&[out_f[t], out_b[t]], 1)?;
                    inputs[t] = g.dropout(both, p, training, rng)?;
                }
            }
        }
        let summary = summary.expect("at least one layer");
        let summary = g.dropout(summary, p, training, rng)?;
        let w = g.param(self.fc_w);
        let b = g.param(self.fc_b);
        let z = g.matmul(summary, w)?;
        g.add_bias(z, b)
    }
}
