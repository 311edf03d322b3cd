use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::TrainError;
use crate::hook::{LayerKind, LayerSpec};

const INIT_STD: f32 = 0.02;

/// Decoder-only transformer dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab: usize,
    pub context: usize,
    /// Reuse the token embedding as the output projection.
    #[serde(default)]
    pub tied_head: bool,
}

impl Default for TinyModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            ffn_mult: 4,
            vocab: 256,
            context: 64,
            tied_head: false,
        }
    }
}

impl TinyModelConfig {
    /// GPT-2 small dimensions with an untied output head.
    pub fn gpt2_small() -> Self {
        Self {
            layers: 12,
            d_model: 768,
            heads: 12,
            ffn_mult: 4,
            vocab: 50257,
            context: 1024,
            tied_head: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("vocab", self.vocab),
            ("context", self.context),
        ] {
            if v == 0 {
                return Err(TrainError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(TrainError::Invalid(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Parameter tensors in flat order: name, kind, rows, cols.
    fn tensors(&self) -> Vec<(String, LayerKind, usize, usize)> {
        let d = self.d_model;
        let f = self.ffn_mult * d;
        let mut t = vec![
            ("wte".to_owned(), LayerKind::Embedding, self.vocab, d),
            (
                "wpe".to_owned(),
                LayerKind::PositionalEmbedding,
                self.context,
                d,
            ),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("h.{l}.{s}");
            t.extend([
                (p("ln_1.weight"), LayerKind::Norm, 1, d),
                (p("ln_1.bias"), LayerKind::Norm, 1, d),
                (p("attn.c_attn.weight"), LayerKind::AttentionQkv, d, 3 * d),
                (p("attn.c_attn.bias"), LayerKind::Bias, 1, 3 * d),
                (p("attn.c_proj.weight"), LayerKind::AttentionOutProj, d, d),
                (p("attn.c_proj.bias"), LayerKind::Bias, 1, d),
                (p("ln_2.weight"), LayerKind::Norm, 1, d),
                (p("ln_2.bias"), LayerKind::Norm, 1, d),
                (p("mlp.c_fc.weight"), LayerKind::FeedForward, d, f),
                (p("mlp.c_fc.bias"), LayerKind::Bias, 1, f),
                (p("mlp.c_proj.weight"), LayerKind::FeedForward, f, d),
                (p("mlp.c_proj.bias"), LayerKind::Bias, 1, d),
            ]);
        }
        t.push(("ln_f.weight".to_owned(), LayerKind::Norm, 1, d));
        t.push(("ln_f.bias".to_owned(), LayerKind::Norm, 1, d));
        if !self.tied_head {
            t.push((
                "lm_head.weight".to_owned(),
                LayerKind::LmHead,
                d,
                self.vocab,
            ));
        }
        t
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.tensors()
            .into_iter()
            .map(|(name, kind, r, c)| LayerSpec::new(name, kind, r * c))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2 * t.3).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub kind: LayerKind,
    pub rows: usize,
    pub cols: usize,
    pub range: Range<usize>,
}

/// Parameters in one flat vector plus the tensor layout over it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TinyModelConfig,
    pub layout: Vec<TensorSlot>,
    pub params: Vec<f32>,
}

/// Token windows: `inputs` and `targets` are `batch x seq`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn from_windows(windows: &[&[u8]]) -> Self {
        let seq = windows.first().map_or(0, |w| w.len() - 1);
        let mut inputs = Vec::with_capacity(windows.len() * seq);
        let mut targets = Vec::with_capacity(windows.len() * seq);
        for w in windows {
            assert_eq!(w.len(), seq + 1, "windows share one length");
            inputs.extend(w[..seq].iter().map(|&b| b as usize));
            targets.extend(w[1..].iter().map(|&b| b as usize));
        }
        Self {
            batch: windows.len(),
            seq,
            inputs,
            targets,
        }
    }

    /// Rows `start..end` of the batch.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let r = start * self.seq..end * self.seq;
        Self {
            batch: end - start,
            seq: self.seq,
            inputs: self.inputs[r.clone()].to_vec(),
            targets: self.targets[r].to_vec(),
        }
    }

    /// The batch repeated twice.
    pub fn doubled(&self) -> Self {
        Self {
            batch: self.batch * 2,
            seq: self.seq,
            inputs: self.inputs.repeat(2),
            targets: self.targets.repeat(2),
        }
    }
}

/// GPT-2 style initialisation: normal weights, residual projections scaled
/// by the depth, zero biases and unit norm gains.
pub fn build_model(config: &TinyModelConfig, seed: u64) -> Result<Model, TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let resid =
        Normal::new(0.0f32, INIT_STD / (2.0 * config.layers as f32).sqrt()).expect("valid std");
    let mut layout = Vec::new();
    let mut params = Vec::with_capacity(config.parameter_count());
    for (name, kind, rows, cols) in config.tensors() {
        let start = params.len();
        let n = rows * cols;
        match kind {
            LayerKind::Norm if name.ends_with("weight") => {
                params.extend(std::iter::repeat_n(1.0f32, n))
            }
            LayerKind::Norm | LayerKind::Bias => params.extend(std::iter::repeat_n(0.0f32, n)),
            _ if name.ends_with("c_proj.weight") => {
                params.extend((0..n).map(|_| resid.sample(&mut rng)))
            }
            _ => params.extend((0..n).map(|_| base.sample(&mut rng))),
        }
        layout.push(TensorSlot {
            name,
            kind,
            rows,
            cols,
            range: start..params.len(),
        });
    }
    Ok(Model {
        config: config.clone(),
        layout,
        params,
    })
}

impl Model {
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.config.layer_specs()
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), TrainError> {
        if batch.seq == 0 || batch.batch == 0 {
            return Err(TrainError::Invalid("empty batch".into()));
        }
        if batch.seq > self.config.context {
            return Err(TrainError::Invalid(format!(
                "sequence length {} exceeds context {}",
                batch.seq, self.config.context
            )));
        }
        if let Some(&t) = batch
            .inputs
            .iter()
            .chain(&batch.targets)
            .find(|&&t| t >= self.config.vocab)
        {
            return Err(TrainError::Invalid(format!(
                "token {t} outside vocabulary {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    fn forward(&self, params: &[f32], batch: &Batch) -> (Tape, Var, f64) {
        let c = &self.config;
        let mut tape = Tape::new();
        let mut slots = self.layout.iter();
        let mut next = |tape: &mut Tape| {
            let s = slots.next().expect("layout covers the forward pass");
            tape.param(&params[s.range.clone()], s.rows, s.cols, s.range.start)
        };
        let wte = next(&mut tape);
        let wpe = next(&mut tape);
        let tok = tape.embedding(wte, &batch.inputs);
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let pos = tape.embedding(wpe, &positions);
        let mut x = tape.add(tok, pos);
        for _ in 0..c.layers {
            let (g1, b1) = (next(&mut tape), next(&mut tape));
            let (wqkv, bqkv) = (next(&mut tape), next(&mut tape));
            let (wo, bo) = (next(&mut tape), next(&mut tape));
            let (g2, b2) = (next(&mut tape), next(&mut tape));
            let (w1, bb1) = (next(&mut tape), next(&mut tape));
            let (w2, bb2) = (next(&mut tape), next(&mut tape));

            let h = tape.layer_norm(x, g1, b1);
            let qkv = tape.matmul(h, wqkv);
            let qkv = tape.add_row(qkv, bqkv);
            let a = tape.causal_attention(qkv, batch.batch, batch.seq, c.heads);
            let o = tape.matmul(a, wo);
            let o = tape.add_row(o, bo);
            x = tape.add(x, o);

            let h = tape.layer_norm(x, g2, b2);
            let f = tape.matmul(h, w1);
            let f = tape.add_row(f, bb1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, bb2);
            x = tape.add(x, f);
        }
        let (gf, bf) = (next(&mut tape), next(&mut tape));
        let x = tape.layer_norm(x, gf, bf);
        let logits = if c.tied_head {
            tape.matmul_t(x, wte)
        } else {
            let head = next(&mut tape);
            tape.matmul(x, head)
        };
        let (loss, value) = tape.cross_entropy(logits, &batch.targets);
        (tape, loss, value)
    }

    /// Mean next-token cross-entropy under `params` (same layout as the
    /// model's own).
    pub fn loss_with(&self, params: &[f32], batch: &Batch) -> Result<f64, TrainError> {
        self.check_batch(batch)?;
        Ok(self.forward(params, batch).2)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, TrainError> {
        self.loss_with(&self.params, batch)
    }

    /// Loss and its gradient with respect to every parameter, flat.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(f64, Vec<f32>), TrainError> {
        self.check_batch(batch)?;
        let (tape, root, loss) = self.forward(&self.params, batch);
        let mut grads = vec![0.0f32; self.params.len()];
        tape.backward(root, &mut grads);
        Ok((loss, grads))
    }
}
