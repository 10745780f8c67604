//! The SeMemNN classifier: pooled embeddings address a `d`-slot memory
//! through a shared projection, a semantic matrix reads one pooled vector,
//! the two are fused by ReLU and fed alongside the abstract tokens into an
//! LSTM-family head.

mod check;
mod config;
mod init;
pub mod layers;

use autodiff::{ParamStore, Real, Rng, Tape, Var};

use crate::data::Batch;
use crate::error::{Error, Result};

pub use check::{check_model, toy_batch, ModelCheck, ToyDims};
pub use config::{Head, ModelConfig, SemanticSource};
pub use init::{init_params, param_count, param_specs, Init, ParamSpec};
use layers::{AttentionWeights, LstmWeights};

/// Anything the trainer can fit: a parameter store plus a batched
/// logits graph built on a tape that reads that store.
pub trait TextClassifier<T: Real> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn num_classes(&self) -> usize;
    /// `[B, C]` logits. `tape` must read from [`params`](Self::params).
    fn logits(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var>;
    /// Model family tag stored in checkpoints.
    fn kind(&self) -> &'static str;
    fn config_json(&self) -> serde_json::Value;
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub addr: Var,
    pub sem: Var,
    pub fused: Var,
    pub logits: Var,
}

/// Per-example intermediate values.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub addr: Vec<T>,
    pub sem: Vec<T>,
    pub fused: Vec<T>,
    pub logits: Vec<T>,
}

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
    if batch.size == 0 {
        return Err(Error::InvalidData("empty batch".into()));
    }
    if batch.abstract_ids.len() != batch.size * batch.abstract_len || batch.content_ids.len() != batch.size * batch.content_len {
        return Err(Error::InvalidData("batch arrays do not match its shape".into()));
    }
    if let Some(&bad) = batch.abstract_ids.iter().chain(&batch.content_ids).find(|&&id| id >= config.vocab_size) {
        return Err(Error::InvalidData(format!("token id {bad} outside vocabulary of {}", config.vocab_size)));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= config.num_classes) {
        return Err(Error::InvalidData(format!("label {bad} outside {} classes", config.num_classes)));
    }
    Ok(())
}

/// Builds the head on `x = concat(abstract_embed_t, fused)` and returns
/// `[B, C]` logits.
pub fn run_classifier<T: Real>(
    tape: &mut Tape<'_, T>,
    abstract_embeds: Var,
    abstract_mask: &[bool],
    fused: Var,
    config: &ModelConfig,
) -> Result<Var> {
    let steps = tape.shape(abstract_embeds)[1];
    let tiled = tape.repeat_steps(fused, steps)?;
    let x = tape.concat(abstract_embeds, tiled)?;
    let features = match config.classifier {
        Head::L => {
            let w0 = LstmWeights::from_params(tape, "head.lstm0")?;
            let w1 = LstmWeights::from_params(tape, "head.lstm1")?;
            let first = layers::lstm_sequence(tape, x, abstract_mask, &w0, false)?;
            let seq = tape.stack_steps(&first.outputs)?;
            layers::lstm_sequence(tape, seq, abstract_mask, &w1, false)?.last
        }
        Head::B => {
            let wf = LstmWeights::from_params(tape, "head.fwd")?;
            let wb = LstmWeights::from_params(tape, "head.bwd")?;
            let f = layers::lstm_sequence(tape, x, abstract_mask, &wf, false)?;
            let b = layers::lstm_sequence(tape, x, abstract_mask, &wb, true)?;
            tape.concat(f.last, b.last)?
        }
        Head::SAB => {
            let wf = LstmWeights::from_params(tape, "head.fwd")?;
            let wb = LstmWeights::from_params(tape, "head.bwd")?;
            let wa = AttentionWeights::from_params(tape, "head.attn")?;
            let f = layers::lstm_sequence(tape, x, abstract_mask, &wf, false)?;
            let b = layers::lstm_sequence(tape, x, abstract_mask, &wb, true)?;
            let fs = tape.stack_steps(&f.outputs)?;
            let bs = tape.stack_steps(&b.outputs)?;
            let h = tape.concat(fs, bs)?;
            let att = layers::self_attention_local(tape, h, abstract_mask, config.attention_width, &wa)?;
            tape.masked_mean_pool(att.output, abstract_mask)?
        }
    };
    let w = tape.param("out.w")?;
    let b = tape.param("out.b")?;
    let logits = tape.matmul(features, w)?;
    Ok(tape.add_bias(logits, b)?)
}

/// The full forward graph on a tape whose parameter store matches `config`.
pub fn forward<T: Real>(tape: &mut Tape<'_, T>, config: &ModelConfig, batch: &Batch) -> Result<ForwardVars> {
    check_batch(config, batch)?;
    let (b, la, lc) = (batch.size, batch.abstract_len, batch.content_len);
    let e = tape.param("embed.E")?;
    let p = tape.param("memory.P")?;
    let z = tape.param("memory.Z")?;
    let abs_embeds = layers::embed_sequence(tape, e, &batch.abstract_ids, b, la)?;
    let abs_vec = tape.masked_mean_pool(abs_embeds, &batch.abstract_mask)?;
    let ct_vec = layers::pool_embed(tape, e, &batch.content_ids, &batch.content_mask, b, lc)?;
    let addr = layers::address(tape, abs_vec, ct_vec, p)?;
    let source = match config.semantic_source {
        SemanticSource::Abs => abs_vec,
        SemanticSource::Ct => ct_vec,
    };
    let sem = layers::semantic_read(tape, source, z)?;
    let fused = layers::fuse(tape, addr, sem)?;
    let logits = run_classifier(tape, abs_embeds, &batch.abstract_mask, fused, config)?;
    Ok(ForwardVars { addr, sem, fused, logits })
}

/// Argmax with ties going to the lowest index.
pub fn predict<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`predict`] over `[B, C]` logits.
pub fn predict_rows<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits.chunks(classes).map(predict).collect()
}

#[derive(Clone, Debug)]
pub struct SeMemNN<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> SeMemNN<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, &mut Rng::new(seed))?;
        Ok(SeMemNN { config, params })
    }

    /// Wraps an existing store after checking names and shapes.
    pub fn from_params(config: ModelConfig, mut params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::CheckpointConfigMismatch(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(params.iter()) {
            if s.name != p.name || s.shape != p.tensor.shape() {
                return Err(Error::CheckpointConfigMismatch(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        if params.pinned_rows().is_empty() {
            params.pin_zero_row("embed.E", 0)?;
        }
        Ok(SeMemNN { config, params })
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::with_params(&self.params)
    }

    pub fn trace(&self, batch: &Batch) -> Result<Vec<ForwardTrace<T>>> {
        let mut tape = self.tape();
        let v = forward(&mut tape, &self.config, batch)?;
        let (m, c) = (self.config.mem_rows, self.config.num_classes);
        let rows = |var: Var, w: usize, i: usize| tape.data(var)[i * w..(i + 1) * w].to_vec();
        Ok((0..batch.size)
            .map(|i| ForwardTrace {
                addr: rows(v.addr, m, i),
                sem: rows(v.sem, m, i),
                fused: rows(v.fused, m, i),
                logits: rows(v.logits, c, i),
            })
            .collect())
    }

    /// `[B, C]` logits as a flat vector.
    pub fn logits_of(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut tape = self.tape();
        let v = forward(&mut tape, &self.config, batch)?;
        Ok(tape.data(v.logits).to_vec())
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        Ok(predict_rows(&self.logits_of(batch)?, self.config.num_classes))
    }
}

impl<T: Real> TextClassifier<T> for SeMemNN<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var> {
        Ok(forward(tape, &self.config, batch)?.logits)
    }

    fn kind(&self) -> &'static str {
        "sememnn"
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}
