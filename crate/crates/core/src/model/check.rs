//! Finite-difference check of the whole model at toy dimensions.

use autodiff::rng::derive_seed;
use autodiff::{grad_check, GradCheckReport, OpKind, ParamStore, Rng, Tape};

use super::config::{Head, ModelConfig, SemanticSource};
use super::forward;
use super::init::init_params;
use crate::data::{Batch, EncodedExample};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyDims {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub width: usize,
    pub lstm_units: usize,
    pub attention_width: usize,
    pub abstract_len: usize,
    pub content_len: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        ToyDims { vocab_size: 12, num_classes: 3, width: 4, lstm_units: 3, attention_width: 4, abstract_len: 5, content_len: 6 }
    }
}

impl ToyDims {
    pub fn config(&self, head: Head, source: SemanticSource) -> ModelConfig {
        let mut c = ModelConfig::new(self.vocab_size, self.num_classes, head, source).with_width(self.width);
        c.lstm_units = self.lstm_units;
        c.attention_width = self.attention_width;
        c.abstract_len = self.abstract_len;
        c.content_len = self.content_len;
        c
    }
}

#[derive(Clone, Debug)]
pub struct ModelCheck {
    pub config: ModelConfig,
    pub report: GradCheckReport,
    /// Smallest |addr + sem| entry; finite differences straddle the ReLU
    /// kink when this is below the step.
    pub relu_margin: f64,
}

fn random_example(rng: &mut Rng, cfg: &ModelConfig, n_abs: usize, n_ct: usize, label: usize) -> EncodedExample {
    let mut seq = |len: usize, n: usize| {
        let ids: Vec<u32> = (0..len).map(|i| if i < n { 1 + rng.below(cfg.vocab_size as u64 - 1) as u32 } else { 0 }).collect();
        let mask: Vec<bool> = (0..len).map(|i| i < n).collect();
        (ids, mask)
    };
    let (abstract_ids, abstract_mask) = seq(cfg.abstract_len, n_abs);
    let (content_ids, content_mask) = seq(cfg.content_len, n_ct);
    EncodedExample { label, abstract_ids, abstract_mask, content_ids, content_mask }
}

/// Two examples, one full length and one padded, with distinct labels.
pub fn toy_batch(cfg: &ModelConfig, seed: u64) -> Batch {
    let mut rng = Rng::new(seed);
    let (la, lc) = (cfg.abstract_len, cfg.content_len);
    let exs = [
        random_example(&mut rng, cfg, la, lc, 0),
        random_example(&mut rng, cfg, la.min(2), lc.min(4), cfg.num_classes - 1),
    ];
    Batch::from_examples(&exs, la, lc)
}

/// Compares every parameter gradient of the batch cross-entropy with
/// central differences. Weights are scaled up from their init so that
/// gradients sit well above finite-difference noise.
pub fn check_model(config: &ModelConfig, seed: u64, step: f64, tol: f64, fault: Option<OpKind>) -> Result<ModelCheck> {
    config.validate()?;
    let batch = toy_batch(config, derive_seed(seed, 1));
    let mut store: ParamStore<f64> = init_params(config, &mut Rng::new(derive_seed(seed, 0)))?;
    for p in store.iter_mut() {
        let k = if p.name == "embed.E" { 10.0 } else { 2.0 };
        p.tensor.data_mut().iter_mut().for_each(|v| *v *= k);
    }
    store.enforce_pinned();
    let relu_margin = {
        let mut tape = Tape::with_params(&store);
        let f = forward(&mut tape, config, &batch)?;
        tape.data(f.addr).iter().zip(tape.data(f.sem)).map(|(a, s)| (a + s).abs()).fold(f64::INFINITY, f64::min)
    };
    let report = grad_check::<_, crate::Error>(
        |tape: &mut Tape<'_, f64>| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
            let f = forward(tape, config, &batch)?;
            Ok(tape.cross_entropy(f.logits, &batch.labels)?)
        },
        &mut store,
        step,
        tol,
    )?;
    Ok(ModelCheck { config: config.clone(), report, relu_margin })
}
