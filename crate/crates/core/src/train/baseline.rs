//! Bag-of-words softmax regression: the length-normalized count vector of
//! title and description tokens through one affine layer.

use autodiff::{ParamStore, Real, Tape, Tensor, Var};
use serde_json::json;

use super::fit::{train, TrainOptions, TrainOutcome};
use super::optim::TrainConfig;
use crate::data::{Batch, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::TextClassifier;

#[derive(Clone, Debug)]
pub struct BowModel<T: Real> {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub params: ParamStore<T>,
}

impl<T: Real> BowModel<T> {
    /// Zero-initialized; the objective is convex so no symmetry breaking is
    /// needed.
    pub fn new(vocab_size: usize, num_classes: usize) -> Result<Self> {
        if vocab_size < 2 || num_classes < 2 {
            return Err(Error::Config("bag-of-words model needs a vocabulary and at least two classes".into()));
        }
        let mut params = ParamStore::new();
        params.insert("bow.b", Tensor::zeros(&[num_classes]))?;
        params.insert("bow.w", Tensor::zeros(&[vocab_size, num_classes]))?;
        Ok(BowModel { vocab_size, num_classes, params })
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_params(vocab_size: usize, num_classes: usize, params: ParamStore<T>) -> Result<Self> {
        let want = BowModel::<T>::new(vocab_size, num_classes)?;
        let same = want.params.len() == params.len()
            && want.params.iter().all(|p| params.get(&p.name).map(|q| q.shape() == p.tensor.shape()).unwrap_or(false));
        if !same {
            return Err(Error::CheckpointConfigMismatch(format!(
                "parameters do not form a {vocab_size}x{num_classes} bag-of-words model"
            )));
        }
        Ok(BowModel { vocab_size, num_classes, params })
    }
}

impl<T: Real> TextClassifier<T> for BowModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Mean of the weight rows of all unmasked tokens, which equals the
    /// normalized count vector times the weight matrix.
    fn logits(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var> {
        let (la, lc) = (batch.abstract_len, batch.content_len);
        let len = la + lc;
        let mut ids = Vec::with_capacity(batch.size * len);
        let mut mask = Vec::with_capacity(batch.size * len);
        for r in 0..batch.size {
            ids.extend_from_slice(&batch.abstract_ids[r * la..(r + 1) * la]);
            ids.extend_from_slice(&batch.content_ids[r * lc..(r + 1) * lc]);
            mask.extend_from_slice(&batch.abstract_mask[r * la..(r + 1) * la]);
            mask.extend_from_slice(&batch.content_mask[r * lc..(r + 1) * lc]);
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::InvalidData(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let w = tape.param("bow.w")?;
        let b = tape.param("bow.b")?;
        let rows = tape.embedding_gather(w, &ids, &[batch.size, len])?;
        let pooled = tape.masked_mean_pool(rows, &mask)?;
        Ok(tape.add_bias(pooled, b)?)
    }

    fn kind(&self) -> &'static str {
        "bow"
    }

    fn config_json(&self) -> serde_json::Value {
        json!({ "vocab_size": self.vocab_size, "num_classes": self.num_classes })
    }
}

/// Defaults for the baseline: a larger step than the neural model since
/// the zero-initialized linear model starts far from its optimum.
pub fn bow_train_config(seed: u64) -> TrainConfig {
    TrainConfig { lr: 1e-2, max_epochs: 10, seed, ..TrainConfig::default() }
}

/// Trains the baseline and evaluates its best checkpoint on `test`.
pub fn train_bow_baseline(
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    vocab_size: usize,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<(BowModel<f32>, TrainOutcome)> {
    let present = train_split.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::InvalidData(format!("training split covers {present} class(es); need at least two")));
    }
    let mut model = BowModel::<f32>::new(vocab_size, train_split.num_classes)?;
    let outcome = train(&mut model, train_split, test_split, cfg, opts)?;
    Ok((model, outcome))
}
