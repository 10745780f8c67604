use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autodiff::rng::derive_seed;
use autodiff::{ParamStore, Real, Tape};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::optim::{clip_gradients, optimizer_step, OptimizerState, TrainConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointRef};
use crate::data::{make_batches, stratified_split, Batch, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::{predict, TextClassifier};

/// Stream id for the validation carve-out, kept apart from epoch shuffles
/// (which use the epoch number).
const VALIDATION_STREAM: u64 = 0x76616c;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub error_pct: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error_pct: f64,
    pub val_loss: f64,
    pub val_error_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_error_pct: Option<f64>,
    pub wall_seconds: f64,
}

/// Loop bookkeeping stored in `last.ckpt` for resumption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_error_pct: f64,
    pub since_improvement: usize,
    pub initial_val: EvalResult,
    pub history: Vec<EpochMetrics>,
    pub train_config: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Where metrics, checkpoints and the report go; nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.ckpt`.
    pub resume: bool,
    /// When false, every `wall_seconds`/`total_seconds` is written as 0 so
    /// output files are byte-comparable.
    pub record_wall_time: bool,
    pub eval_test_each_epoch: bool,
    /// Evaluation worker threads. Results do not depend on it.
    pub threads: usize,
    pub vocab_hash: Option<String>,
    /// Print one line per epoch to stdout.
    pub progress: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            out_dir: None,
            resume: false,
            record_wall_time: true,
            eval_test_each_epoch: false,
            threads: 1,
            vocab_hash: None,
            progress: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial_val: EvalResult,
    pub epochs: Vec<EpochMetrics>,
    /// 0 means the initial model was never beaten.
    pub best_epoch: usize,
    pub best_val_error_pct: f64,
    /// Best checkpoint on the test split.
    pub test: EvalResult,
    pub stopped_early: bool,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: Value,
    pub best_epoch: usize,
    pub test_error_pct: f64,
    pub test_loss: f64,
    pub param_count: usize,
    pub total_seconds: f64,
}

/// Per-row cross-entropy in f64 and whether the prediction was right.
fn score_rows<T: Real>(logits: &[T], labels: &[usize], classes: usize) -> Vec<(f64, bool)> {
    logits
        .chunks(classes)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            (lse - row[label].as_f64(), predict(row) == label)
        })
        .collect()
}

/// Sums per-example scores in split order so the totals do not depend on
/// batching, shuffling or threading.
fn summarize(scores: &[(f64, bool)]) -> EvalResult {
    let n = scores.len();
    let loss: f64 = scores.iter().map(|s| s.0).sum();
    let wrong = scores.iter().filter(|s| !s.1).count();
    EvalResult { loss: loss / n as f64, error_pct: 100.0 * wrong as f64 / n as f64, count: n }
}

fn score_batches<T, M>(model: &M, batches: &[Batch]) -> Result<Vec<(usize, (f64, bool))>>
where
    T: Real,
    M: TextClassifier<T>,
{
    let mut out = Vec::new();
    for batch in batches {
        let mut tape = Tape::with_params(model.params());
        let logits = model.logits(&mut tape, batch)?;
        let scores = score_rows(tape.data(logits), &batch.labels, model.num_classes());
        out.extend(batch.indices.iter().copied().zip(scores));
    }
    Ok(out)
}

/// Loss and error over `split` without touching parameters.
pub fn evaluate<T, M>(model: &M, split: &DatasetSplit, batch_size: usize, threads: usize) -> Result<EvalResult>
where
    T: Real,
    M: TextClassifier<T> + Sync,
{
    if split.is_empty() {
        return Err(Error::InvalidData("cannot evaluate an empty split".into()));
    }
    let batches: Vec<Batch> = make_batches(split, batch_size.max(1), None).collect();
    let threads = threads.clamp(1, batches.len());
    let mut scores = vec![(0.0, false); split.len()];
    if threads == 1 {
        for (i, s) in score_batches(model, &batches)? {
            scores[i] = s;
        }
    } else {
        let per = batches.len().div_ceil(threads);
        let results: Vec<Result<Vec<(usize, (f64, bool))>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches.chunks(per).map(|shard| scope.spawn(move || score_batches(model, shard))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        for r in results {
            for (i, s) in r? {
                scores[i] = s;
            }
        }
    }
    Ok(summarize(&scores))
}

/// One pass over `split` in the epoch's shuffled order. Returns the running
/// training loss and error (each example scored just before its update).
pub fn train_epoch<T, M>(
    model: &mut M,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    state: &mut OptimizerState<T>,
    epoch: usize,
) -> Result<EvalResult>
where
    T: Real,
    M: TextClassifier<T>,
{
    if split.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty split".into()));
    }
    let mut scores = vec![(0.0, false); split.len()];
    for batch in make_batches(split, cfg.batch_size, Some(derive_seed(cfg.seed, epoch as u64))) {
        model.params_mut().zero_grads();
        let grads = {
            let mut tape = Tape::with_params(model.params());
            let logits = model.logits(&mut tape, &batch)?;
            for (&i, s) in batch.indices.iter().zip(score_rows(tape.data(logits), &batch.labels, model.num_classes())) {
                scores[i] = s;
            }
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            tape.backward(loss)?
        };
        let params = model.params_mut();
        params.accumulate(&grads)?;
        if let Some(max) = cfg.grad_clip_norm {
            clip_gradients(params, max);
        }
        optimizer_step(params, state, cfg)?;
    }
    Ok(summarize(&scores))
}

fn checkpoint_ref<'a, T: Real, M: TextClassifier<T>>(
    model: &'a M,
    params: &'a ParamStore<T>,
    opts: &'a TrainOptions,
    optimizer: Option<&'a OptimizerState<T>>,
    trainer: Option<&'a TrainerState>,
) -> CheckpointRef<'a, T> {
    CheckpointRef {
        kind: model.kind(),
        config: model.config_json(),
        vocab_hash: opts.vocab_hash.as_deref(),
        params,
        optimizer,
        trainer,
    }
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(m).expect("metrics serialize");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    TrainConfig { max_epochs: 0, ..a.clone() } == TrainConfig { max_epochs: 0, ..b.clone() }
}

/// Full training run: stratified validation carve-out, epochs until
/// `max_epochs` or `early_stop_patience` epochs without a validation-error
/// improvement (0 disables early stopping), then the best parameters are
/// evaluated on `test`. On return the model holds the best parameters.
pub fn train<T, M>(
    model: &mut M,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome>
where
    T: Real,
    M: TextClassifier<T> + Sync,
{
    cfg.validate()?;
    let start = Instant::now();
    for (what, split) in [("train", train_split), ("test", test_split)] {
        if split.is_empty() {
            return Err(Error::InvalidData(format!("{what} split is empty")));
        }
        if split.num_classes != model.num_classes() {
            return Err(Error::CheckpointConfigMismatch(format!(
                "{what} split has {} classes, model {}",
                split.num_classes,
                model.num_classes()
            )));
        }
    }
    let (fit, val) = stratified_split(train_split, cfg.validation_fraction, derive_seed(cfg.seed, VALIDATION_STREAM))?;
    if fit.is_empty() || val.is_empty() {
        return Err(Error::InvalidData("training split too small for a validation carve-out".into()));
    }
    let paths = opts.out_dir.as_ref().map(|d| (d.join(METRICS_FILE), d.join(BEST_CHECKPOINT), d.join(LAST_CHECKPOINT)));
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let eval_bs = cfg.batch_size.max(64);

    let (mut opt, mut ts, mut best) = if opts.resume {
        let (_, best_path, last_path) = paths.as_ref().ok_or_else(|| Error::Config("resume needs an output directory".into()))?;
        let last = load_checkpoint::<T>(last_path)?;
        if last.kind != model.kind() || last.config != model.config_json() {
            return Err(Error::CheckpointConfigMismatch("last.ckpt was written for a different model".into()));
        }
        let ts = last.trainer.ok_or_else(|| Error::CheckpointFormat("last.ckpt has no trainer state".into()))?;
        if !same_run(&ts.train_config, cfg) {
            return Err(Error::Config("resume requires the same training config (max_epochs may change)".into()));
        }
        let opt = last.optimizer.ok_or_else(|| Error::CheckpointFormat("last.ckpt has no optimizer state".into()))?;
        *model.params_mut() = last.params;
        let best = load_checkpoint::<T>(best_path)?.params;
        (opt, ts, best)
    } else {
        let initial_val = evaluate(model, &val, eval_bs, opts.threads)?;
        let ts = TrainerState {
            epoch: 0,
            best_epoch: 0,
            best_val_error_pct: initial_val.error_pct,
            since_improvement: 0,
            initial_val,
            history: Vec::new(),
            train_config: cfg.clone(),
        };
        if let Some((metrics, best_path, _)) = &paths {
            File::create(metrics).map_err(|e| Error::io(metrics, e))?;
            save_checkpoint(best_path, &checkpoint_ref(model, model.params(), opts, None, None))?;
        }
        (OptimizerState::new(cfg.optimizer, model.params()), ts, model.params().clone())
    };
    ts.train_config.max_epochs = cfg.max_epochs;

    let patience_left = |ts: &TrainerState| cfg.early_stop_patience == 0 || ts.since_improvement < cfg.early_stop_patience;
    while ts.epoch < cfg.max_epochs && patience_left(&ts) {
        let epoch = ts.epoch + 1;
        let t0 = Instant::now();
        let tr = train_epoch(model, &fit, cfg, &mut opt, epoch)?;
        let va = evaluate(model, &val, eval_bs, opts.threads)?;
        let test_error_pct = if opts.eval_test_each_epoch {
            Some(evaluate(model, test_split, eval_bs, opts.threads)?.error_pct)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            train_loss: tr.loss,
            train_error_pct: tr.error_pct,
            val_loss: va.loss,
            val_error_pct: va.error_pct,
            test_error_pct,
            wall_seconds: if opts.record_wall_time { t0.elapsed().as_secs_f64() } else { 0.0 },
        };
        if opts.progress {
            let test = m.test_error_pct.map(|t| format!(" test_err {t:.2}%")).unwrap_or_default();
            println!(
                "epoch {:>3}  train_loss {:.4}  train_err {:.2}%  val_loss {:.4}  val_err {:.2}%{test}  {:.1}s",
                m.epoch, m.train_loss, m.train_error_pct, m.val_loss, m.val_error_pct, m.wall_seconds
            );
        }
        if let Some((metrics, _, _)) = &paths {
            append_metrics(metrics, &m)?;
        }
        ts.history.push(m);
        ts.epoch = epoch;
        if va.error_pct < ts.best_val_error_pct {
            ts.best_val_error_pct = va.error_pct;
            ts.best_epoch = epoch;
            ts.since_improvement = 0;
            best = model.params().clone();
            if let Some((_, best_path, _)) = &paths {
                save_checkpoint(best_path, &checkpoint_ref(model, &best, opts, None, None))?;
            }
        } else {
            ts.since_improvement += 1;
        }
        if let Some((_, _, last_path)) = &paths {
            save_checkpoint(last_path, &checkpoint_ref(model, model.params(), opts, Some(&opt), Some(&ts)))?;
        }
    }
    let stopped_early = ts.epoch < cfg.max_epochs;

    *model.params_mut() = best;
    let test = evaluate(model, test_split, eval_bs, opts.threads)?;
    let total_seconds = if opts.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
    if let Some(dir) = &opts.out_dir {
        let report = TrainReport {
            config: json!({ "model": model.config_json(), "train": cfg }),
            best_epoch: ts.best_epoch,
            test_error_pct: test.error_pct,
            test_loss: test.loss,
            param_count: model.params().num_scalars(),
            total_seconds,
        };
        let path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        initial_val: ts.initial_val,
        epochs: ts.history,
        best_epoch: ts.best_epoch,
        best_val_error_pct: ts.best_val_error_pct,
        test,
        stopped_early,
        total_seconds,
    })
}
