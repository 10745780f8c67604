use std::fs;
use std::path::{Path, PathBuf};

use autodiff::rng::derive_seed;
use autodiff::OpKind;
use serde_json::json;
use sememnn::checkpoint::load_checkpoint;
use sememnn::data::{build_vocab, parse_csv, read_cache, sample_balanced_subset, write_cache, DatasetSplit, Vocabulary};
use sememnn::model::{check_model, Head, ModelConfig, SeMemNN, SemanticSource, TextClassifier, ToyDims};
use sememnn::train::{
    evaluate, train as run_training, train_bow_baseline, BowModel, EvalResult, TrainConfig, TrainOptions, TrainOutcome,
};
use sememnn::Error;

use crate::config::RunConfig;
use crate::{BaselineArgs, EvalArgs, GradcheckArgs, Globals, PrepareArgs, TrainArgs};

/// Stream for model initialization, kept apart from the trainer's streams.
const INIT_STREAM: u64 = 0x696e6974;

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::UnknownConfigKey(_) => 1,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError { code: 1, message: message.into() }
}

type CmdResult = Result<(), CliError>;

fn make_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_pair(train: &Path, test: &Path) -> Result<(Vocabulary, DatasetSplit, DatasetSplit), Error> {
    let (vocab, train_split) = read_cache(train)?;
    let (test_vocab, test_split) = read_cache(test)?;
    if vocab.hash() != test_vocab.hash() {
        return Err(Error::VocabMismatch { checkpoint: vocab.hash(), cache: test_vocab.hash() });
    }
    if train_split.num_classes != test_split.num_classes {
        return Err(Error::InvalidData(format!(
            "train cache has {} classes, test cache {}",
            train_split.num_classes, test_split.num_classes
        )));
    }
    Ok((vocab, train_split, test_split))
}

fn print_outcome(name: &str, out: &TrainOutcome) {
    println!(
        "{name}: best epoch {} (val error {:.2}%), test error {:.2}% over {} examples",
        out.best_epoch, out.best_val_error_pct, out.test.error_pct, out.test.count
    );
}

pub fn prepare(a: &PrepareArgs, g: &Globals) -> CmdResult {
    let out = g.out_dir.clone().ok_or_else(|| usage("prepare needs --out-dir"))?;
    let train_raw = parse_csv(&a.train, a.num_classes)?;
    let test_raw = parse_csv(&a.test, a.num_classes)?;
    let vocab = build_vocab(&train_raw, a.min_freq, a.max_vocab)?;
    let train = DatasetSplit::encode(&train_raw, &vocab, a.num_classes, a.abstract_len, a.content_len, &a.train.display().to_string())?;
    let test = DatasetSplit::encode(&test_raw, &vocab, a.num_classes, a.abstract_len, a.content_len, &a.test.display().to_string())?;
    let subset = match a.subset_per_class {
        Some(n) => Some(sample_balanced_subset(&train, n, g.seed.unwrap_or(0))?),
        None => None,
    };
    make_dir(&out)?;
    vocab.export(&out.join("vocab.txt"))?;
    write_cache(&out.join("train.cache"), &vocab, &train)?;
    write_cache(&out.join("test.cache"), &vocab, &test)?;
    println!("vocab: {} tokens, hash {}", vocab.len(), vocab.hash());
    println!("train: {} examples, per class {:?}", train.len(), train.class_counts());
    println!("test: {} examples, per class {:?}", test.len(), test.class_counts());
    if let Some(s) = subset {
        write_cache(&out.join("subset.cache"), &vocab, &s)?;
        println!(
            "subset: {} examples ({} per class, seed {})",
            s.len(),
            s.provenance.per_class.unwrap_or(0),
            s.provenance.subset_seed.unwrap_or(0)
        );
    }
    Ok(())
}

fn resolve_run_config(a: &TrainArgs, g: &Globals) -> Result<RunConfig, Error> {
    let mut rc = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        rc.set("run.seed", &s.to_string())?;
    }
    if let Some(d) = &g.out_dir {
        rc.set("run.out_dir", &d.display().to_string())?;
    }
    if let Some(t) = g.threads {
        rc.set("run.threads", &t.to_string())?;
    }
    rc.apply_overrides(&a.overrides)?;
    rc.train_config().validate()?;
    Ok(rc)
}

pub fn model_config(rc: &RunConfig, vocab: &Vocabulary, split: &DatasetSplit) -> ModelConfig {
    let mut c = ModelConfig::new(vocab.len(), split.num_classes, rc.classifier, rc.source).with_width(rc.d_emb);
    c.mem_rows = rc.memory_slots;
    c.addr_rows = rc.memory_slots;
    c.lstm_units = rc.lstm_units;
    c.attention_width = rc.attention_width;
    c.abstract_len = split.abstract_len;
    c.content_len = split.content_len;
    c
}

pub fn train(a: &TrainArgs, g: &Globals) -> CmdResult {
    let rc = resolve_run_config(a, g)?;
    let out = rc.out_dir.clone().ok_or_else(|| usage("train needs an output directory (--out-dir or run.out_dir)"))?;
    let train_path = rc.train_cache.clone().ok_or_else(|| usage("train needs data.train_cache"))?;
    let test_path = rc.test_cache.clone().ok_or_else(|| usage("train needs data.test_cache"))?;
    let (vocab, train_split, test_split) = load_pair(&train_path, &test_path)?;
    let config = model_config(&rc, &vocab, &train_split);
    config.validate()?;
    let mut model = SeMemNN::<f32>::new(config.clone(), derive_seed(rc.seed, INIT_STREAM))?;

    make_dir(&out)?;
    let echo = out.join("config.echo");
    fs::write(&echo, rc.echo()).map_err(|e| Error::io(&echo, e))?;
    vocab.export(&out.join("vocab.txt"))?;
    println!(
        "{}: {} parameters, {} train / {} test examples",
        config.label(),
        model.params().num_scalars(),
        train_split.len(),
        test_split.len()
    );
    let opts = TrainOptions {
        out_dir: Some(out),
        resume: rc.resume,
        record_wall_time: rc.record_wall_time,
        eval_test_each_epoch: rc.eval_test_each_epoch,
        threads: rc.threads,
        vocab_hash: Some(vocab.hash()),
        progress: true,
    };
    let outcome = run_training(&mut model, &train_split, &test_split, &rc.train_config(), &opts)?;
    print_outcome(&config.label(), &outcome);
    Ok(())
}

enum Loaded {
    Memory(SeMemNN<f32>),
    Bow(BowModel<f32>),
}

pub fn eval(a: &EvalArgs, g: &Globals) -> CmdResult {
    let ck = load_checkpoint::<f32>(&a.checkpoint)?;
    let (vocab, split) = read_cache(&a.test_cache)?;
    let threads = g.threads.unwrap_or(1);
    let hash = ck.vocab_hash.clone();
    // Config compatibility is checked before the vocabulary, so a checkpoint
    // for another task fails with the more specific error.
    let model = match ck.kind.as_str() {
        "sememnn" => {
            let saved: ModelConfig = serde_json::from_value(ck.config.clone())
                .map_err(|e| Error::CheckpointFormat(format!("model config: {e}")))?;
            let expected = ModelConfig {
                vocab_size: vocab.len(),
                num_classes: split.num_classes,
                abstract_len: split.abstract_len,
                content_len: split.content_len,
                ..saved
            };
            Loaded::Memory(ck.into_model(Some(&expected))?.0)
        }
        "bow" => {
            let want = json!({ "vocab_size": vocab.len(), "num_classes": split.num_classes });
            if ck.config != want {
                return Err(Error::CheckpointConfigMismatch(format!("checkpoint config {}, cache needs {want}", ck.config)).into());
            }
            Loaded::Bow(BowModel::from_params(vocab.len(), split.num_classes, ck.params)?)
        }
        other => return Err(Error::CheckpointFormat(format!("unknown model kind {other:?}")).into()),
    };
    if let Some(h) = hash.filter(|h| *h != vocab.hash()) {
        return Err(Error::VocabMismatch { checkpoint: h, cache: vocab.hash() }.into());
    }
    let (r, kind, config, params): (EvalResult, &str, serde_json::Value, usize) = match &model {
        Loaded::Memory(m) => (evaluate(m, &split, a.batch_size, threads)?, m.kind(), m.config_json(), m.params().num_scalars()),
        Loaded::Bow(m) => (evaluate(m, &split, a.batch_size, threads)?, m.kind(), m.config_json(), m.params().num_scalars()),
    };
    println!("test_error_pct: {:.2}", r.error_pct);
    println!("test_loss: {:.4}", r.loss);
    println!("examples: {}", r.count);
    let dir = match &g.out_dir {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    make_dir(&dir)?;
    write_json(
        &dir.join("eval_report.json"),
        &json!({
            "checkpoint": a.checkpoint.display().to_string(),
            "test_cache": a.test_cache.display().to_string(),
            "kind": kind,
            "config": config,
            "test_error_pct": r.error_pct,
            "test_loss": r.loss,
            "examples": r.count,
            "param_count": params,
        }),
    )?;
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, g: &Globals) -> CmdResult {
    let fault = match &a.corrupt {
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| usage(format!("--corrupt: unknown op {name:?}")))?),
        None => None,
    };
    if let Some(op) = fault {
        println!("fault injected: backward rule of {} is corrupted", op.name());
    }
    let seed = g.seed.unwrap_or(0);
    let mut checks = 0;
    let mut failed = Vec::new();
    for (name, r) in autodiff::primitive_suite(seed, a.step, a.tol, fault).map_err(Error::from)? {
        for p in &r.params {
            checks += 1;
            let status = if p.passed { "ok" } else { "FAIL" };
            println!("{status:<4} primitive {name:<18} {:<4} max_rel_err={:.3e}", p.name, p.max_rel_error);
            if !p.passed {
                failed.push(format!("primitive {name}/{}", p.name));
            }
        }
    }
    let dims = ToyDims {
        vocab_size: a.vocab_size,
        num_classes: a.classes,
        width: a.width,
        lstm_units: a.units,
        attention_width: a.attention_width,
        abstract_len: a.abstract_len,
        content_len: a.content_len,
    };
    for head in Head::ALL {
        for source in SemanticSource::ALL {
            let cfg = dims.config(head, source);
            let check = check_model(&cfg, seed, a.step, a.tol, fault)?;
            let label = cfg.label();
            for p in &check.report.params {
                checks += 1;
                let status = if p.passed { "ok" } else { "FAIL" };
                println!("{status:<4} {label:<18} {:<18} n={:<4} max_rel_err={:.3e}", p.name, p.numel, p.max_rel_error);
                if !p.passed {
                    failed.push(format!("{label}/{}", p.name));
                }
            }
            if check.relu_margin < 10.0 * a.step {
                println!("warn {label}: fused ReLU input within {:.1e} of the kink", check.relu_margin);
            }
        }
    }
    println!("gradcheck: {checks} tensors checked, {} failed (step {:e}, tol {:e})", failed.len(), a.step, a.tol);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError { code: 3, message: format!("gradient check failed for {}", failed.join(", ")) })
    }
}

pub fn baseline(a: &BaselineArgs, g: &Globals) -> CmdResult {
    let (vocab, train_split, test_split) = load_pair(&a.train_cache, &a.test_cache)?;
    let cfg = TrainConfig {
        lr: a.lr,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        early_stop_patience: a.patience,
        seed: g.seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    let opts = TrainOptions {
        out_dir: g.out_dir.clone(),
        threads: g.threads.unwrap_or(1),
        vocab_hash: Some(vocab.hash()),
        progress: true,
        ..TrainOptions::default()
    };
    if let Some(d) = &g.out_dir {
        make_dir(d)?;
        vocab.export(&d.join("vocab.txt"))?;
    }
    let (_, outcome) = train_bow_baseline(&train_split, &test_split, vocab.len(), &cfg, &opts)?;
    print_outcome("bow", &outcome);
    Ok(())
}
