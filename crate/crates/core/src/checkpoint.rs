//! Checkpoint file: a JSON manifest, one NUL byte, then raw little-endian
//! tensor data (parameters, then Adam first moments, then second moments)
//! at the offsets the manifest lists.

use std::fs;
use std::path::Path;

use autodiff::{DType, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SeMemNN};
use crate::train::{OptimizerKind, OptimizerState, TrainerState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnedRow {
    pub name: String,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<TensorEntry>,
    pub second: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub config: Value,
    pub vocab_hash: Option<String>,
    pub pinned_rows: Vec<PinnedRow>,
    pub parameters: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerManifest>,
    pub trainer: Option<TrainerState>,
}

/// Borrowed view of everything a checkpoint stores.
pub struct CheckpointRef<'a, T> {
    pub kind: &'a str,
    pub config: Value,
    pub vocab_hash: Option<&'a str>,
    pub params: &'a ParamStore<T>,
    pub optimizer: Option<&'a OptimizerState<T>>,
    pub trainer: Option<&'a TrainerState>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub kind: String,
    pub config: Value,
    pub vocab_hash: Option<String>,
    pub params: ParamStore<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub trainer: Option<TrainerState>,
}

fn push_tensor<T: Real>(data: &mut Vec<u8>, entries: &mut Vec<TensorEntry>, name: &str, shape: &[usize], values: &[T]) {
    let offset = data.len();
    for &v in values {
        v.write_le(data);
    }
    entries.push(TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
        dtype: T::DTYPE.name().to_string(),
        byte_offset: offset,
        byte_len: data.len() - offset,
    });
}

pub fn encode_checkpoint<T: Real>(ck: &CheckpointRef<'_, T>) -> Vec<u8> {
    let mut data = Vec::new();
    let mut parameters = Vec::new();
    for p in ck.params.iter() {
        push_tensor(&mut data, &mut parameters, &p.name, p.tensor.shape(), p.tensor.data());
    }
    let optimizer = ck.optimizer.map(|st| {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (i, p) in ck.params.iter().enumerate() {
            if let Some(buf) = st.first.get(i) {
                push_tensor(&mut data, &mut first, &p.name, p.tensor.shape(), buf);
            }
        }
        for (i, p) in ck.params.iter().enumerate() {
            if let Some(buf) = st.second.get(i) {
                push_tensor(&mut data, &mut second, &p.name, p.tensor.shape(), buf);
            }
        }
        OptimizerManifest { kind: st.kind, step: st.step, first, second }
    });
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        kind: ck.kind.to_string(),
        config: ck.config.clone(),
        vocab_hash: ck.vocab_hash.map(str::to_string),
        pinned_rows: ck.params.pinned_rows().iter().map(|(n, r)| PinnedRow { name: n.clone(), row: *r }).collect(),
        parameters,
        optimizer,
        trainer: ck.trainer.cloned(),
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(0);
    out.extend_from_slice(&data);
    out
}

fn read_tensor<T: Real>(data: &[u8], e: &TensorEntry) -> Result<Tensor<T>> {
    if DType::parse(&e.dtype) != Some(T::DTYPE) {
        return Err(Error::CheckpointFormat(format!("{} stored as {}, expected {}", e.name, e.dtype, T::DTYPE.name())));
    }
    let numel: usize = e.shape.iter().product();
    let size = T::DTYPE.size_bytes();
    if e.byte_len != numel * size {
        return Err(Error::CheckpointFormat(format!("{}: {} bytes for {numel} values", e.name, e.byte_len)));
    }
    let end = e.byte_offset.checked_add(e.byte_len).ok_or_else(|| Error::CheckpointFormat("offset overflow".into()))?;
    if end > data.len() {
        return Err(Error::CheckpointTruncated(format!("{} needs bytes up to {end}, payload has {}", e.name, data.len())));
    }
    let values = data[e.byte_offset..end].chunks_exact(size).map(T::read_le).collect();
    Ok(Tensor::new(&e.shape, values)?)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let nul = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::CheckpointTruncated(format!("no manifest terminator in {} bytes", bytes.len())))?;
    let raw: Value = serde_json::from_slice(&bytes[..nul]).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::CheckpointFormat("manifest has no format_version".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::CheckpointVersion { found: version as u32, expected: CHECKPOINT_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let data = &bytes[nul + 1..];
    let mut expected_len = 0usize;
    let mut params = ParamStore::new();
    for e in &manifest.parameters {
        params.insert(&e.name, read_tensor(data, e)?)?;
        expected_len = expected_len.max(e.byte_offset + e.byte_len);
    }
    for pr in &manifest.pinned_rows {
        params.pin_zero_row(&pr.name, pr.row)?;
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(om) => {
            let mut read_all = |entries: &[TensorEntry]| -> Result<Vec<Vec<T>>> {
                if !entries.is_empty() && entries.len() != params.len() {
                    return Err(Error::CheckpointFormat("optimizer buffers do not cover every parameter".into()));
                }
                entries
                    .iter()
                    .zip(params.iter())
                    .map(|(e, p)| {
                        if e.name != p.name || e.shape != p.tensor.shape() {
                            return Err(Error::CheckpointFormat(format!("optimizer buffer {} out of place", e.name)));
                        }
                        expected_len = expected_len.max(e.byte_offset + e.byte_len);
                        Ok(read_tensor::<T>(data, e)?.into_data())
                    })
                    .collect()
            };
            let first = read_all(&om.first)?;
            let second = read_all(&om.second)?;
            Some(OptimizerState { kind: om.kind, step: om.step, first, second })
        }
    };
    if data.len() != expected_len {
        return Err(Error::CheckpointFormat(format!("{} trailing payload bytes", data.len() - expected_len)));
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        config: manifest.config,
        vocab_hash: manifest.vocab_hash,
        params,
        optimizer,
        trainer: manifest.trainer,
    })
}

/// Writes through a sibling temporary file so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint<T: Real>(path: &Path, ck: &CheckpointRef<'_, T>) -> Result<()> {
    let bytes = encode_checkpoint(ck);
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl<T: Real> Checkpoint<T> {
    /// Rebuilds a SeMemNN model, optionally requiring an exact config.
    pub fn into_model(self, expected: Option<&ModelConfig>) -> Result<(SeMemNN<T>, Option<OptimizerState<T>>, Option<TrainerState>)> {
        if self.kind != "sememnn" {
            return Err(Error::CheckpointConfigMismatch(format!("checkpoint holds a {} model", self.kind)));
        }
        let config: ModelConfig =
            serde_json::from_value(self.config).map_err(|e| Error::CheckpointFormat(format!("model config: {e}")))?;
        if let Some(want) = expected {
            if *want != config {
                return Err(Error::CheckpointConfigMismatch(config_diff(want, &config)));
            }
        }
        let model = SeMemNN::from_params(config, self.params)?;
        Ok((model, self.optimizer, self.trainer))
    }
}

/// Names the fields that differ between two configs.
pub fn config_diff(want: &ModelConfig, got: &ModelConfig) -> String {
    let a = serde_json::to_value(want).expect("config serializes");
    let b = serde_json::to_value(got).expect("config serializes");
    let (Value::Object(a), Value::Object(b)) = (a, b) else { unreachable!("configs serialize to objects") };
    let diffs: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, v)| format!("{k}: expected {v}, checkpoint has {}", b.get(k).unwrap_or(&Value::Null)))
        .collect();
    diffs.join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, SemanticSource, TextClassifier};

    fn small_model() -> SeMemNN<f32> {
        let mut cfg = ModelConfig::new(30, 4, Head::SAB, SemanticSource::Abs).with_width(6);
        cfg.lstm_units = 5;
        SeMemNN::new(cfg, 3).unwrap()
    }

    fn bytes_of(model: &SeMemNN<f32>, opt: Option<&OptimizerState<f32>>) -> Vec<u8> {
        encode_checkpoint(&CheckpointRef {
            kind: model.kind(),
            config: model.config_json(),
            vocab_hash: Some("abc"),
            params: &model.params,
            optimizer: opt,
            trainer: None,
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = small_model();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &model.params);
        opt.step = 7;
        opt.first[2][1] = 0.125;
        opt.second[4][0] = 3e-9;
        let ck: Checkpoint<f32> = decode_checkpoint(&bytes_of(&model, Some(&opt))).unwrap();
        assert!(ck.params.bit_identical(&model.params));
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        assert_eq!(ck.vocab_hash.as_deref(), Some("abc"));
        assert_eq!(ck.params.pinned_rows(), model.params.pinned_rows());
        let (m2, _, _) = ck.into_model(Some(&model.config)).unwrap();
        assert_eq!(m2.config, model.config);
    }

    #[test]
    fn manifest_layout() {
        let model = small_model();
        let bytes = bytes_of(&model, None);
        let nul = bytes.iter().position(|&b| b == 0).unwrap();
        let m: Manifest = serde_json::from_slice(&bytes[..nul]).unwrap();
        assert_eq!(m.format_version, 1);
        let mut offset = 0;
        for (e, p) in m.parameters.iter().zip(model.params.iter()) {
            assert_eq!(e.name, p.name);
            assert_eq!(e.byte_offset, offset);
            assert_eq!(e.byte_len, 4 * p.tensor.numel());
            assert_eq!(e.dtype, "f32");
            offset += e.byte_len;
        }
        assert_eq!(bytes.len(), nul + 1 + offset);
    }

    #[test]
    fn truncation_version_and_config_errors_are_distinct() {
        let model = small_model();
        let bytes = bytes_of(&model, None);
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]), Err(Error::CheckpointTruncated(_))));
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..20]), Err(Error::CheckpointTruncated(_))));

        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == 0).unwrap()]).into_owned();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        let mut v2 = bumped.into_bytes();
        v2.extend_from_slice(&bytes[v2.len()..]);
        assert!(matches!(
            decode_checkpoint::<f32>(&v2),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));

        let ck: Checkpoint<f32> = decode_checkpoint(&bytes).unwrap();
        let mut other = model.config.clone();
        other.num_classes = 5;
        match ck.into_model(Some(&other)) {
            Err(Error::CheckpointConfigMismatch(msg)) => assert!(msg.contains("num_classes"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let bytes = bytes_of(&small_model(), None);
        assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::CheckpointFormat(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save_checkpoint(
            &path,
            &CheckpointRef {
                kind: model.kind(),
                config: model.config_json(),
                vocab_hash: None,
                params: &model.params,
                optimizer: None,
                trainer: None,
            },
        )
        .unwrap();
        let ck: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert!(ck.params.bit_identical(&model.params));
        assert!(!path.with_extension("ckpt.tmp").exists());
    }
}
