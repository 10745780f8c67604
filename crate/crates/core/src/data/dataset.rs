use autodiff::Rng;

use super::csv::RawExample;
use super::tokenize::tokenize;
use super::vocab::{Vocabulary, PAD_ID, UNK_ID};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    /// 0-based.
    pub label: usize,
    pub abstract_ids: Vec<u32>,
    pub abstract_mask: Vec<bool>,
    pub content_ids: Vec<u32>,
    pub content_mask: Vec<bool>,
}

impl EncodedExample {
    pub fn abstract_tokens(&self) -> usize {
        self.abstract_mask.iter().filter(|&&m| m).count()
    }

    pub fn content_tokens(&self) -> usize {
        self.content_mask.iter().filter(|&&m| m).count()
    }
}

fn encode_field(text: &str, vocab: &Vocabulary, len: usize) -> (Vec<u32>, Vec<bool>) {
    let mut ids: Vec<u32> = tokenize(text).iter().take(len).map(|t| vocab.id(t) as u32).collect();
    if ids.is_empty() {
        ids.push(UNK_ID as u32);
    }
    let n = ids.len();
    ids.resize(len, PAD_ID as u32);
    let mask = (0..len).map(|i| i < n).collect();
    (ids, mask)
}

/// Title becomes the abstract, description the content. Labels shift to
/// 0-based.
pub fn encode_example(raw: &RawExample, vocab: &Vocabulary, abstract_len: usize, content_len: usize) -> EncodedExample {
    assert!(abstract_len > 0 && content_len > 0, "sequence lengths must be positive");
    let (abstract_ids, abstract_mask) = encode_field(&raw.title, vocab, abstract_len);
    let (content_ids, content_mask) = encode_field(&raw.description, vocab, content_len);
    EncodedExample { label: raw.label - 1, abstract_ids, abstract_mask, content_ids, content_mask }
}

/// Tokens on the unmasked prefix.
pub fn decode(ids: &[u32], mask: &[bool], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| vocab.token(id as usize).unwrap_or("<unk>").to_string())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub subset_seed: Option<u64>,
    pub per_class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub examples: Vec<EncodedExample>,
    pub num_classes: usize,
    pub abstract_len: usize,
    pub content_len: usize,
    pub provenance: Provenance,
}

impl DatasetSplit {
    pub fn new(
        examples: Vec<EncodedExample>,
        num_classes: usize,
        abstract_len: usize,
        content_len: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(Error::InvalidData(format!("example {i}: label {} >= {num_classes}", ex.label)));
            }
            if ex.abstract_ids.len() != abstract_len
                || ex.abstract_mask.len() != abstract_len
                || ex.content_ids.len() != content_len
                || ex.content_mask.len() != content_len
            {
                return Err(Error::InvalidData(format!("example {i}: sequence lengths differ from split")));
            }
            if ex.abstract_tokens() == 0 || ex.content_tokens() == 0 {
                return Err(Error::InvalidData(format!("example {i}: empty sequence")));
            }
        }
        Ok(DatasetSplit { examples, num_classes, abstract_len, content_len, provenance })
    }

    pub fn encode(
        raws: &[RawExample],
        vocab: &Vocabulary,
        num_classes: usize,
        abstract_len: usize,
        content_len: usize,
        source: &str,
    ) -> Result<Self> {
        if let Some(bad) = raws.iter().position(|r| r.label == 0 || r.label > num_classes) {
            return Err(Error::InvalidData(format!("record {}: label {} outside [1, {num_classes}]", bad + 1, raws[bad].label)));
        }
        let examples = raws.iter().map(|r| encode_example(r, vocab, abstract_len, content_len)).collect();
        Self::new(
            examples,
            num_classes,
            abstract_len,
            content_len,
            Provenance { source: source.to_string(), ..Provenance::default() },
        )
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    pub fn max_id(&self) -> Option<u32> {
        self.examples.iter().flat_map(|e| e.abstract_ids.iter().chain(&e.content_ids)).copied().max()
    }

    fn with_examples(&self, examples: Vec<EncodedExample>, provenance: Provenance) -> Self {
        DatasetSplit {
            examples,
            num_classes: self.num_classes,
            abstract_len: self.abstract_len,
            content_len: self.content_len,
            provenance,
        }
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, ex) in self.examples.iter().enumerate() {
            by_class[ex.label].push(i);
        }
        by_class
    }
}

/// Draws exactly `per_class` examples from every class without replacement,
/// then shuffles the union.
pub fn sample_balanced_subset(split: &DatasetSplit, per_class: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = Rng::new(seed);
    let mut picked = Vec::with_capacity(per_class * split.num_classes);
    for (class, mut idx) in split.indices_by_class().into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::InsufficientExamples { class, available: idx.len(), requested: per_class });
        }
        rng.shuffle(&mut idx);
        picked.extend_from_slice(&idx[..per_class]);
    }
    rng.shuffle(&mut picked);
    let examples = picked.into_iter().map(|i| split.examples[i].clone()).collect();
    let provenance = Provenance {
        source: split.provenance.source.clone(),
        subset_seed: Some(seed),
        per_class: Some(per_class),
    };
    Ok(split.with_examples(examples, provenance))
}

/// Stratified hold-out: from each class, `round(fraction * count)` examples
/// go to the second split (at least one when the class has two or more).
/// Both outputs keep the input's relative order.
pub fn stratified_split(split: &DatasetSplit, fraction: f64, seed: u64) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let mut rng = Rng::new(seed);
    let mut held = vec![false; split.len()];
    for mut idx in split.indices_by_class() {
        let n = idx.len();
        let mut k = (fraction * n as f64).round() as usize;
        if fraction > 0.0 && k == 0 && n >= 2 {
            k = 1;
        }
        rng.shuffle(&mut idx);
        for &i in &idx[..k.min(n)] {
            held[i] = true;
        }
    }
    let (mut keep, mut hold) = (Vec::new(), Vec::new());
    for (ex, h) in split.examples.iter().zip(held) {
        if h { hold.push(ex.clone()) } else { keep.push(ex.clone()) }
    }
    let prov = split.provenance.clone();
    Ok((split.with_examples(keep, prov.clone()), split.with_examples(hold, prov)))
}

/// Stacked batch, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub abstract_len: usize,
    pub content_len: usize,
    pub abstract_ids: Vec<usize>,
    pub abstract_mask: Vec<bool>,
    pub content_ids: Vec<usize>,
    pub content_mask: Vec<bool>,
    pub labels: Vec<usize>,
    /// Position of each row in the source split.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a EncodedExample>, abstract_len: usize, content_len: usize) -> Self {
        let mut b = Batch {
            size: 0,
            abstract_len,
            content_len,
            abstract_ids: Vec::new(),
            abstract_mask: Vec::new(),
            content_ids: Vec::new(),
            content_mask: Vec::new(),
            labels: Vec::new(),
            indices: Vec::new(),
        };
        for ex in examples {
            b.abstract_ids.extend(ex.abstract_ids.iter().map(|&i| i as usize));
            b.abstract_mask.extend_from_slice(&ex.abstract_mask);
            b.content_ids.extend(ex.content_ids.iter().map(|&i| i as usize));
            b.content_mask.extend_from_slice(&ex.content_mask);
            b.labels.push(ex.label);
            b.indices.push(b.size);
            b.size += 1;
        }
        b
    }
}

/// Lazily stacked batches over a fixed example order.
pub struct Batches<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;
        let mut batch = Batch::from_examples(rows.iter().map(|&i| &self.split.examples[i]), self.split.abstract_len, self.split.content_len);
        batch.indices = rows.to_vec();
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

pub fn make_batches(split: &DatasetSplit, batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..split.len()).collect();
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    Batches { split, order, batch_size, pos: 0 }
}
