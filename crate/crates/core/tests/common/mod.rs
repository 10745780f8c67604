//! Synthetic news-like corpora for tests that cannot rely on the real
//! datasets being present.
#![allow(dead_code)]

use autodiff::Rng;
use sememnn::data::{build_vocab, DatasetSplit, RawExample, Vocabulary};

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ter", "an", "os", "re", "vi", "du", "ne", "sa", "pol", "gri", "ma", "tu", "el", "ron", "bi", "cha",
    "fe", "zo", "un", "qui", "de",
];

fn word(rng: &mut Rng) -> String {
    let n = 2 + rng.below(2) as usize;
    (0..n).map(|_| SYLLABLES[rng.below(SYLLABLES.len() as u64) as usize]).collect()
}

fn pool(rng: &mut Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| word(rng)).collect()
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    /// Probability that a title word is drawn from the class's topic pool.
    pub title_topic: f64,
    /// Same for description words.
    pub body_topic: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(num_classes: usize, per_class: usize, seed: u64) -> Self {
        SynthSpec { num_classes, per_class, title_topic: 0.5, body_topic: 0.3, seed }
    }
}

/// Balanced labelled records in shuffled order. Topic pools depend only on
/// `num_classes` and the seed's high bits, so train and test generated with
/// seeds differing in the low byte share topics.
pub fn synth_corpus(spec: &SynthSpec) -> Vec<RawExample> {
    let mut topic_rng = Rng::new(spec.seed >> 8);
    let common = pool(&mut topic_rng, 200);
    let topics: Vec<Vec<String>> = (0..spec.num_classes).map(|_| pool(&mut topic_rng, 60)).collect();
    let mut rng = Rng::new(spec.seed);
    let sentence = |rng: &mut Rng, class: usize, len: usize, p: f64| -> String {
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let src = if rng.next_f64() < p { &topics[class] } else { &common };
                src[rng.below(src.len() as u64) as usize].as_str()
            })
            .collect();
        words.join(" ")
    };
    let mut out = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.per_class {
            let tl = 5 + rng.below(5) as usize;
            let bl = 15 + rng.below(25) as usize;
            let mut title = sentence(&mut rng, class, tl, spec.title_topic);
            title.push_str(if rng.below(3) == 0 { "!" } else { "." });
            let description = sentence(&mut rng, class, bl, spec.body_topic) + ".";
            out.push(RawExample { label: class + 1, title, description });
        }
    }
    rng.shuffle(&mut out);
    out
}

pub struct SynthData {
    pub vocab: Vocabulary,
    pub train: DatasetSplit,
    pub test: DatasetSplit,
}

/// Train/test splits encoded with a vocabulary built from train.
pub fn synth_splits(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    abstract_len: usize,
    content_len: usize,
    seed: u64,
) -> SynthData {
    let base = seed << 8;
    let train_raw = synth_corpus(&SynthSpec::new(num_classes, train_per_class, base));
    let test_raw = synth_corpus(&SynthSpec::new(num_classes, test_per_class, base | 1));
    let vocab = build_vocab(&train_raw, 1, 50_000).unwrap();
    let train = DatasetSplit::encode(&train_raw, &vocab, num_classes, abstract_len, content_len, "synthetic-train").unwrap();
    let test = DatasetSplit::encode(&test_raw, &vocab, num_classes, abstract_len, content_len, "synthetic-test").unwrap();
    SynthData { vocab, train, test }
}
