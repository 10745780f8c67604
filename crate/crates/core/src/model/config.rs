use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    /// Two stacked unidirectional LSTMs.
    L,
    /// One bidirectional LSTM.
    B,
    /// Bidirectional LSTM, local self-attention, masked mean pool.
    SAB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticSource {
    Abs,
    Ct,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::L, Head::B, Head::SAB];

    pub fn name(self) -> &'static str {
        match self {
            Head::L => "L",
            Head::B => "B",
            Head::SAB => "SAB",
        }
    }
}

impl SemanticSource {
    pub const ALL: [SemanticSource; 2] = [SemanticSource::Ct, SemanticSource::Abs];

    pub fn name(self) -> &'static str {
        match self {
            SemanticSource::Abs => "abs",
            SemanticSource::Ct => "ct",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for SemanticSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(Head::L),
            "B" | "b" => Ok(Head::B),
            "SAB" | "sab" => Ok(Head::SAB),
            _ => Err(Error::Config(format!("classifier must be L, B or SAB, got {s:?}"))),
        }
    }
}

impl FromStr for SemanticSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(SemanticSource::Abs),
            "ct" => Ok(SemanticSource::Ct),
            _ => Err(Error::Config(format!("source must be abs or ct, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub d_emb: usize,
    /// m
    pub mem_rows: usize,
    /// M
    pub mem_cols: usize,
    /// d
    pub addr_rows: usize,
    /// D
    pub addr_cols: usize,
    pub classifier: Head,
    pub semantic_source: SemanticSource,
    pub lstm_units: usize,
    pub attention_width: usize,
    pub abstract_len: usize,
    pub content_len: usize,
}

impl ModelConfig {
    /// Default sizes for the given corpus shape.
    pub fn new(vocab_size: usize, num_classes: usize, classifier: Head, semantic_source: SemanticSource) -> Self {
        ModelConfig {
            vocab_size,
            num_classes,
            d_emb: 128,
            mem_rows: 128,
            mem_cols: 128,
            addr_rows: 128,
            addr_cols: 128,
            classifier,
            semantic_source,
            lstm_units: 128,
            attention_width: 16,
            abstract_len: 32,
            content_len: 256,
        }
    }

    /// Sets d_emb = m = M = d = D.
    pub fn with_width(mut self, d: usize) -> Self {
        self.d_emb = d;
        self.mem_rows = d;
        self.mem_cols = d;
        self.addr_rows = d;
        self.addr_cols = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("num_classes", self.num_classes),
            ("d_emb", self.d_emb),
            ("mem_rows", self.mem_rows),
            ("addr_rows", self.addr_rows),
            ("lstm_units", self.lstm_units),
            ("attention_width", self.attention_width),
            ("abstract_len", self.abstract_len),
            ("content_len", self.content_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must cover pad and unk".into()));
        }
        if self.addr_cols != self.d_emb || self.mem_cols != self.d_emb {
            return Err(Error::Config(format!(
                "addr_cols ({}) and mem_cols ({}) must equal d_emb ({})",
                self.addr_cols, self.mem_cols, self.d_emb
            )));
        }
        if self.addr_rows != self.mem_rows {
            return Err(Error::Config(format!(
                "addr_rows ({}) must equal mem_rows ({})",
                self.addr_rows, self.mem_rows
            )));
        }
        Ok(())
    }

    /// Width of the vector fed to the output layer.
    pub fn head_output_dim(&self) -> usize {
        match self.classifier {
            Head::L => self.lstm_units,
            Head::B | Head::SAB => 2 * self.lstm_units,
        }
    }

    pub fn label(&self) -> String {
        format!("SeMemNN-{}-{}", self.classifier, self.semantic_source)
    }
}
