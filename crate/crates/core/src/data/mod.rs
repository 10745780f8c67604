//! CSV ingestion, tokenization, vocabulary, fixed-length encoding, subsets
//! and batching.

mod cache;
mod csv;
mod dataset;
mod tokenize;
mod vocab;

pub use self::cache::{decode_cache, encode_cache, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use self::csv::{parse_csv, parse_csv_reader, write_csv, RawExample};
pub use self::dataset::{
    decode, encode_example, make_batches, sample_balanced_subset, stratified_split, Batch, Batches, DatasetSplit,
    EncodedExample, Provenance,
};
pub use self::tokenize::tokenize;
pub use self::vocab::{build_vocab, Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
