//! Binary cache of an encoded split plus its vocabulary. Layout is
//! described in `docs/cache-format.md`.

use std::fs;
use std::path::Path;

use super::dataset::{DatasetSplit, EncodedExample, Provenance};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"SMNN";
pub const CACHE_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_opt(out: &mut Vec<u8>, v: Option<u64>) {
    match v {
        Some(v) => {
            out.push(1);
            put_u64(out, v);
        }
        None => {
            out.push(0);
            put_u64(out, 0);
        }
    }
}

pub fn encode_cache(vocab: &Vocabulary, split: &DatasetSplit) -> Vec<u8> {
    let row = 5 * (split.abstract_len + split.content_len) + 4;
    let mut out = Vec::with_capacity(64 + vocab.len() * 8 + split.len() * row);
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    put_u32(&mut out, split.num_classes as u32);
    put_u32(&mut out, split.abstract_len as u32);
    put_u32(&mut out, split.content_len as u32);
    put_str(&mut out, &split.provenance.source);
    put_opt(&mut out, split.provenance.subset_seed);
    put_opt(&mut out, split.provenance.per_class.map(|n| n as u64));
    put_u32(&mut out, vocab.tokens().len() as u32);
    for tok in vocab.tokens() {
        put_str(&mut out, tok);
    }
    put_u64(&mut out, split.len() as u64);
    for ex in &split.examples {
        for &id in &ex.abstract_ids {
            put_u32(&mut out, id);
        }
        out.extend(ex.abstract_mask.iter().map(|&m| m as u8));
        for &id in &ex.content_ids {
            put_u32(&mut out, id);
        }
        out.extend(ex.content_mask.iter().map(|&m| m as u8));
        put_u32(&mut out, ex.label as u32);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CacheFormat(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CacheFormat("string is not UTF-8".into()))
    }

    fn opt(&mut self) -> Result<Option<u64>> {
        let flag = self.u8()?;
        let v = self.u64()?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(v)),
            f => Err(Error::CacheFormat(format!("bad option flag {f}"))),
        }
    }

    fn ids(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn mask(&mut self, n: usize) -> Result<Vec<bool>> {
        self.take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                b => Err(Error::CacheFormat(format!("mask byte {b}"))),
            })
            .collect()
    }
}

pub fn decode_cache(bytes: &[u8]) -> Result<(Vocabulary, DatasetSplit)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::CacheFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::CacheFormat(format!("version {version}, expected {CACHE_VERSION}")));
    }
    let num_classes = r.u32()? as usize;
    let la = r.u32()? as usize;
    let lc = r.u32()? as usize;
    let source = r.string()?;
    let subset_seed = r.opt()?;
    let per_class = r.opt()?.map(|n| n as usize);
    let n_tok = r.u32()? as usize;
    let tokens = (0..n_tok).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let n = r.u64()? as usize;
    let mut examples = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        let abstract_ids = r.ids(la)?;
        let abstract_mask = r.mask(la)?;
        let content_ids = r.ids(lc)?;
        let content_mask = r.mask(lc)?;
        let label = r.u32()? as usize;
        examples.push(EncodedExample { label, abstract_ids, abstract_mask, content_ids, content_mask });
    }
    if r.pos != bytes.len() {
        return Err(Error::CacheFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let split = DatasetSplit::new(examples, num_classes, la, lc, Provenance { source, subset_seed, per_class })?;
    if let Some(max) = split.max_id() {
        if max as usize >= vocab.len() {
            return Err(Error::CacheFormat(format!("id {max} outside vocabulary of {}", vocab.len())));
        }
    }
    Ok((vocab, split))
}

pub fn write_cache(path: &Path, vocab: &Vocabulary, split: &DatasetSplit) -> Result<()> {
    fs::write(path, encode_cache(vocab, split)).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<(Vocabulary, DatasetSplit)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}
