//! Building blocks of the forward pass. Everything is batched: sequences are
//! `[B, L, n]` with a row-major `[B, L]` mask, vectors are `[B, n]`.

use std::ops::Range;

use autodiff::{Real, Tape, Var};

use crate::error::Result;

/// Token embeddings `[B, L, d_emb]`.
pub fn embed_sequence<T: Real>(tape: &mut Tape<'_, T>, table: Var, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
    Ok(tape.embedding_gather(table, ids, &[batch, len])?)
}

/// Masked mean of token embeddings, `[B, d_emb]`.
pub fn pool_embed<T: Real>(
    tape: &mut Tape<'_, T>,
    table: Var,
    ids: &[usize],
    mask: &[bool],
    batch: usize,
    len: usize,
) -> Result<Var> {
    let e = embed_sequence(tape, table, ids, batch, len)?;
    Ok(tape.masked_mean_pool(e, mask)?)
}

/// `softmax((P·c) ⊙ (P·a))` row-wise; a distribution over the `d` rows of P.
pub fn address<T: Real>(tape: &mut Tape<'_, T>, abstract_vec: Var, content_vec: Var, p: Var) -> Result<Var> {
    let pc = tape.matmul_t(content_vec, p)?;
    let pa = tape.matmul_t(abstract_vec, p)?;
    let prod = tape.mul(pc, pa)?;
    Ok(tape.softmax(prod)?)
}

/// `Z·s` row-wise, `[B, m]`.
pub fn semantic_read<T: Real>(tape: &mut Tape<'_, T>, source_vec: Var, z: Var) -> Result<Var> {
    Ok(tape.matmul_t(source_vec, z)?)
}

pub fn fuse<T: Real>(tape: &mut Tape<'_, T>, addr: Var, sem: Var) -> Result<Var> {
    let s = tape.add(addr, sem)?;
    Ok(tape.relu(s)?)
}

/// Combined-gate LSTM weights: `w_ih [in, 4u]`, `w_hh [u, 4u]`, `bias [4u]`,
/// gate blocks ordered i, f, g, o.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub units: usize,
}

impl LstmWeights {
    pub fn from_params<T: Real>(tape: &mut Tape<'_, T>, prefix: &str) -> Result<Self> {
        let w_ih = tape.param(&format!("{prefix}.w_ih"))?;
        let w_hh = tape.param(&format!("{prefix}.w_hh"))?;
        let bias = tape.param(&format!("{prefix}.bias"))?;
        let units = tape.shape(w_hh)[0];
        Ok(LstmWeights { w_ih, w_hh, bias, units })
    }
}

fn gate_update<T: Real>(tape: &mut Tape<'_, T>, gates: Var, c_prev: Var, u: usize) -> Result<(Var, Var)> {
    let i = tape.slice_last(gates, 0, u)?;
    let f = tape.slice_last(gates, u, u)?;
    let g = tape.slice_last(gates, 2 * u, u)?;
    let o = tape.slice_last(gates, 3 * u, u)?;
    let (i, f, g, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.tanh(g)?, tape.sigmoid(o)?);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on `[B, in]` inputs, returning `(h, c)`.
pub fn lstm_cell_step<T: Real>(tape: &mut Tape<'_, T>, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let xw = tape.matmul(x, w.w_ih)?;
    let xw = tape.add_bias(xw, w.bias)?;
    let hw = tape.matmul(h_prev, w.w_hh)?;
    let gates = tape.add(xw, hw)?;
    gate_update(tape, gates, c_prev, w.units)
}

pub struct LstmRun {
    /// Hidden state after each step, in time order, each `[B, u]`.
    pub outputs: Vec<Var>,
    /// State after the last processed unmasked step.
    pub last: Var,
}

/// Runs an LSTM over `[B, L, in]`. Masked steps carry the previous state
/// through unchanged, so the final state is the one after the last unmasked
/// step in processing order. `reverse` processes `t = L-1` down to 0.
pub fn lstm_sequence<T: Real>(tape: &mut Tape<'_, T>, x: Var, mask: &[bool], w: &LstmWeights, reverse: bool) -> Result<LstmRun> {
    let shape = tape.shape(x).to_vec();
    let (b, l, input) = (shape[0], shape[1], shape[2]);
    let u = w.units;
    let flat = tape.reshape(x, &[b * l, input])?;
    let proj = tape.matmul(flat, w.w_ih)?;
    let proj = tape.add_bias(proj, w.bias)?;
    let proj = tape.reshape(proj, &[b, l, 4 * u])?;
    let mut h = tape.constant(&[b, u], vec![T::zero(); b * u])?;
    let mut c = tape.constant(&[b, u], vec![T::zero(); b * u])?;
    let mut outputs = vec![h; l];
    let steps: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..l).rev()) } else { Box::new(0..l) };
    for t in steps {
        let xw = tape.select_step(proj, t)?;
        let hw = tape.matmul(h, w.w_hh)?;
        let gates = tape.add(xw, hw)?;
        let (h_new, c_new) = gate_update(tape, gates, c, u)?;
        let take: Vec<bool> = (0..b).map(|bi| mask[bi * l + t]).collect();
        h = tape.blend(&take, h_new, h)?;
        c = tape.blend(&take, c_new, c)?;
        outputs[t] = h;
    }
    Ok(LstmRun { outputs, last: h })
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl AttentionWeights {
    pub fn from_params<T: Real>(tape: &mut Tape<'_, T>, prefix: &str) -> Result<Self> {
        Ok(AttentionWeights {
            w_q: tape.param(&format!("{prefix}.w_q"))?,
            w_k: tape.param(&format!("{prefix}.w_k"))?,
            w_v: tape.param(&format!("{prefix}.w_v"))?,
        })
    }
}

/// Key positions visible from query `t`: `width` consecutive positions
/// starting `width / 2` before `t`, clipped to `[0, len)`.
pub fn attention_window(t: usize, len: usize, width: usize) -> Range<usize> {
    let start = t as isize - (width / 2) as isize;
    let end = start + width as isize;
    (start.max(0) as usize)..(end.min(len as isize).max(0) as usize)
}

pub struct Attention {
    pub output: Var,
    /// `[B, L, L]` attention probabilities.
    pub weights: Var,
}

/// Single-head scaled dot-product self-attention over a local window.
/// Masked keys are never attended.
pub fn self_attention_local<T: Real>(
    tape: &mut Tape<'_, T>,
    h: Var,
    mask: &[bool],
    width: usize,
    w: &AttentionWeights,
) -> Result<Attention> {
    let shape = tape.shape(h).to_vec();
    let (b, l, hd) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(h, &[b * l, hd])?;
    let mut project = |wm: Var| -> Result<Var> {
        let p = tape.matmul(flat, wm)?;
        Ok(tape.reshape(p, &[b, l, hd])?)
    };
    let (q, k, v) = (project(w.w_q)?, project(w.w_k)?, project(w.w_v)?);
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
    let mut allow = vec![false; b * l * l];
    for bi in 0..b {
        for t in 0..l {
            for j in attention_window(t, l, width) {
                allow[(bi * l + t) * l + j] = mask[bi * l + j];
            }
        }
    }
    let weights = tape.masked_softmax(scores, &allow)?;
    let output = tape.batch_matmul(weights, v, false)?;
    Ok(Attention { output, weights })
}
