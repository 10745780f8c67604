use autodiff::{ParamStore, Real, Rng, Tensor};

use super::config::{Head, ModelConfig};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform(f64),
    Glorot,
    Zeros,
    /// Zeros with the forget block `[u, 2u)` set to 1.
    LstmBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape: shape.to_vec(), init }
}

fn lstm_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, units: usize) {
    out.push(spec(format!("{prefix}.bias"), &[4 * units], Init::LstmBias));
    out.push(spec(format!("{prefix}.w_hh"), &[units, 4 * units], Init::Glorot));
    out.push(spec(format!("{prefix}.w_ih"), &[input, 4 * units], Init::Glorot));
}

/// Every parameter of the model, sorted by name. Gate blocks inside the LSTM
/// matrices are ordered i, f, g, o.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let u = config.lstm_units;
    let step_in = config.d_emb + config.mem_rows;
    let mut out = vec![
        spec("embed.E", &[config.vocab_size, config.d_emb], Init::Uniform(0.05)),
        spec("memory.P", &[config.addr_rows, config.addr_cols], Init::Glorot),
        spec("memory.Z", &[config.mem_rows, config.mem_cols], Init::Glorot),
        spec("out.b", &[config.num_classes], Init::Zeros),
        spec("out.w", &[config.head_output_dim(), config.num_classes], Init::Glorot),
    ];
    match config.classifier {
        Head::L => {
            lstm_specs(&mut out, "head.lstm0", step_in, u);
            lstm_specs(&mut out, "head.lstm1", u, u);
        }
        Head::B | Head::SAB => {
            lstm_specs(&mut out, "head.bwd", step_in, u);
            lstm_specs(&mut out, "head.fwd", step_in, u);
        }
    }
    if config.classifier == Head::SAB {
        for n in ["head.attn.w_k", "head.attn.w_q", "head.attn.w_v"] {
            out.push(spec(n, &[2 * u, 2 * u], Init::Glorot));
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Closed form of the scalar count: with `in = d_emb + m`, `u` units and
/// `C` classes,
/// `V·d_emb + d·D + m·M + k·(4u·in + 4u·u + 4u) [+ 3·(2u)²] + h·C + C`
/// where `k` is the number of LSTM passes whose input is `in` (2 for B and
/// SAB, 1 for L plus a second layer `4u·u + 4u·u + 4u`) and `h` the head
/// output width.
pub fn param_count(config: &ModelConfig) -> usize {
    let u = config.lstm_units;
    let step_in = config.d_emb + config.mem_rows;
    let lstm = |input: usize| 4 * u * input + 4 * u * u + 4 * u;
    let head = match config.classifier {
        Head::L => lstm(step_in) + lstm(u),
        Head::B => 2 * lstm(step_in),
        Head::SAB => 2 * lstm(step_in) + 3 * (2 * u) * (2 * u),
    };
    config.vocab_size * config.d_emb
        + config.addr_rows * config.addr_cols
        + config.mem_rows * config.mem_cols
        + head
        + config.head_output_dim() * config.num_classes
        + config.num_classes
}

/// Draws parameters in name order from `rng`. Values are drawn in f64 and
/// rounded, so f32 and f64 models from one seed agree to f32 precision.
pub fn init_params<T: Real>(config: &ModelConfig, rng: &mut Rng) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    for s in param_specs(config) {
        let n: usize = s.shape.iter().product();
        let values: Vec<f64> = match s.init {
            Init::Uniform(a) => (0..n).map(|_| rng.uniform(-a, a)).collect(),
            Init::Glorot => {
                let limit = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.uniform(-limit, limit)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::LstmBias => {
                let u = n / 4;
                (0..n).map(|i| if (u..2 * u).contains(&i) { 1.0 } else { 0.0 }).collect()
            }
        };
        store.insert(&s.name, Tensor::from_f64(&s.shape, &values)?)?;
    }
    store.pin_zero_row("embed.E", 0)?;
    store.enforce_pinned();
    Ok(store)
}
