//! Finite-difference checks of every differentiable primitive, each reduced
//! to a scalar through a fixed random probe so that all output positions
//! contribute.

use crate::error::{AdError, Result};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::params::ParamStore;
use crate::rng::{derive_seed, Rng};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

type Build = fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    inputs: &'static [&'static [usize]],
    /// Inputs are drawn with magnitude in [0.1, 1] to stay clear of kinks.
    away_from_zero: bool,
    build: Build,
}

const CASES: &[Case] = &[
    Case { name: "matmul", inputs: &[&[3, 4], &[4, 2]], away_from_zero: false, build: |t, v| t.matmul(v[0], v[1]) },
    Case { name: "matmul_t", inputs: &[&[3, 4], &[2, 4]], away_from_zero: false, build: |t, v| t.matmul_t(v[0], v[1]) },
    Case {
        name: "batch_matmul",
        inputs: &[&[2, 3, 4], &[2, 4, 2]],
        away_from_zero: false,
        build: |t, v| t.batch_matmul(v[0], v[1], false),
    },
    Case {
        name: "batch_matmul_t",
        inputs: &[&[2, 3, 4], &[2, 5, 4]],
        away_from_zero: false,
        build: |t, v| t.batch_matmul(v[0], v[1], true),
    },
    Case { name: "add", inputs: &[&[2, 3], &[2, 3]], away_from_zero: false, build: |t, v| t.add(v[0], v[1]) },
    Case { name: "sub", inputs: &[&[2, 3], &[2, 3]], away_from_zero: false, build: |t, v| t.sub(v[0], v[1]) },
    Case { name: "mul", inputs: &[&[2, 3], &[2, 3]], away_from_zero: false, build: |t, v| t.mul(v[0], v[1]) },
    Case { name: "scale", inputs: &[&[2, 3]], away_from_zero: false, build: |t, v| t.scale(v[0], -1.7) },
    Case { name: "add_bias", inputs: &[&[2, 3, 4], &[4]], away_from_zero: false, build: |t, v| t.add_bias(v[0], v[1]) },
    Case { name: "relu", inputs: &[&[3, 5]], away_from_zero: true, build: |t, v| t.relu(v[0]) },
    Case { name: "tanh", inputs: &[&[3, 5]], away_from_zero: false, build: |t, v| t.tanh(v[0]) },
    Case { name: "sigmoid", inputs: &[&[3, 5]], away_from_zero: false, build: |t, v| t.sigmoid(v[0]) },
    Case { name: "softmax", inputs: &[&[3, 5]], away_from_zero: false, build: |t, v| t.softmax(v[0]) },
    Case {
        name: "masked_softmax",
        inputs: &[&[2, 4]],
        away_from_zero: false,
        build: |t, v| t.masked_softmax(v[0], &[true, false, true, true, false, true, true, false]),
    },
    Case { name: "concat", inputs: &[&[2, 3], &[2, 2]], away_from_zero: false, build: |t, v| t.concat(v[0], v[1]) },
    Case { name: "slice_last", inputs: &[&[2, 6]], away_from_zero: false, build: |t, v| t.slice_last(v[0], 1, 3) },
    Case {
        name: "split_last",
        inputs: &[&[2, 5]],
        away_from_zero: false,
        build: |t, v| {
            let (a, b) = t.split_last(v[0], 2)?;
            let b2 = t.slice_last(b, 0, 2)?;
            t.mul(a, b2)
        },
    },
    Case { name: "reshape", inputs: &[&[2, 6]], away_from_zero: false, build: |t, v| t.reshape(v[0], &[3, 4]) },
    Case {
        name: "embedding_gather",
        inputs: &[&[5, 3]],
        away_from_zero: false,
        build: |t, v| t.embedding_gather(v[0], &[1, 4, 1, 0, 2, 4], &[2, 3]),
    },
    Case {
        name: "masked_mean_pool",
        inputs: &[&[2, 3, 4]],
        away_from_zero: false,
        build: |t, v| t.masked_mean_pool(v[0], &[true, true, false, false, true, true]),
    },
    Case { name: "cross_entropy", inputs: &[&[3, 4]], away_from_zero: false, build: |t, v| t.cross_entropy(v[0], &[2, 0, 3]) },
    Case { name: "sum", inputs: &[&[2, 3]], away_from_zero: false, build: |t, v| t.sum(v[0]) },
    Case { name: "mean", inputs: &[&[2, 3]], away_from_zero: false, build: |t, v| t.mean(v[0]) },
    Case { name: "select_step", inputs: &[&[2, 3, 4]], away_from_zero: false, build: |t, v| t.select_step(v[0], 1) },
    Case { name: "stack_steps", inputs: &[&[2, 3], &[2, 3]], away_from_zero: false, build: |t, v| t.stack_steps(&[v[0], v[1], v[0]]) },
    Case { name: "repeat_steps", inputs: &[&[2, 3]], away_from_zero: false, build: |t, v| t.repeat_steps(v[0], 4) },
    Case {
        name: "blend",
        inputs: &[&[3, 2], &[3, 2]],
        away_from_zero: false,
        build: |t, v| t.blend(&[true, false, true], v[0], v[1]),
    },
];

fn input_name(i: usize) -> String {
    format!("x{i}")
}

/// Names of the checked primitives, in suite order.
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Runs the finite-difference check on every primitive. `fault` corrupts
/// one backward rule, as a negative control.
pub fn primitive_suite(seed: u64, step: f64, tol: f64, fault: Option<OpKind>) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::with_capacity(CASES.len());
    for (k, case) in CASES.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(seed, k as u64));
        let mut store = ParamStore::new();
        for (i, shape) in case.inputs.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    if case.away_from_zero {
                        let m = rng.uniform(0.1, 1.0);
                        if rng.below(2) == 0 { m } else { -m }
                    } else {
                        rng.uniform(-1.0, 1.0)
                    }
                })
                .collect();
            store.insert(&input_name(i), Tensor::new(shape, data)?)?;
        }
        let mut probe: Option<Vec<f64>> = None;
        let build = case.build;
        let arity = case.inputs.len();
        let report = grad_check::<_, AdError>(
            |t| {
                if let Some(kind) = fault {
                    t.inject_fault(kind);
                }
                let vars = (0..arity).map(|i| t.param(&input_name(i))).collect::<Result<Vec<_>>>()?;
                let y = build(t, &vars)?;
                let shape = t.shape(y).to_vec();
                let n = t.data(y).len();
                let w = probe.get_or_insert_with(|| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).clone();
                let w = t.constant(&shape, w)?;
                let weighted = t.mul(y, w)?;
                t.sum(weighted)
            },
            &mut store,
            step,
            tol,
        )?;
        out.push((case.name, report));
    }
    Ok(out)
}
