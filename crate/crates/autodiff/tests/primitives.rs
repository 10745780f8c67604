//! Per-primitive forward values and finite-difference gradient oracles.

use autodiff::{AdError, Rng, Tape, Tensor, Var};
use proptest::prelude::*;

type Build<'a> = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> autodiff::Result<Var> + 'a;

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Scalar objective: `sum(out ⊙ probe)` with a fixed random probe, evaluated
/// from the forward pass only.
fn objective(inputs: &[Tensor<f64>], build: &Build<'_>, probe_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let mut rng = Rng::new(probe_seed);
    tape.data(out).iter().map(|v| v * rng.uniform(-1.0, 1.0)).sum()
}

/// Max relative error between tape gradients and central differences.
fn fd_max_rel_error(inputs: &[Tensor<f64>], build: &Build<'_>) -> f64 {
    let probe_seed = 77;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let n = tape.data(out).len();
    let mut rng = Rng::new(probe_seed);
    let probe: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let shape = tape.shape(out).to_vec();
    let probe_var = tape.constant(&shape, probe).unwrap();
    let weighted = tape.mul(out, probe_var).unwrap();
    let root = tape.sum(weighted).unwrap();
    let grads = tape.backward(root).unwrap();

    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let ad = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let fd = (objective(&plus, build, probe_seed) - objective(&minus, build, probe_seed)) / (2.0 * h);
            let err = (ad[i] - fd).abs() / (ad[i].abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

fn vals(tape: &Tape<'_, f64>, v: Var) -> Vec<f64> {
    tape.data(v).to_vec()
}

#[test]
fn matmul_values_and_gradient() {
    let mut t = Tape::<f64>::new();
    let i2 = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = t.matmul(i2, m).unwrap();
    assert_eq!(vals(&t, p), [1.0, 2.0, 3.0, 4.0]);
    let a = t.leaf(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let b = t.leaf(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(vals(&t, c), [11.0]);

    let mut rng = Rng::new(1);
    let inputs = [random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[4, 2], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.matmul(v[0], v[1])) < 1e-6);
    let inputs = [random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[2, 4], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.matmul_t(v[0], v[1])) < 1e-6);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::zeros(&[2, 3]));
    let b = t.leaf(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(AdError::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, [2, 3]);
            assert_eq!(right, [2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn batch_matmul_gradient() {
    let mut rng = Rng::new(2);
    let inputs = [random(&mut rng, &[2, 3, 4], -1.0, 1.0), random(&mut rng, &[2, 4, 5], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.batch_matmul(v[0], v[1], false)) < 1e-6);
    let inputs = [random(&mut rng, &[2, 3, 4], -1.0, 1.0), random(&mut rng, &[2, 5, 4], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.batch_matmul(v[0], v[1], true)) < 1e-6);
}

#[test]
fn elementwise_values_and_gradients() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::vector(&[1.0, 2.0]));
    let z = t.leaf(Tensor::vector(&[0.0, 0.0]));
    let s = t.add(a, z).unwrap();
    assert_eq!(vals(&t, s), [1.0, 2.0]);
    let x = t.leaf(Tensor::vector(&[2.0, 3.0]));
    let y = t.leaf(Tensor::vector(&[4.0, 5.0]));
    let m = t.mul(x, y).unwrap();
    assert_eq!(vals(&t, m), [8.0, 15.0]);
    let bad = t.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
    assert!(matches!(t.add(a, bad), Err(AdError::ShapeMismatch { .. })));

    let mut rng = Rng::new(3);
    let inputs = [random(&mut rng, &[5], -1.0, 1.0), random(&mut rng, &[5], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.mul(v[0], v[1])) < 1e-6);
    assert!(fd_max_rel_error(&inputs, &|t, v| t.sub(v[0], v[1])) < 1e-6);
    assert!(fd_max_rel_error(&inputs, &|t, v| t.add(v[0], v[1])) < 1e-6);
    assert!(fd_max_rel_error(&inputs[..1], &|t, v| t.scale(v[0], -2.5)) < 1e-6);
}

#[test]
fn relu_values_and_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(&[-1.0, 0.0, 2.0]));
    let r = t.relu(x).unwrap();
    assert_eq!(vals(&t, r), [0.0, 0.0, 2.0]);
    let n = t.leaf(Tensor::vector(&[-3.0, -0.5]));
    let rn = t.relu(n).unwrap();
    assert_eq!(vals(&t, rn), [0.0, 0.0]);

    // Subgradient at exactly 0 is 0.
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(&[0.0, 1.0]).with_grad());
    let r = t.relu(x).unwrap();
    let s = t.sum(r).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0]);

    let mut rng = Rng::new(4);
    let mut x = random(&mut rng, &[8], -1.0, 1.0);
    for v in x.data_mut() {
        if v.abs() < 1e-3 {
            *v = 1e-3_f64.copysign(*v);
        }
    }
    assert!(fd_max_rel_error(&[x], &|t, v| t.relu(v[0])) < 1e-6);
}

#[test]
fn softmax_values_stability_and_gradient() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::vector(&[0.0; 4]));
    let s = t.softmax(z).unwrap();
    assert_eq!(vals(&t, s), [0.25; 4]);
    let big = t.leaf(Tensor::vector(&[1000.0, 0.0]));
    let s = t.softmax(big).unwrap();
    let v = vals(&t, s);
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300 && v[1] >= 0.0);

    // softmax ∘ dot on 6-vectors
    let mut rng = Rng::new(5);
    let inputs = [random(&mut rng, &[6], -2.0, 2.0), random(&mut rng, &[6], -2.0, 2.0)];
    let err = fd_max_rel_error(&inputs, &|t, v| {
        let prod = t.mul(v[0], v[1])?;
        t.softmax(prod)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn masked_softmax_excludes_and_zeroes() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let s = t.masked_softmax(x, &[true, false, true, false, false, false]).unwrap();
    let v = vals(&t, s);
    assert_eq!(v[1], 0.0);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);

    let mut rng = Rng::new(6);
    let inputs = [random(&mut rng, &[3, 4], -2.0, 2.0)];
    let allow = [true, true, false, true, false, true, true, true, true, false, false, false];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.masked_softmax(v[0], &allow)) < 1e-6);
}

#[test]
fn activation_values_and_gradients() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::vector(&[0.0]));
    let th = t.tanh(z).unwrap();
    let sg = t.sigmoid(z).unwrap();
    assert_eq!(vals(&t, th), [0.0]);
    assert_eq!(vals(&t, sg), [0.5]);
    let neg = t.leaf(Tensor::vector(&[-100.0, 100.0]));
    let sg = t.sigmoid(neg).unwrap();
    let v = vals(&t, sg);
    assert!(v[0] > 0.0 && v[0] < 1e-40);
    assert_eq!(v[1], 1.0);

    let mut rng = Rng::new(7);
    let inputs = [random(&mut rng, &[7], -3.0, 3.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.tanh(v[0])) < 1e-6);
    assert!(fd_max_rel_error(&inputs, &|t, v| t.sigmoid(v[0])) < 1e-6);
}

#[test]
fn concat_split_round_trip_and_gradient() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::vector(&[1.0, 2.0]).with_grad());
    let b = t.leaf(Tensor::vector(&[3.0]).with_grad());
    let c = t.concat(a, b).unwrap();
    assert_eq!(vals(&t, c), [1.0, 2.0, 3.0]);
    let (a2, b2) = t.split_last(c, 2).unwrap();
    assert_eq!(vals(&t, a2), [1.0, 2.0]);
    assert_eq!(vals(&t, b2), [3.0]);
    let s = t.sum(c).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(a).unwrap(), &[1.0, 1.0]);
    assert_eq!(g.wrt(b).unwrap(), &[1.0]);

    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::zeros(&[2, 2]));
    let b = t.leaf(Tensor::zeros(&[3, 2]));
    assert!(matches!(t.concat(a, b), Err(AdError::ShapeMismatch { .. })));

    let mut rng = Rng::new(8);
    let inputs = [random(&mut rng, &[2, 3, 2], -1.0, 1.0), random(&mut rng, &[2, 3, 4], -1.0, 1.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.concat(v[0], v[1])) < 1e-6);
}

#[test]
fn embedding_gather_values_and_gradients() {
    let table = Tensor::from_f64(&[5, 2], &(0..10).map(f64::from).collect::<Vec<_>>()).unwrap();
    let mut t = Tape::<f64>::new();
    let e = t.leaf(table.clone().with_grad());
    let g = t.embedding_gather(e, &[0, 0], &[2]).unwrap();
    assert_eq!(vals(&t, g), [0.0, 1.0, 0.0, 1.0]);
    assert_eq!(t.shape(g), &[2, 2]);
    assert_eq!(t.embedding_gather(e, &[5], &[1]).unwrap_err(), AdError::IndexOutOfRange { id: 5, size: 5 });

    let mut t = Tape::<f64>::new();
    let e = t.leaf(table.with_grad());
    let g = t.embedding_gather(e, &[3, 3], &[2]).unwrap();
    let s = t.sum(g).unwrap();
    let grads = t.backward(s).unwrap();
    let de = grads.wrt(e).unwrap();
    for row in 0..5 {
        let want = if row == 3 { 2.0 } else { 0.0 };
        assert_eq!(&de[row * 2..row * 2 + 2], &[want, want]);
    }

    let mut rng = Rng::new(9);
    let inputs = [random(&mut rng, &[6, 3], -1.0, 1.0)];
    let ids = [4, 1, 4, 0, 5, 2];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.embedding_gather(v[0], &ids, &[2, 3])) < 1e-6);
}

#[test]
fn masked_mean_pool_values_and_gradients() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 1.0, 3.0, 3.0]).unwrap().with_grad());
    let p = t.masked_mean_pool(x, &[true, true]).unwrap();
    assert_eq!(vals(&t, p), [2.0, 2.0]);
    assert_eq!(t.shape(p), &[2]);
    let single = t.masked_mean_pool(x, &[false, true]).unwrap();
    assert_eq!(vals(&t, single), [3.0, 3.0]);
    assert_eq!(t.masked_mean_pool(x, &[false, false]).unwrap_err(), AdError::EmptySequence { op: "masked_mean_pool" });
    let s = t.sum(single).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);

    let mut rng = Rng::new(10);
    let inputs = [random(&mut rng, &[2, 4, 3], -1.0, 1.0)];
    let mask = [true, false, true, true, false, true, false, false];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.masked_mean_pool(v[0], &mask)) < 1e-6);
}

#[test]
fn cross_entropy_values_and_gradient() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::vector(&[0.0; 4]));
    let l = t.cross_entropy(z, &[2]).unwrap();
    assert!((vals(&t, l)[0] - 4f64.ln()).abs() < 1e-12);
    let z = t.leaf(Tensor::vector(&[50.0, -50.0]));
    let l = t.cross_entropy(z, &[0]).unwrap();
    assert!(vals(&t, l)[0] < 1e-40);
    assert_eq!(t.cross_entropy(z, &[2]).unwrap_err(), AdError::LabelOutOfRange { label: 2, classes: 2 });

    let mut rng = Rng::new(11);
    let inputs = [random(&mut rng, &[3, 5], -2.0, 2.0)];
    assert!(fd_max_rel_error(&inputs, &|t, v| t.cross_entropy(v[0], &[4, 0, 2])) < 1e-6);
}

#[test]
fn sequence_plumbing_gradients() {
    let mut rng = Rng::new(12);
    let x = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    assert!(fd_max_rel_error(&[x.clone()], &|t, v| t.select_step(v[0], 1)) < 1e-6);
    assert!(fd_max_rel_error(&[x.clone()], &|t, v| t.slice_last(v[0], 1, 2)) < 1e-6);
    assert!(fd_max_rel_error(&[x], &|t, v| t.reshape(v[0], &[6, 4])) < 1e-6);

    let steps = [random(&mut rng, &[2, 3], -1.0, 1.0), random(&mut rng, &[2, 3], -1.0, 1.0)];
    assert!(fd_max_rel_error(&steps, &|t, v| t.stack_steps(v)) < 1e-6);
    assert!(fd_max_rel_error(&steps[..1], &|t, v| t.repeat_steps(v[0], 4)) < 1e-6);
    assert!(fd_max_rel_error(&steps, &|t, v| t.blend(&[true, false], v[0], v[1])) < 1e-6);

    let bias = random(&mut rng, &[3], -1.0, 1.0);
    assert!(fd_max_rel_error(&[steps[0].clone(), bias], &|t, v| t.add_bias(v[0], v[1])) < 1e-6);
}

#[test]
fn stack_and_select_are_inverse() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = t.leaf(Tensor::from_f64(&[2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap());
    let s = t.stack_steps(&[a, b]).unwrap();
    assert_eq!(vals(&t, s), [1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    let back = t.select_step(s, 1).unwrap();
    assert_eq!(vals(&t, back), [5.0, 6.0, 7.0, 8.0]);
}

#[test]
fn backward_sum_and_fan_out() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(&[1.0, 2.0, 3.0]).with_grad());
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(&[1.5, -2.0]).with_grad());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[3.0, -4.0]);
}

#[test]
fn backward_state_errors() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(&[1.0, 2.0]).with_grad());
    assert_eq!(t.backward(x).unwrap_err(), AdError::NonScalarRoot { shape: vec![2] });
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.backward(s).unwrap_err(), AdError::BackwardTwice);
    t.clear();
    assert_eq!(t.backward(s).unwrap_err(), AdError::TapeCleared);
    let y = t.leaf(Tensor::vector(&[4.0]).with_grad());
    let s = t.sum(y).unwrap();
    assert!(t.backward(s).is_ok());
}

#[test]
fn tape_records_topologically() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::vector(&[1.0]));
    let b = t.leaf(Tensor::vector(&[2.0]));
    let c = t.add(a, b).unwrap();
    let d = t.mul(c, a).unwrap();
    assert!(a.id() < c.id() && b.id() < c.id() && c.id() < d.id());
    assert_eq!(t.len(), 4);
}

fn linear_combo_grad(a: f64, b: f64, x: &Tensor<f64>) -> Vec<f64> {
    let mut t = Tape::new();
    let xv = t.leaf(x.clone().with_grad());
    let th = t.tanh(xv).unwrap();
    let f = t.sum(th).unwrap();
    let sq = t.mul(xv, xv).unwrap();
    let sm = t.softmax(sq).unwrap();
    let n = t.shape(sm)[0];
    let first = t.slice_last(sm, 0, n / 2).unwrap();
    let g = t.sum(first).unwrap();
    let fa = t.scale(f, a).unwrap();
    let gb = t.scale(g, b).unwrap();
    let root = t.add(fa, gb).unwrap();
    t.backward(root).unwrap().wrt(xv).unwrap().to_vec()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in proptest::collection::vec(-500.0f64..500.0, 1..32)) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::vector(&xs));
        let s = t.softmax(x).unwrap();
        let v = t.data(s);
        prop_assert!(v.iter().all(|&p| p >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let x = random(&mut rng, &[6], -1.0, 1.0);
        let combo = linear_combo_grad(a, b, &x);
        let gf = linear_combo_grad(1.0, 0.0, &x);
        let gg = linear_combo_grad(0.0, 1.0, &x);
        for i in 0..6 {
            prop_assert!((combo[i] - (a * gf[i] + b * gg[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in 0u64..1000) {
        let run = || {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, &[4, 5], -1.0, 1.0).cast::<f32>();
            let b = random(&mut rng, &[5, 3], -1.0, 1.0).cast::<f32>();
            let mut t = Tape::<f32>::new();
            let av = t.leaf(a.with_grad());
            let bv = t.leaf(b.with_grad());
            let m = t.matmul(av, bv).unwrap();
            let s = t.sigmoid(m).unwrap();
            let l = t.cross_entropy(s, &[0, 2, 1, 1]).unwrap();
            let out = t.data(l).to_vec();
            let g = t.backward(l).unwrap();
            (out, g.wrt(av).unwrap().to_vec(), g.wrt(bv).unwrap().to_vec())
        };
        let (x, y) = (run(), run());
        prop_assert!(x.0.iter().zip(&y.0).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(x.1.iter().zip(&y.1).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(x.2.iter().zip(&y.2).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
