//! Every differentiable op against central differences on random small
//! tensors, plus the determinism properties of the substrate.

use vqbet::numerics::gradcheck::check_tape_fn;
use vqbet::numerics::optim::{AdamW, AdamWConfig};
use vqbet::numerics::params::{Activation, Init, Mlp, ParamStore};
use vqbet::numerics::{SeededRng, Tape, Tensor, Var};
use vqbet::Result;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// Keeps values away from kinks of piecewise-linear ops.
fn away_from_zero(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.05, 1.0);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Weighted sum so every output element carries a distinct gradient.
fn project(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let w = t.constant(w.reshape(t.value(y).shape())?);
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn run<F>(name: &str, shape: &[usize], out_numel: usize, gen: fn(&[usize], &mut SeededRng) -> Tensor, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    for trial in 0..TRIALS {
        let mut rng = SeededRng::new(1000 + trial);
        let x = gen(shape, &mut rng);
        let w = random(&[out_numel], &mut rng);
        let report = check_tape_fn(
            |t, x| {
                let y = f(t, x)?;
                project(t, y, &w)
            },
            &x,
            H,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "{name} trial {trial}: {report:?}");
    }
}

#[test]
fn matmul_both_sides() {
    run("matmul-left", &[3, 4], 6, random, |t, x| {
        let b = t.constant(Tensor::new(&[4, 2], (0..8).map(|i| (i as f64 * 0.37).sin()).collect())?);
        t.matmul(x, b)
    });
    run("matmul-right", &[4, 2], 6, random, |t, x| {
        let a = t.constant(Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 * 0.71).cos()).collect())?);
        t.matmul(a, x)
    });
}

#[test]
fn elementwise_ops() {
    run("add", &[2, 3], 6, random, |t, x| {
        let c = t.constant(Tensor::full(&[2, 3], 0.3));
        t.add(x, c)
    });
    run("sub", &[2, 3], 6, random, |t, x| {
        let c = t.constant(Tensor::full(&[2, 3], 0.3));
        t.sub(c, x)
    });
    run("mul-self", &[5], 5, random, |t, x| t.mul(x, x));
    run("scale", &[5], 5, random, |t, x| t.scale(x, -1.7));
    run("relu", &[8], 8, away_from_zero, |t, x| t.relu(x));
    run("gelu", &[8], 8, random, |t, x| t.gelu(x));
}

#[test]
fn add_row_bias_gradient() {
    run("add_row", &[4], 12, random, |t, x| {
        let m = t.constant(Tensor::full(&[3, 4], 0.5));
        t.add_row(m, x)
    });
}

#[test]
fn layernorm_all_inputs() {
    run("layernorm-x", &[3, 5], 15, random, |t, x| {
        let g = t.constant(Tensor::vector(&[1.0, 0.5, -0.3, 2.0, 0.7]));
        let b = t.constant(Tensor::vector(&[0.1, 0.0, -0.2, 0.3, 0.0]));
        t.layernorm(x, g, b)
    });
    run("layernorm-gamma", &[5], 15, random, |t, g| {
        let x = t.constant(Tensor::new(&[3, 5], (0..15).map(|i| (i as f64).sin()).collect())?);
        let b = t.constant(Tensor::zeros(&[5]));
        t.layernorm(x, g, b)
    });
}

#[test]
fn softmax_rows() {
    run("softmax", &[3, 4], 12, random, |t, x| t.softmax(x));
}

#[test]
fn gather_concat_slice() {
    run("gather_rows", &[4, 3], 15, random, |t, x| t.gather_rows(x, &[2, 0, 2, 3, 1]));
    run("concat_cols", &[2, 3], 10, random, |t, x| {
        let c = t.constant(Tensor::full(&[2, 2], 1.0));
        let sq = t.mul(x, x)?;
        t.concat_cols(&[sq, c])
    });
    run("concat_rows", &[2, 3], 12, random, |t, x| t.concat_rows(&[x, x]));
    run("slice_cols", &[3, 5], 6, random, |t, x| t.slice_cols(x, 1, 2));
}

#[test]
fn reductions_and_distances() {
    run("sum", &[7], 1, random, |t, x| {
        let sq = t.mul(x, x)?;
        t.sum(sq)
    });
    run("mean", &[7], 1, random, |t, x| {
        let sq = t.mul(x, x)?;
        t.mean(sq)
    });
    run("l1", &[3, 3], 1, away_from_zero, |t, x| {
        let z = t.constant(Tensor::zeros(&[3, 3]));
        t.l1(x, z)
    });
    run("l2sq", &[3, 3], 1, random, |t, x| {
        let c = t.constant(Tensor::full(&[3, 3], 0.25));
        t.l2sq(c, x)
    });
}

#[test]
fn causal_attention_all_inputs() {
    // batch 2, seq 3, c 4, 2 heads
    for which in 0..3 {
        run("attention", &[6, 4], 24, random, move |t, x| {
            let other = |t: &mut Tape, s: f64| t.constant(Tensor::new(&[6, 4], (0..24).map(|i| ((i as f64 + s) * 0.9).sin()).collect()).unwrap());
            let (q, k, v) = match which {
                0 => (x, other(t, 1.0), other(t, 2.0)),
                1 => (other(t, 1.0), x, other(t, 2.0)),
                _ => (other(t, 1.0), other(t, 2.0), x),
            };
            t.causal_attention(q, k, v, 2, 3, 2)
        });
    }
}

#[test]
fn focal_loss_gradient_at_gamma_two() {
    for gamma in [0.0, 0.5, 2.0] {
        run("focal", &[3, 4], 1, random, move |t, x| t.focal_loss(x, &[0, 3, 1], gamma));
    }
}

#[test]
fn softmax_sums_to_one_and_is_positive() {
    let mut rng = SeededRng::new(9);
    for _ in 0..200 {
        let x = Tensor::new(&[1, 6], (0..6).map(|_| rng.uniform_range(-30.0, 30.0)).collect()).unwrap();
        let mut t = Tape::new();
        let v = t.constant(x);
        let y = t.softmax(v).unwrap();
        let s: f64 = t.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(t.value(y).data().iter().all(|&p| p > 0.0));
    }
}

fn train_trajectory(seed: u64, steps: usize) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[3, 8, 2], Activation::Gelu, Init::Kaiming, &mut rng);
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, weight_decay: 1e-3, ..Default::default() }, &store);
    let mut data_rng = rng.split(1);
    for _ in 0..steps {
        let x = Tensor::new(&[4, 3], (0..12).map(|_| data_rng.normal()).collect()).unwrap();
        let y = Tensor::new(&[4, 2], (0..8).map(|_| data_rng.normal()).collect()).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, true);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let out = mlp.forward(&mut tape, &bind, xv).unwrap();
        let loss = tape.l2sq(out, yv).unwrap();
        tape.backward(loss).unwrap();
        let grads = store.grads(&tape, &bind);
        opt.step(&mut store, &grads).unwrap();
    }
    store.flatten().into_data()
}

#[test]
fn seeded_training_is_bit_identical() {
    let a = train_trajectory(77, 120);
    let b = train_trajectory(77, 120);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = train_trajectory(78, 120);
    assert_ne!(a, c);
}
