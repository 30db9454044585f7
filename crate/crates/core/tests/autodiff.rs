mod common;

use ckdyn::autodiff::{Activation, Graph, Var};
use ckdyn::tensor::Tensor;
use ckdyn::Error;
use common::{numeric_grad, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-6;

/// Checks every input gradient of `build` (reduced against a fixed random
/// weighting) against central differences.
fn check<F>(inputs: Vec<Tensor>, seed: u64, build: F)
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let probe_shape = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        build(&g, &vars).shape()
    };
    let weight = Tensor::randn(probe_shape, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed));
    let loss = |xs: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        build(&g, &vars).value().mul(&weight).unwrap().sum()
    };

    let g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&g, &leaves);
    let root = out.mul(g.constant(weight.clone())).unwrap().sum();
    let grads = g.backward(root).unwrap();

    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let numeric = numeric_grad(&inputs[i], H, |xi| {
            let mut xs = inputs.clone();
            xs[i] = xi.clone();
            loss(&xs)
        });
        let err = rel_err(&analytic, &numeric);
        assert!(err <= TOL, "input {i} seed {seed}: rel err {err:e}\n{analytic:?}\n{numeric:?}");
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), rng)
}

fn shapes(seed: u64) -> (ChaCha8Rng, usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, m) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
    (rng, b, n, m)
}

#[test]
fn grad_elementwise_binary() {
    for seed in 0..100 {
        let (mut rng, b, n, _) = shapes(seed);
        let x = vec![rand_t(&mut rng, &[b, n]), rand_t(&mut rng, &[b, n])];
        check(x.clone(), seed, |_, v| v[0].add(v[1]).unwrap());
        check(x.clone(), seed, |_, v| v[0].sub(v[1]).unwrap());
        check(x, seed, |_, v| v[0].mul(v[1]).unwrap());
    }
}

#[test]
fn grad_same_node_reused() {
    for seed in 0..100 {
        let (mut rng, b, n, _) = shapes(seed);
        check(vec![rand_t(&mut rng, &[b, n])], seed, |_, v| v[0].mul(v[0]).unwrap().add(v[0]).unwrap());
    }
}

#[test]
fn grad_matmul_and_add_row() {
    for seed in 0..100 {
        let (mut rng, b, n, m) = shapes(seed);
        let x = vec![rand_t(&mut rng, &[b, n]), rand_t(&mut rng, &[n, m]), rand_t(&mut rng, &[m])];
        check(x, seed, |_, v| v[0].matmul(v[1]).unwrap().add_row(v[2]).unwrap());
    }
}

#[test]
fn grad_scale_sum_mean() {
    for seed in 0..100 {
        let (mut rng, b, n, _) = shapes(seed);
        let s = rng.gen_range(-3.0..3.0);
        let x = vec![rand_t(&mut rng, &[b, n])];
        check(x.clone(), seed, move |_, v| v[0].scale(s));
        check(x.clone(), seed, |_, v| v[0].sum());
        check(x, seed, |_, v| v[0].mean());
    }
}

#[test]
fn grad_activations() {
    for seed in 0..100 {
        let (mut rng, b, n, _) = shapes(seed);
        let x = vec![rand_t(&mut rng, &[b, n])];
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu(0.1)] {
            check(x.clone(), seed, move |_, v| v[0].activate(act));
        }
    }
}

#[test]
fn grad_lin_comb() {
    for seed in 0..100 {
        let (mut rng, b, n, _) = shapes(seed);
        let count = rng.gen_range(1..5);
        let coeffs: Vec<f64> = (0..count).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let x: Vec<Tensor> = (0..count).map(|_| rand_t(&mut rng, &[b, n])).collect();
        check(x, seed, move |_, v| {
            let terms: Vec<(f64, Var)> = coeffs.iter().copied().zip(v.iter().copied()).collect();
            Var::lin_comb(&terms).unwrap()
        });
    }
}

#[test]
fn grad_concat_cols() {
    for seed in 0..100 {
        let (mut rng, b, n, m) = shapes(seed);
        let x = vec![rand_t(&mut rng, &[b, n]), rand_t(&mut rng, &[b, m])];
        check(x, seed, |_, v| Var::concat_cols(v).unwrap().tanh());
    }
}

#[test]
fn grad_softmax_cross_entropy() {
    for seed in 0..100 {
        let (mut rng, b, _, _) = shapes(seed);
        let c = rng.gen_range(2..6);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let x = vec![rand_t(&mut rng, &[b, c]).scale(3.0)];
        check(x, seed, move |_, v| v[0].softmax_cross_entropy(&labels).unwrap());
    }
}

/// Two-pass log-sum-exp with compensated summation.
fn reference_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0f64;
    let mut comp = 0.0f64;
    for (row, &y) in logits.iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for v in row {
            let t = (v - max).exp() - c;
            let n = s + t;
            c = (n - s) - t;
            s = n;
        }
        let term = s.ln() + max - row[y];
        let t = term - comp;
        let n = total + t;
        comp = (n - total) - t;
        total = n;
    }
    total / labels.len() as f64
}

#[test]
fn cross_entropy_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let labels = [2, 0, 1, 1];
    let g = Graph::new();
    let loss = g.constant(Tensor::from_rows(&rows).unwrap()).softmax_cross_entropy(&labels).unwrap();
    assert!((loss.value().item() - reference_ce(&rows, &labels)).abs() < 1e-14);
}

#[test]
fn cross_entropy_limits() {
    let g = Graph::new();
    let uniform = g.constant(Tensor::zeros([2, 10])).softmax_cross_entropy(&[3, 7]).unwrap();
    assert!((uniform.value().item() - 10f64.ln()).abs() < 1e-15);
    let mut last = f64::INFINITY;
    for margin in [1.0, 10.0, 100.0, 1000.0] {
        let t = Tensor::from_rows(&[vec![margin, 0.0, 0.0]]).unwrap();
        let l = g.constant(t).softmax_cross_entropy(&[0]).unwrap().value().item();
        assert!(l <= last && l >= 0.0);
        last = l;
    }
    assert!(last < 1e-300);
    let bad = g.constant(Tensor::zeros([1, 3])).softmax_cross_entropy(&[3]);
    assert!(matches!(bad, Err(Error::Contract(_))));
}

#[test]
fn backward_requires_reset() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let y = x.mul(x).unwrap().sum();
    assert_eq!(g.backward(y).unwrap().wrt(x).unwrap().item(), 4.0);
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    g.reset();
    assert_eq!(g.backward(y).unwrap().wrt(x).unwrap().item(), 4.0);
}

#[test]
fn non_scalar_root_rejected() {
    let g = Graph::new();
    let x = g.leaf(Tensor::zeros([2, 2]));
    assert!(matches!(g.backward(x.tanh()), Err(Error::Contract(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let g = Graph::new();
    let c = g.constant(Tensor::scalar(3.0));
    let x = g.leaf(Tensor::scalar(2.0));
    let grads = g.backward(c.mul(x).unwrap().sum()).unwrap();
    assert!(grads.wrt(c).is_none());
    assert_eq!(grads.wrt(x).unwrap().item(), 3.0);
}

proptest! {
    #[test]
    fn outputs_finite_on_bounded_inputs(vals in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let g = Graph::new();
        let x = g.leaf(Tensor::new([2, 3], vals).unwrap());
        let w = g.constant(Tensor::filled([3, 3], 0.5));
        let y = x.matmul(w).unwrap().tanh().add(x.sigmoid()).unwrap().leaky_relu(0.1);
        let loss = y.softmax_cross_entropy(&[0, 2]).unwrap();
        prop_assert!(loss.value().all_finite());
        let grads = g.backward(loss).unwrap();
        prop_assert!(grads.wrt(x).unwrap().all_finite());
    }

    #[test]
    fn matmul_distributes_over_addition(a in proptest::collection::vec(-10.0f64..10.0, 6),
                                        b in proptest::collection::vec(-10.0f64..10.0, 6),
                                        c in proptest::collection::vec(-10.0f64..10.0, 6)) {
        let a = Tensor::new([2, 3], a).unwrap();
        let b = Tensor::new([3, 2], b).unwrap();
        let c = Tensor::new([3, 2], c).unwrap();
        let lhs = a.matmul(&b.add(&c).unwrap()).unwrap();
        let rhs = a.matmul(&b).unwrap().add(&a.matmul(&c).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn transpose_is_involution(v in proptest::collection::vec(-1e3f64..1e3, 12)) {
        let t = Tensor::new([3, 4], v).unwrap();
        prop_assert_eq!(t.transpose().unwrap().transpose().unwrap(), t);
    }
}
