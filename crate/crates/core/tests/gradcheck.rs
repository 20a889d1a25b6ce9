//! Central-difference checks of every tape operation, first and second order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semtrans::autodiff::{ConvSpec, Graph, Tensor};
use semtrans::Result;

type Build = dyn Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Weighted sum against fixed random weights, so every output element matters.
fn project(g: &Graph<f64>, y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = g.constant(random(y.numel(), seed), y.shape())?;
    Ok(y.mul(&w)?.sum_all())
}

fn eval(build: &Build, inputs: &[(Vec<usize>, Vec<f64>)]) -> f64 {
    let g = Graph::new();
    let ts: Vec<_> = inputs.iter().map(|(s, v)| g.variable(v.clone(), s).unwrap()).collect();
    let y = build(&g, &ts).unwrap();
    project(&g, &y, 99).unwrap().item()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

const SEEDS: u64 = 20;

fn check(name: &str, shapes: &[&[usize]], build: &Build) {
    for seed in 0..SEEDS {
        check_seed(name, shapes, build, seed);
    }
}

fn check_seed(name: &str, shapes: &[&[usize]], build: &Build, seed: u64) {
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_vec(), random(s.iter().product(), 1000 * seed + i as u64)))
        .collect();
    let g = Graph::new();
    let ts: Vec<_> = inputs.iter().map(|(s, v)| g.variable(v.clone(), s).unwrap()).collect();
    let y = build(&g, &ts).unwrap();
    let loss = project(&g, &y, 99).unwrap();
    let grads = g.backward(&loss).unwrap();
    let h = 1e-6;
    for (i, t) in ts.iter().enumerate() {
        let analytic = grads.values(t).unwrap_or_else(|| vec![0.0; t.numel()]);
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[i].1[j] += h;
            let mut minus = inputs.clone();
            minus[i].1[j] -= h;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let e = rel_err(analytic[j], numeric);
            assert!(e < 1e-4, "{name} seed {seed}: input {i} elem {j}: analytic {} numeric {numeric}", analytic[j]);
        }
    }
}

#[test]
fn elementwise() {
    check("add", &[&[2, 3], &[2, 3]], &|_, t| t[0].add(&t[1]));
    check("sub", &[&[2, 3], &[2, 3]], &|_, t| t[0].sub(&t[1]));
    check("mul", &[&[2, 3], &[2, 3]], &|_, t| t[0].mul(&t[1]));
    check("scale", &[&[4]], &|_, t| Ok(t[0].scale(-2.5).add_scalar(3.0)));
    check("lrelu", &[&[3, 4]], &|_, t| Ok(t[0].leaky_relu(0.2)));
    check("sqrt", &[&[5]], &|_, t| Ok(t[0].square().add_scalar(0.5).sqrt()));
}

#[test]
fn reductions_and_broadcasts() {
    check("mean_all", &[&[2, 3]], &|_, t| t[0].mean_all().broadcast_to(&[2]));
    check("per_sample", &[&[3, 2, 2]], &|_, t| t[0].mean_per_sample()?.broadcast_per_sample(&[3, 4]));
    check("channel", &[&[2, 3, 2, 2], &[3]], &|_, t| t[0].add_channel_bias(&t[1]));
    check("channel_sum", &[&[2, 3, 2]], &|_, t| t[0].channel_sum()?.broadcast_channel(&[1, 3, 2]));
    check("channel_scale", &[&[2, 3, 2]], &|_, t| t[0].channel_scale(&[0.5, -1.0, 2.0]));
}

#[test]
fn convolutions() {
    check("conv_same", &[&[2, 3, 5, 6], &[4, 3, 3, 3]], &|_, t| t[0].conv2d(&t[1], ConvSpec::same(3, 1)));
    check("conv_dilated", &[&[1, 2, 7, 7], &[2, 2, 3, 3]], &|_, t| t[0].conv2d(&t[1], ConvSpec::same(3, 2)));
    check("conv_strided", &[&[2, 2, 8, 8], &[3, 2, 4, 4]], &|_, t| t[0].conv2d(&t[1], ConvSpec::new(2, 1, 1)));
    check("conv_1x1", &[&[2, 3, 3, 4], &[2, 3, 1, 1]], &|_, t| t[0].conv2d(&t[1], ConvSpec::default()));
}

#[test]
fn resampling() {
    check("shuffle", &[&[1, 8, 2, 3]], &|_, t| t[0].pixel_shuffle(2));
    check("unshuffle", &[&[1, 2, 4, 6]], &|_, t| t[0].pixel_unshuffle(2));
    check("bilinear_up", &[&[1, 2, 3, 4]], &|_, t| t[0].bilinear_upsample(7, 9));
    check("bilinear_odd", &[&[1, 1, 3, 2]], &|_, t| t[0].bilinear_upsample(8, 7));
    check("pool", &[&[2, 1, 4, 6]], &|_, t| t[0].avg_pool2());
}

#[test]
fn bilinear_refuses_downscaling() {
    let g = Graph::<f64>::new();
    let x = g.constant(vec![0.0; 16], &[1, 1, 4, 4]).unwrap();
    assert!(x.bilinear_upsample(2, 4).is_err());
}

#[test]
fn layout_and_normalisation() {
    check("concat", &[&[2, 1, 3], &[2, 2, 3]], &|_, t| Tensor::concat(&[&t[0], &t[1]], 1));
    check("slice_pad", &[&[2, 5, 2]], &|_, t| t[0].slice(1, 1, 3)?.pad(2, 1, 2));
    check("instance_norm", &[&[2, 2, 3, 3]], &|_, t| Ok(t[0].instance_norm(1e-5)?.0));
    check("softmax", &[&[2, 4, 3]], &|_, t| t[0].softmax(1));
}

/// Gradient-penalty shaped objective: `(‖∂f/∂x‖ - 1)²` for a small conv net.
fn penalty(g: &Graph<f64>, x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Result<Tensor<f64>> {
    let h = x.conv2d(w1, ConvSpec::new(2, 1, 1))?.leaky_relu(0.2);
    let h = h.pixel_shuffle(2)?.bilinear_upsample(6, 9)?;
    let f = h.conv2d(w2, ConvSpec::same(3, 1))?.mean_per_sample()?.sum_all();
    let grad = g.grad(&f, &[x], true)?.remove(0).expect("x influences f");
    let norm = grad.square().sum_per_sample()?.sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all())
}

#[test]
fn double_backward_matches_finite_differences() {
    let xs = [2usize, 2, 4, 6];
    let w1s = [8usize, 2, 4, 4];
    let w2s = [1usize, 2, 3, 3];
    let base = [
        random(xs.iter().product(), 1),
        random(w1s.iter().product(), 2),
        random(w2s.iter().product(), 3),
    ];
    let value = |vals: &[Vec<f64>; 3]| {
        let g = Graph::new();
        let x = g.variable(vals[0].clone(), &xs).unwrap();
        let w1 = g.variable(vals[1].clone(), &w1s).unwrap();
        let w2 = g.variable(vals[2].clone(), &w2s).unwrap();
        penalty(&g, &x, &w1, &w2).unwrap().item()
    };
    let g = Graph::new();
    let x = g.variable(base[0].clone(), &xs).unwrap();
    let w1 = g.variable(base[1].clone(), &w1s).unwrap();
    let w2 = g.variable(base[2].clone(), &w2s).unwrap();
    let loss = penalty(&g, &x, &w1, &w2).unwrap();
    let grads = g.backward(&loss).unwrap();
    for (k, t) in [&w1, &w2].into_iter().enumerate() {
        let analytic = grads.values(t).unwrap();
        for j in (0..t.numel()).step_by(3) {
            let h = 1e-6;
            let mut p = base.clone();
            p[k + 1][j] += h;
            let mut m = base.clone();
            m[k + 1][j] -= h;
            let numeric = (value(&p) - value(&m)) / (2.0 * h);
            assert!(rel_err(analytic[j], numeric) < 1e-4, "w{} [{j}]: {} vs {numeric}", k + 1, analytic[j]);
        }
    }
}

#[test]
fn second_order_through_softmax_is_refused() {
    let g = Graph::<f64>::new();
    let x = g.variable(random(6, 4), &[2, 3]).unwrap();
    let f = x.softmax(1).unwrap().square().sum_all();
    let dx = g.grad(&f, &[&x], true).unwrap().remove(0).unwrap();
    assert!(g.backward(&dx.sum_all()).is_err());
}
