mod common;

use common::{grad_check, weighted_sum};
use decomp_ssm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROBES: usize = 100;
const TOL: f64 = 1e-5;
const H: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Draws in [−2, 2] but keeps away from a kink or pole at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..2.0)).collect()
}

fn check_unary(name: &str, seed: u64, draw: fn(&mut ChaCha8Rng, usize) -> Vec<f64>, op: fn(&Tensor) -> Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![2, 3];
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let x = draw(&mut rng, 6);
        worst = worst.max(grad_check(&[shape.clone()], &[x], H, |t| weighted_sum(&op(&t[0]))));
    }
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

fn check_binary(
    name: &str,
    seed: u64,
    shapes: [Vec<usize>; 2],
    rhs_draw: fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
    op: fn(&Tensor, &Tensor) -> Tensor,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let a = uniform(&mut rng, shapes[0].iter().product());
        let b = rhs_draw(&mut rng, shapes[1].iter().product());
        worst = worst.max(grad_check(&shapes, &[a, b], H, |t| weighted_sum(&op(&t[0], &t[1]))));
    }
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

#[test]
fn elementwise_unary_gradients() {
    check_unary("exp", 1, uniform, |x| x.exp());
    check_unary("log", 2, positive, |x| x.log());
    check_unary("sin", 3, uniform, |x| x.sin());
    check_unary("cos", 4, uniform, |x| x.cos());
    check_unary("sigmoid", 5, uniform, |x| x.sigmoid());
    check_unary("tanh", 6, uniform, |x| x.tanh());
    check_unary("relu", 7, away_from_zero, |x| x.relu());
    check_unary("gelu", 8, uniform, |x| x.gelu());
    check_unary("softplus", 9, uniform, |x| x.softplus());
    check_unary("square", 10, uniform, |x| x.square());
    check_unary("sqrt", 11, positive, |x| x.sqrt());
    check_unary("abs", 12, away_from_zero, |x| x.abs());
    check_unary("neg", 13, uniform, |x| x.neg());
    check_unary("scale", 14, uniform, |x| x.scale(-1.7));
    check_unary("add_scalar", 15, uniform, |x| x.add_scalar(0.3));
}

#[test]
fn binary_gradients_with_broadcasting() {
    let same = [vec![2, 3], vec![2, 3]];
    let row = [vec![2, 3], vec![1, 3]];
    let col = [vec![2, 3], vec![2, 1]];
    check_binary("add", 20, same.clone(), uniform, |a, b| a.add(b).unwrap());
    check_binary("sub", 21, row.clone(), uniform, |a, b| a.sub(b).unwrap());
    check_binary("mul", 22, col.clone(), uniform, |a, b| a.mul(b).unwrap());
    check_binary("mul_scalar", 23, [vec![2, 3], vec![1]], uniform, |a, b| a.mul(b).unwrap());
    check_binary("div", 24, same, away_from_zero, |a, b| a.div(b).unwrap());
    check_binary("div_row", 25, row, away_from_zero, |a, b| a.div(b).unwrap());
    check_binary("matmul", 26, [vec![2, 3], vec![3, 4]], uniform, |a, b| a.matmul(b).unwrap());
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let x = uniform(&mut rng, 12);
        let y = uniform(&mut rng, 6);
        let shapes = [vec![3, 4], vec![3, 2]];
        let vals = [x, y];
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].transpose().unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| t[0].sum().square()));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| t[0].mean().square()));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].sum_axis(0).unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].mean_axis(1).unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| {
            weighted_sum(&Tensor::concat(&[&t[0], &t[1]], 1).unwrap())
        }));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].slice(1, 1, 3).unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].flip(0).unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].reshape(&[2, 6]).unwrap())));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| {
            weighted_sum(&t[1].slice(1, 0, 1).unwrap().broadcast_to(&[3, 4]).unwrap())
        }));
        worst = worst.max(grad_check(&shapes, &vals, H, |t| weighted_sum(&t[0].layer_norm(1e-5).unwrap())));
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn composite_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let w = uniform(&mut rng, 6);
        let x = uniform(&mut rng, 4);
        worst = worst.max(grad_check(&[vec![3, 2], vec![2, 2]], &[w, x], H, |t| {
            // x feeds two consumers; w feeds a matmul and a layer norm
            let h = t[1].matmul(&t[0].transpose().unwrap()).unwrap().tanh();
            let n = h.layer_norm(1e-5).unwrap().gelu();
            let s = t[1].sigmoid().sum();
            n.square().mean().add(&s).unwrap().mul(&t[0].abs().sum().add_scalar(1.0)).unwrap()
        }));
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

/// Φ(x) by composite Simpson quadrature of the standard normal density.
fn phi_quadrature(x: f64) -> f64 {
    let (a, n) = (-12.0, 20_000);
    let h = (x - a) / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn gelu_matches_quadrature_oracle() {
    let phi1 = phi_quadrature(1.0);
    assert!((phi1 - 0.841345).abs() < 1e-6);
    let g = Tensor::scalar(1.0).gelu().item();
    assert!((g - phi1).abs() < 1e-12, "{g} vs {phi1}");
    assert!((g - 0.8413).abs() < 1e-4);
    for x in [-1.7, -0.3, 0.4, 1.9] {
        let g = Tensor::scalar(x).gelu().item();
        assert!((g - x * phi_quadrature(x)).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let d = rng.gen_range(2..40);
        let rows = rng.gen_range(1..6);
        let x = Tensor::new(&[rows, d], uniform(&mut rng, rows * d)).unwrap();
        let y = x.layer_norm(1e-5).unwrap();
        for (r, xr) in y.data().chunks(d).zip(x.data().chunks(d)) {
            // eps shrinks the output variance by var/(var + eps)
            let xm = xr.iter().sum::<f64>() / d as f64;
            let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / d as f64;
            if xv < 0.1 {
                continue;
            }
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }
}
