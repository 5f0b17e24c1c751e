mod common;

use common::fixtures::{gradient_errors, random_values, randomized_params};
use decomp_ssm::model::{gcrm_refine, global_summary, BranchKind, Component, DecompModel, GcrmParams, ModelConfig};
use decomp_ssm::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, random_values(rng, shape.iter().product())).unwrap()
}

#[test]
fn every_parameter_group_matches_finite_differences() {
    let worst = gradient_errors(ModelConfig::new(4, 16, 8, 8, 4), 21, 1e-6);
    assert_eq!(worst.len(), 18, "{worst:?}");
    for (group, e) in &worst {
        assert!(*e < 1e-4, "{group}: relative error {e:e}");
    }
}

#[test]
fn ablation_variants_have_correct_gradients() {
    let mut no_gcrm = ModelConfig::new(3, 12, 4, 6, 2);
    no_gcrm.use_gcrm = false;
    let mut linear = ModelConfig::new(3, 12, 4, 6, 2);
    linear.branch = BranchKind::SharedLinear;
    for cfg in [no_gcrm, linear] {
        for (group, e) in gradient_errors(cfg, 5, 1e-6) {
            assert!(e < 1e-4, "{group}: relative error {e:e}");
        }
    }
}

fn gcrm(d: usize, alpha: f64, rng: &mut ChaCha8Rng) -> GcrmParams {
    GcrmParams {
        w_g: t(&[d, d], rng),
        alpha: Tensor::new(&[1], vec![alpha]).unwrap(),
    }
}

#[test]
fn closed_gate_reduces_refinement_to_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = t(&[5, 8], &mut rng).scale(3.0);
    let out = gcrm_refine(&h, &gcrm(8, -40.0, &mut rng)).unwrap();
    let plain = h.layer_norm(decomp_ssm::model::LAYER_NORM_EPS).unwrap();
    for (a, b) in out.data().iter().zip(plain.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn identical_rows_stay_identical() {
    let row: Vec<f64> = vec![0.3, -1.2, 2.0, 0.7];
    let h = Tensor::new(&[3, 4], row.repeat(3)).unwrap();
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 5] = 1.0;
    }
    let gp = GcrmParams {
        w_g: Tensor::new(&[4, 4], eye).unwrap(),
        alpha: Tensor::new(&[1], vec![0.8]).unwrap(),
    };
    let out = gcrm_refine(&h, &gp).unwrap();
    let d = out.data();
    assert_eq!(&d[0..4], &d[4..8]);
    assert_eq!(&d[0..4], &d[8..12]);
}

#[test]
fn refinement_commutes_with_variable_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = t(&[4, 6], &mut rng);
    let gp = gcrm(6, 0.4, &mut rng);
    let perm = [2usize, 0, 3, 1];
    let rows = |x: &Tensor, order: &[usize]| -> Tensor {
        let d = x.shape()[1];
        let data: Vec<f64> = order.iter().flat_map(|&r| x.data()[r * d..(r + 1) * d].to_vec()).collect();
        Tensor::new(x.shape(), data).unwrap()
    };
    let g = global_summary(&h).unwrap();
    let g_perm = global_summary(&rows(&h, &perm)).unwrap();
    for (a, b) in g.data().iter().zip(g_perm.data()) {
        assert!((a - b).abs() < 1e-14);
    }
    let direct = rows(&gcrm_refine(&h, &gp).unwrap(), &perm);
    let permuted = gcrm_refine(&rows(&h, &perm), &gp).unwrap();
    for (a, b) in direct.data().iter().zip(permuted.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_variable_refinement_matches_hand_computation() {
    // with M = 1 the summary is the row itself: LN(h + σ(α)·W_g h)
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 5;
    let h = t(&[1, d], &mut rng);
    let gp = gcrm(d, 0.25, &mut rng);
    let out = gcrm_refine(&h, &gp).unwrap();

    let (hv, w) = (h.data(), gp.w_g.data());
    let s = 1.0 / (1.0 + (-0.25f64).exp());
    let mixed: Vec<f64> = (0..d)
        .map(|i| hv[i] + s * (0..d).map(|k| w[i * d + k] * hv[k]).sum::<f64>())
        .collect();
    let mean = mixed.iter().sum::<f64>() / d as f64;
    let var = mixed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
    for (o, v) in out.data().iter().zip(&mixed) {
        let expect = (v - mean) / (var + decomp_ssm::model::LAYER_NORM_EPS).sqrt();
        assert!((o - expect).abs() < 1e-12);
    }
}

#[test]
fn forecast_follows_affine_changes_of_the_input() {
    let mut cfg = ModelConfig::new(1, 16, 8, 8, 4);
    cfg.eps_norm = 1e-300;
    let model = DecompModel::new(cfg).unwrap();
    let params = randomized_params(&model, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = t(&[16, 1], &mut rng);
    let bound = params.bind(false);
    let base = model.forward(&bound, &x).unwrap().forecast;
    let (a, b) = (3.5, -2.0);
    let moved = model.forward(&bound, &x.scale(a).add_scalar(b)).unwrap().forecast;
    for (p, q) in base.data().iter().zip(moved.data()) {
        assert!((a * p + b - q).abs() < 1e-9 * (1.0 + q.abs()), "{p} {q}");
    }
}

#[test]
fn gates_and_timescales_stay_in_range() {
    let model = DecompModel::new(ModelConfig::new(3, 16, 4, 8, 4)).unwrap();
    let params = randomized_params(&model, 6);
    let bound = params.bind(false);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = t(&[16, 3], &mut rng).scale(5.0);
    let out = model.forward(&bound, &x).unwrap();
    for s in out.delta_scales {
        assert!(s > 0.0 && s < 2.0, "{s}");
    }
    for comp in Component::ALL {
        let bp = model.branch_params(&bound, comp).unwrap();
        let x_c = out.embedded.add(&bp.pos_emb).unwrap();
        let g = bp.gate.forward(&x_c).unwrap();
        assert!(g.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}

#[test]
fn zero_head_forecasts_the_window_mean() {
    let model = DecompModel::new(ModelConfig::new(2, 10, 3, 4, 2)).unwrap();
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = Tensor::new(&[10, 2], (0..20).map(|i| (i as f64 * 0.37).cos() * 4.0 + 1.0).collect()).unwrap();
    let f = model.forward(&params.bind(false), &x).unwrap().forecast;
    for j in 0..2 {
        let mean = (0..10).map(|i| x.data()[i * 2 + j]).sum::<f64>() / 10.0;
        for s in 0..3 {
            assert!((f.data()[s * 2 + j] - mean).abs() < 1e-12);
        }
    }
}
