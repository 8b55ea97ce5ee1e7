use gdb_core::geom::{mean, RigidMotion, Vec3};
use gdb_core::kernels::com_free_noise;
use gdb_core::rng;
use gdb_core::scoremodel::{loss_and_grad, ModelConfig, ScoreModelParams, TrainItem};
use rand::Rng;

/// Random parameters everywhere, including the zero-initialised gate outputs.
fn dense_params(config: ModelConfig, seed: u64) -> ScoreModelParams {
    let mut r = rng::seeded(seed);
    let mut p = ScoreModelParams::init(config, &mut r).unwrap();
    for w in p.as_mut_slice() {
        *w += r.random_range(-0.05..0.05);
    }
    p
}

fn coords(n: usize, scale: f64, r: &mut rng::Rng) -> Vec<Vec3> {
    com_free_noise(n, r).into_iter().map(|x| x * scale + Vec3::new(0.4, -0.2, 1.1)).collect()
}

fn item(n: usize, lambda: f64, r: &mut rng::Rng) -> TrainItem {
    TrainItem {
        r_t: coords(n, 1.2, r),
        condition: coords(n, 1.2, r),
        features: (0..n as u32).map(|k| k % 3).collect(),
        t: r.random_range(0.0..1.0),
        target: coords(n, 1.0, r),
        lambda,
    }
}

#[test]
fn reverse_mode_matches_finite_differences_for_every_parameter() {
    let config = ModelConfig::default();
    let params = dense_params(config, 1);
    let mut r = rng::seeded(2);
    let batch = vec![item(3, 0.7, &mut r), item(3, 1.3, &mut r)];
    let (loss, grads) = loss_and_grad(&params, &batch).unwrap();

    let h = 1e-5;
    // Central differences carry roundoff of order ε·|L|/h; gradients below that
    // level are compared in absolute terms.
    let fd_noise = 4.0 * f64::EPSILON * loss.abs().max(1.0) / h;
    let floor = fd_noise / 1e-4;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let orig = params.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let (lp, _) = loss_and_grad(&probe, &batch).unwrap();
        probe.as_mut_slice()[k] = orig - h;
        let (lm, _) = loss_and_grad(&probe, &batch).unwrap();
        probe.as_mut_slice()[k] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let g = grads.as_slice()[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
        assert!(rel <= 1e-4, "parameter {k}: analytic {g} vs fd {fd} (rel {rel:e})");
    }
    eprintln!("worst relative gradient error {worst:e} over {} parameters", params.len());
}

#[test]
fn rotation_translation_and_permutation_symmetry() {
    let params = dense_params(ModelConfig::default(), 3);
    let mut r = rng::seeded(4);
    let n = 5;
    let feats = vec![0, 1, 1, 2, 0];
    for _ in 0..100 {
        let x = coords(n, 1.5, &mut r);
        let c = coords(n, 1.5, &mut r);
        let t = r.random_range(0.0..1.0);
        let out = params.forward(&x, &c, &feats, t).unwrap();

        let g = RigidMotion::random(&mut r, 3.0);
        let moved = params.forward(&g.apply_points(&x), &g.apply_points(&c), &feats, t).unwrap();
        for (a, b) in g.apply_vectors(&out).iter().zip(&moved) {
            assert!((a - b).amax() < 1e-6);
        }

        let shift = Vec3::new(r.random_range(-5.0..5.0), 2.0, -1.0);
        let xs: Vec<Vec3> = x.iter().map(|p| p + shift).collect();
        let cs: Vec<Vec3> = c.iter().map(|p| p + shift).collect();
        let shifted = params.forward(&xs, &cs, &feats, t).unwrap();
        for (a, b) in out.iter().zip(&shifted) {
            assert!((a - b).amax() < 1e-10);
        }

        // atoms 1 and 2 share a type
        let mut xp = x.clone();
        let mut cp = c.clone();
        xp.swap(1, 2);
        cp.swap(1, 2);
        let mut swapped = params.forward(&xp, &cp, &feats, t).unwrap();
        swapped.swap(1, 2);
        for (a, b) in out.iter().zip(&swapped) {
            assert!((a - b).amax() < 1e-10);
        }

        assert!(mean(&out).norm() * n as f64 <= 1e-10);
    }
}

#[test]
fn deterministic_forward_and_input_checks() {
    let params = dense_params(ModelConfig::default(), 5);
    let mut r = rng::seeded(6);
    let x = coords(4, 1.0, &mut r);
    let c = coords(4, 1.0, &mut r);
    let f = vec![0; 4];
    assert_eq!(params.forward(&x, &c, &f, 0.2).unwrap(), params.forward(&x, &c, &f, 0.2).unwrap());
    assert!(params.forward(&x[..1], &c[..1], &f[..1], 0.2).is_err());
    assert!(params.forward(&x, &c[..3], &f, 0.2).is_err());
    assert!(params.forward(&x, &c, &[0, 0, 0, 99], 0.2).is_err());
}

#[test]
fn own_output_gives_zero_loss_and_gradient() {
    let params = dense_params(ModelConfig::default(), 7);
    let mut r = rng::seeded(8);
    let mut it = item(4, 1.0, &mut r);
    it.target = params.forward(&it.r_t, &it.condition, &it.features, it.t).unwrap();
    let (loss, grads) = loss_and_grad(&params, &[it]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn lambda_scales_loss_and_gradient_linearly() {
    let params = dense_params(ModelConfig::default(), 9);
    let mut r = rng::seeded(10);
    let base = item(4, 1.0, &mut r);
    let mut scaled = base.clone();
    scaled.lambda = 10.0;
    let (l1, g1) = loss_and_grad(&params, &[base]).unwrap();
    let (l10, g10) = loss_and_grad(&params, &[scaled]).unwrap();
    assert!((l10 - 10.0 * l1).abs() <= 1e-12 * l10.abs());
    let scale = g10.norm();
    for (a, b) in g1.as_slice().iter().zip(g10.as_slice()) {
        assert!((b - 10.0 * a).abs() <= 1e-12 * scale);
    }
}

#[test]
fn empty_batch_is_rejected() {
    let params = dense_params(ModelConfig::default(), 11);
    assert!(loss_and_grad(&params, &[]).is_err());
}
