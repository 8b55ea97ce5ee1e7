use gdb_core::oracles::{girsanov_kl_study, ou_bridge_drift, KLStudyConfig, OUSpec};
use gdb_core::rng;
use gdb_core::geom::Vec3;
use rand::Rng;
use rand_distr::StandardNormal;

/// RMS terminal miss of Euler paths of the OU bridge drift.
fn terminal_rms(spec: &OUSpec, steps: usize, paths: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let horizon = 1.0;
    let z1 = [Vec3::new(0.8, -0.4, 1.2)];
    let dt = horizon / steps as f64;
    let mut sq = 0.0;
    for _ in 0..paths {
        let mut x = [Vec3::new(-0.5, 0.2, 0.0)];
        for k in 0..steps {
            let b = ou_bridge_drift(&x, k as f64 * dt, &z1, horizon, spec).unwrap();
            let e = Vec3::from_fn(|_, _| r.sample::<f64, _>(StandardNormal));
            x[0] += b[0] * dt + e * (spec.sigma * dt.sqrt());
        }
        sq += (x[0] - z1[0]).norm_squared() / 3.0;
    }
    (sq / paths as f64).sqrt()
}

#[test]
fn ou_bridge_pins_its_endpoint() {
    let spec = OUSpec::new(1.0, 1.0).unwrap();
    let steps = 200;
    let rms = terminal_rms(&spec, steps, 10_000, 1);
    let bound = 3.0 * spec.sigma * (1.0 / steps as f64).sqrt();
    assert!(rms < bound, "rms {rms} vs {bound}");
}

#[test]
fn ou_bridge_endpoint_error_shrinks_like_root_steps() {
    let spec = OUSpec::new(1.0, 0.7).unwrap();
    let coarse = terminal_rms(&spec, 50, 4000, 2);
    let fine = terminal_rms(&spec, 200, 4000, 3);
    let ratio = coarse / fine;
    assert!((ratio / 2.0 - 1.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn per_segment_kl_decreases_with_segment_count() {
    let spec = OUSpec::new(1.0, 1.0).unwrap();
    let rows = girsanov_kl_study(&spec, &KLStudyConfig::default(), &mut rng::seeded(4)).unwrap();
    for row in &rows {
        eprintln!("{} {:.6e} {:.3e} max {:.6e}", row.segments, row.mean_kl, row.stderr, row.max_kl);
        assert!(row.mean_kl >= -2.0 * row.stderr);
    }
    for w in rows.windows(2) {
        let gap = w[0].mean_kl - w[1].mean_kl;
        assert!(gap > 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt(), "{:?} -> {:?}", w[0], w[1]);
    }
    let last = rows.last().unwrap();
    assert!(last.max_kl * 4.0 <= rows[0].max_kl);
}
