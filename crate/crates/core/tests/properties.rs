use euler_embed::dynamics::integrate_midpoint;
use euler_embed::embedding::{build_smap, level3_fields, random_chart_point, Level};
use euler_embed::gates::random_conservative;
use euler_embed::liegroup::haar_sample;
use euler_embed::sampling::{gaussian_vector, rng_from_seed};
use euler_embed::verify::transport_residual;
use euler_embed::InnerProduct;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smap_reproduces_b(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = rng_from_seed(seed);
        let b = random_conservative::<f64, _>(&mut rng, n);
        let s = build_smap(&b).unwrap();
        let y = gaussian_vector::<f64, _>(&mut rng, n) * 4.0;
        let err = (s.at(&y) * &y - b.rhs(&y)).norm();
        prop_assert!(err < 1e-12 * (1.0 + y.norm_squared()));
    }

    #[test]
    fn transport_identity_holds(seed in any::<u64>(), n in 2usize..=5) {
        let mut rng = rng_from_seed(seed);
        let s = build_smap(&random_conservative::<f64, _>(&mut rng, n)).unwrap();
        let y = gaussian_vector::<f64, _>(&mut rng, n);
        let z = gaussian_vector::<f64, _>(&mut rng, n);
        let q = haar_sample::<f64, _>(&mut rng, n);
        let (analytic, fd) = transport_residual(&s, &y, &z, &q, 1e-5);
        prop_assert!(analytic < 1e-11);
        prop_assert!(fd < 1e-6);
    }

    #[test]
    fn gram_identity_holds(seed in any::<u64>(), n in 2usize..=5) {
        let mut rng = rng_from_seed(seed);
        let s = build_smap(&random_conservative::<f64, _>(&mut rng, n)).unwrap();
        let (chart, x) = random_chart_point::<f64, _>(&mut rng, n, Level::L3, 1.0);
        let y = gaussian_vector::<f64, _>(&mut rng, n);
        let z = gaussian_vector::<f64, _>(&mut rng, n);
        let fy = level3_fields(&s, &y, &chart, &x).unwrap();
        let fz = level3_fields(&s, &z, &chart, &x).unwrap();
        prop_assert!((fy.f.dot(&fz.f) - y.dot(&z)).abs() < 1e-12 * (1.0 + y.norm() * z.norm()));
    }

    #[test]
    fn midpoint_conserves_quadratic_energy(seed in any::<u64>(), n in 2usize..=5) {
        let mut rng = rng_from_seed(seed);
        let b = random_conservative::<f64, _>(&mut rng, n);
        let y0 = gaussian_vector::<f64, _>(&mut rng, n).normalize();
        let step = 0.1 / (1.0 + b.coeffs().iter().fold(0.0f64, |a, c| a.max(c.abs())) * n as f64);
        let traj = integrate_midpoint(&b, &InnerProduct::identity(n), &y0, (0.0, 5.0), step, 1e-15).unwrap();
        prop_assert!(traj.energy_drift() < 1e-12);
    }
}

#[test]
fn single_precision_pipeline() {
    let mut rng = rng_from_seed(3);
    let b = random_conservative::<f32, _>(&mut rng, 3);
    let s = build_smap(&b).unwrap();
    let y = gaussian_vector::<f32, _>(&mut rng, 3);
    let err = (s.at(&y) * &y - b.rhs(&y)).norm();
    assert!(err < 1e-5 * (1.0 + y.norm_squared()));
    let (chart, x) = random_chart_point::<f32, _>(&mut rng, 3, Level::L3, 1.0);
    let e = level3_fields(&s, &y, &chart, &x).unwrap();
    assert!((e.p_prime - 0.5 * y.norm_squared()).abs() < 1e-5);
}
