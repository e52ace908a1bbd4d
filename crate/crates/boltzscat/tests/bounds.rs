use boltzscat::bounds::*;
use boltzscat::collision::KernelSpec;
use boltzscat::maxwellian::GlobalMaxwellianParams;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;

fn desk(m: f64) -> (GlobalMaxwellianParams, KernelSpec) {
    (GlobalMaxwellianParams::standard(2, m), KernelSpec::constant(2, 0.0, 1.0).unwrap())
}

#[test]
fn desk_mu() {
    let (p, k) = desk(1.0);
    let r = mu_of_m(&p, &k, 1024).unwrap();
    assert!((r.bound - PI).abs() < 1e-12);
    assert!((r.time_integral_quad - PI).abs() < 1e-10);
    // the sampled sup misses the exact center only slightly
    assert!(r.numeric <= r.bound && r.numeric > 0.95 * r.bound, "{r:?}");
    assert!((r.sharpened - PI / 2.0).abs() < 1e-10);
}

#[test]
fn desk_nu() {
    let (p, k) = desk(1.0);
    let r = nu_of_m(&p, &k, 512).unwrap();
    assert!((r.bound - 5.0133).abs() < 1e-4);
    assert!(r.numeric <= r.bound && r.numeric > 0.0);
}

#[test]
fn constants_are_linear_in_mass() {
    let (p1, k) = desk(0.3);
    let (p2, _) = desk(0.6);
    let a = nu_of_m(&p1, &k, 64).unwrap();
    let b = nu_of_m(&p2, &k, 64).unwrap();
    assert!((b.bound - 2.0 * a.bound).abs() < 1e-14);
    assert!((b.numeric - 2.0 * a.numeric).abs() < 1e-12 * b.numeric);
    let a = mu_of_m(&p1, &k, 64).unwrap();
    let b = mu_of_m(&p2, &k, 64).unwrap();
    assert!((b.bound - 2.0 * a.bound).abs() < 1e-14);
    assert!((b.numeric - 2.0 * a.numeric).abs() < 1e-9 * b.numeric);
}

#[test]
fn admissible_mass_values() {
    let (p, k) = desk(7.0);
    let m1 = admissible_mass(&p, &k, 1.0).unwrap();
    assert!((m1 - 0.04987).abs() < 1e-5);
    let mh = admissible_mass(&p, &k, 0.5).unwrap();
    assert!((mh - 0.5 * m1).abs() < 1e-16);
    let (ps, _) = desk(mh);
    let rep = bounds_report(&ps, &k, 16).unwrap();
    assert!(rep.contraction_ok);
    assert!((rep.nu_bound - 0.125).abs() < 1e-14);
    assert!(admissible_mass(&p, &k, 0.0).is_err());
}

#[test]
fn sup_norm_constant_rejects_hard_potentials() {
    let p = GlobalMaxwellianParams::standard(2, 1.0);
    let k = KernelSpec::constant(2, 0.5, 1.0).unwrap();
    assert!(mu_of_m(&p, &k, 8).is_err());
    assert!(mu_bound(&p, &k).is_err());
    assert!(nu_of_m(&p, &k, 8).is_ok());
    let rep = bounds_report(&p, &k, 8).unwrap();
    assert!(rep.mu_bound.is_none());
}

#[test]
fn truncation_meets_tolerance_by_quadrature() {
    let (p, k) = desk(1.0);
    for tol in [1e-2, 1e-4, 1e-6] {
        let t = time_truncation(&p, &k, tol).unwrap();
        // tail of ∫ dt/(1+t²) beyond ±T
        let exact = PI - 2.0 * t.t.atan();
        assert!(exact < tol && exact > 0.99 * tol, "{tol} {t:?} {exact}");
    }
}

#[test]
fn off_center_time_integral() {
    // t* = b/a = 0.5; the split at t = 0 is not symmetric
    let p = GlobalMaxwellianParams::centered(2, 1.0, 2.0, 1.0, 1.0, 0.2).unwrap();
    let k = KernelSpec::constant(2, -0.5, 1.0).unwrap();
    let r = mu_of_m(&p, &k, 64).unwrap();
    assert!((r.time_integral - r.time_integral_quad).abs() < 1e-10 * r.time_integral);
    assert!(r.sharpened < r.bound && r.sharpened > 0.5 * r.bound);
}

fn arb_params() -> impl Strategy<Value = (GlobalMaxwellianParams, KernelSpec)> {
    (2usize..=3, 0.1f64..2.0, 0.5f64..2.0, -0.5f64..0.5, 0.5f64..2.0, -0.4f64..0.4, 0.0f64..1.0, -1.0f64..1.0)
        .prop_filter_map("admissible", |(d, m, a, b, c, om, bfrac, shift)| {
            let mut bm = DMatrix::zeros(d, d);
            bm[(0, 1)] = om;
            bm[(1, 0)] = -om;
            let x0 = (0..d).map(|i| shift * (i as f64 + 1.0)).collect();
            let v0 = (0..d).map(|i| -0.5 * shift * i as f64).collect();
            let p = GlobalMaxwellianParams::new(d, m, a, b, c, bm, x0, v0).ok()?;
            let lo = 1.0 - d as f64;
            let beta = lo + 0.05 + bfrac * (1.0 - lo - 0.05);
            Some((p, KernelSpec::constant(d, beta, 1.0).ok()?))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn numeric_constants_stay_below_bounds((p, k) in arb_params()) {
        let nu = nu_of_m(&p, &k, 128).unwrap();
        prop_assert!(nu.numeric <= nu.bound, "{nu:?}");
        if k.beta <= 0.0 {
            let mu = mu_of_m(&p, &k, 128).unwrap();
            prop_assert!(mu.numeric <= mu.bound * (1.0 + 1e-12), "{mu:?}");
        }
    }
}

proptest! {
    #[test]
    fn radius_round_trip(nu in 1e-3f64..0.2499, frac in 0.0f64..0.999) {
        let r = frac * r_max(nu).unwrap();
        let eps = eps_of_r(nu, r).unwrap();
        let back = r_of_eps(nu, eps).unwrap();
        prop_assert!((back - r).abs() <= 1e-12 * (1.0 + r), "{r} {back}");
        let eps2 = eps_of_r(nu, back).unwrap();
        prop_assert!((eps2 - eps).abs() <= 1e-12 * (1.0 + eps));
    }

    #[test]
    fn contraction_certificate(nu in 1e-3f64..0.2499, frac in 0.0f64..0.999_999) {
        let eps = frac * eps_max(nu).unwrap();
        let r = r_of_eps(nu, eps).unwrap();
        prop_assert!(4.0 * nu * (1.0 + r) < 1.0);
        prop_assert!(r < r_max(nu).unwrap());
        let r2 = r_of_eps(nu, eps * 0.5).unwrap();
        prop_assert!(r2 <= r);
    }
}
