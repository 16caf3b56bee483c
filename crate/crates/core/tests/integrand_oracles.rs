//! Independent oracles for the integrand machinery: the Jensen-type
//! inequality on step densities, derivative consistency against finite
//! differences, and a dense-trapezoid oracle for the correction integral.

use fhm_core::integrand::{jensen_transform, IntegrandKind, IntegrandModel, TabulatedF};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f1_model(beta: f64) -> IntegrandModel {
    IntegrandModel::f1(beta, 10.0, 3, 3).unwrap()
}

/// Step density on a ball: shell volumes and constant values per shell.
fn random_step_density(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let shells = rng.gen_range(2..8);
    let mut cuts: Vec<f64> = (0..shells - 1).map(|_| rng.gen_range(0.05..1.0f64)).collect();
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut vols = Vec::with_capacity(shells);
    let mut prev = 0.0f64;
    for &c in &cuts {
        vols.push(c.powi(3) - prev.powi(3));
        prev = c;
    }
    let vals: Vec<f64> = (0..shells).map(|_| rng.gen_range(0.0..50.0f64)).collect();
    (vols, vals)
}

#[test]
fn jensen_inequality_on_step_densities() {
    // ⨍ e(f) ≤ J_e(⨍ f) + 1e-9 over 1000 random step functions
    let model = f1_model(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..1000 {
        let (vols, vals) = random_step_density(&mut rng);
        let total: f64 = vols.iter().sum();
        let mean_f: f64 = vols.iter().zip(&vals).map(|(v, p)| v * p).sum::<f64>() / total;
        let mean_e: f64 = vols
            .iter()
            .zip(&vals)
            .map(|(v, p)| v * model.error_term_raw(*p).unwrap())
            .sum::<f64>()
            / total;
        let bound = model.j_e(mean_f).unwrap();
        if mean_e > bound + 1e-9 {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn jensen_inequality_for_tabulated_convex_integrand() {
    // samples of a convex admissible integrand; the table spans far enough
    // that the Jensen tail beyond its range is negligible at the tested
    // densities
    // the table spans two decades past the largest tested density so the
    // truncated Jensen tail leaves real slack in the bound
    let p: Vec<f64> = (0..=240).map(|i| 1e4 * (i as f64 / 240.0).powi(4)).collect();
    let f: Vec<f64> = p.iter().map(|&x| x * (2.0 - (x + 1.0f64).powf(-0.3))).collect();
    let t = TabulatedF::new(p, f).unwrap();
    let mut model = IntegrandModel::new(IntegrandKind::Tabulated(t), 10.0, 0.0, 3, 3).unwrap();
    let rep = model.verify_assumptions(&fhm_core::integrand::log_samples(1e4, 200));
    assert!(rep.ellipticity_ok && rep.integrability_ok, "{rep:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..120 {
        let (vols, vals) = random_step_density(&mut rng);
        let vals: Vec<f64> = vals.iter().map(|v| v * 4.0).collect(); // stay in range
        let total: f64 = vols.iter().sum();
        let mean_f: f64 = vols.iter().zip(&vals).map(|(v, p)| v * p).sum::<f64>() / total;
        let mean_e: f64 = vols
            .iter()
            .zip(&vals)
            .map(|(v, p)| v * model.error_term_raw(*p).unwrap())
            .sum::<f64>()
            / total;
        let bound = model.j_e(mean_f).unwrap();
        assert!(
            mean_e <= bound + 1e-9,
            "tabulated Jensen violated: {mean_e} > {bound}"
        );
    }
}

#[test]
fn jensen_transform_dominates_g() {
    // J_g(x) ≥ g(x) for admissible g' ≥ 0
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let a = rng.gen_range(0.1..3.0f64);
        let b = rng.gen_range(1.1..3.0f64);
        let gp = move |t: f64| a / (1.0 + t).powf(b); // positive, integrable tail
        for x in [0.0, 0.2, 1.0, 7.0] {
            let j = jensen_transform(&gp, x, 1e12).unwrap();
            let g = fhm_core::quad::adaptive_simpson(&gp, 0.0, x, 1e-12);
            assert!(j >= g - 1e-10, "J({x}) = {j} < g = {g}");
        }
    }
}

#[test]
fn error_term_vanishes_at_zero_and_is_nondecreasing() {
    for model in [f1_model(0.5), f1_model(0.25), IntegrandModel::dirichlet(3, 3)] {
        assert_eq!(model.error_term_raw(0.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for i in 1..200 {
            let p = 1e-3 * (1e9f64).powf(i as f64 / 199.0);
            let e = model.error_term_raw(p).unwrap();
            assert!(e >= prev - 1e-12, "e({p}) = {e} dropped below {prev}");
            prev = e;
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    // F_p and F_pp against centered differences at 100 log-spaced p values
    let models = [
        IntegrandModel::dirichlet(3, 3),
        f1_model(0.5),
        f1_model(0.25),
    ];
    for model in &models {
        for i in 0..100 {
            let p = 1e-2 * (1e8f64).powf(i as f64 / 99.0);
            let dp = 1e-4 * p.max(1e-3);
            let (_, fp, fpp) = model.eval_raw(p).unwrap();
            let (f_hi, fp_hi, _) = model.eval_raw(p + dp).unwrap();
            let (f_lo, fp_lo, _) = model.eval_raw((p - dp).max(0.0)).unwrap();
            let fd1 = (f_hi - f_lo) / (p + dp - (p - dp).max(0.0));
            let fd2 = (fp_hi - fp_lo) / (p + dp - (p - dp).max(0.0));
            assert!(
                (fp - fd1).abs() <= 1e-6 * fp.abs().max(1.0),
                "F_p mismatch at p = {p}: {fp} vs {fd1}"
            );
            assert!(
                (fpp - fd2).abs() <= 1e-6 * fpp.abs().max(1e-6),
                "F_pp mismatch at p = {p}: {fpp} vs {fd2}"
            );
        }
    }
}

#[test]
fn correction_matches_dense_trapezoid_oracle() {
    // h(r) = 2∫_0^r t·J_e(2 c_e A² t^{-2}) dt against a 10⁶-point trapezoid
    // built on the closed form J_e(y) = y·(y+1)^{-β} for the curved example
    let beta = 0.5;
    let model = f1_model(beta);
    let a = 2.0;
    let r = 0.5;
    let alpha = 2.0 * model.c_e * a * a;
    let j_closed = |y: f64| y * (y + 1.0).powf(-beta);
    let n = 1_000_000usize;
    let dt = r / n as f64;
    let mut oracle = 0.0;
    let integrand = |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            t * j_closed(alpha / (t * t))
        }
    };
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        oracle += w * integrand(i as f64 * dt);
    }
    oracle *= 2.0 * dt;
    let got = model.h_with_a(r, a).unwrap();
    assert!(got > 0.0);
    assert!(
        (got - oracle).abs() <= 1e-6 * oracle,
        "h = {got}, oracle = {oracle}, rel {}",
        ((got - oracle) / oracle).abs()
    );
}

#[test]
fn correction_identity_under_rescaling() {
    // h_λ(r) = h(λ r) with the same calibrated constant
    let mut model = f1_model(0.5);
    model.calibrate_a(1.0).unwrap();
    let resc = model.rescale(0.5).unwrap();
    for r in [0.25, 0.5, 1.0] {
        let lhs = resc.correction_h(r).unwrap();
        let rhs = model.correction_h(0.5 * r).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-6 * (1.0 + rhs.abs()),
            "h_λ({r}) = {lhs} vs h({}) = {rhs}",
            0.5 * r
        );
    }
}
