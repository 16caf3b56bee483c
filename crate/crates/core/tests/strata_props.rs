//! Cross-module properties: defect ordering in the symmetry order, the
//! multiscale Reifenberg sum against a non-dyadic refinement, and the tested
//! L² inequality in its degenerate corners.

use fhm_core::fields::{GridDomain, Point, SphereMap};
use fhm_core::integrand::IntegrandModel;
use fhm_core::monotone::ProfileComputer;
use fhm_core::strata::{
    jones_beta, l2_approx_check, reifenberg_integral, symmetry_defect, DefectOptions,
    MeasureCloud, ThresholdConfig,
};

fn quick_opts() -> DefectOptions {
    DefectOptions {
        blow_points: 20,
        coarse_directions: 128,
        refine_steps: 12,
        radial_samples: 24,
        translate_samples: 12,
        angle_bins: 64,
    }
}

fn thresholds(h: f64) -> ThresholdConfig {
    ThresholdConfig {
        eps0: 1.0,
        eps_strat: 0.05,
        delta_pinch: 0.5,
        rho: 0.4,
        r0: 4.0 * h,
        reifenberg_delta: 0.1,
    }
}

#[test]
fn defect_order_monotone_in_k() {
    // a (k+1)-symmetric competitor is in particular k-symmetric, so the
    // distances are ordered; checked on the analytic presets and a smooth map
    let opts = quick_opts();
    let cases: Vec<(SphereMap, Vec<Point>)> = vec![
        (
            SphereMap::hedgehog(GridDomain::ball(3, 0.5, 48).unwrap(), 0.0).unwrap(),
            vec![[0.0, 0.0, 0.0], [0.1, 0.05, 0.0]],
        ),
        (
            SphereMap::cylinder(GridDomain::ball(3, 0.5, 48).unwrap()).unwrap(),
            vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.12]],
        ),
        (
            SphereMap::from_fn(GridDomain::ball(3, 0.5, 48).unwrap(), 3, |p, out| {
                let phi = 1.3 * p[0] - 0.4 * p[1];
                out[0] = phi.cos();
                out[1] = phi.sin();
                out[2] = 0.8;
            })
            .unwrap(),
            vec![[0.05, -0.05, 0.1]],
        ),
    ];
    for (u, points) in &cases {
        for x in points {
            for r in [0.15, 0.3] {
                let mut prev = -1.0;
                for k in 0..=3usize {
                    let d = symmetry_defect(u, x, r, k, &opts).unwrap();
                    assert!(
                        d.ambient >= prev - 1e-4,
                        "D^{k}({x:?},{r}) = {} dropped below D^{} = {prev}",
                        d.ambient,
                        k.saturating_sub(1),
                    );
                    prev = d.ambient;
                }
            }
        }
    }
}

#[test]
fn reifenberg_dyadic_matches_riemann_refinement() {
    // points on a unit-radius circular arc in the plane; the dyadic ladder
    // approximates ∫ β²(y, s) ds/s within 10% of a dense Riemann refinement
    let n_pts = 400;
    let pts: Vec<Point> = (0..n_pts)
        .map(|i| {
            let t = -0.35 + 0.7 * i as f64 / (n_pts - 1) as f64;
            [t.sin(), 1.0 - t.cos(), 0.0]
        })
        .collect();
    let w = vec![1.0 / n_pts as f64; n_pts];
    let mu = MeasureCloud::new(2, pts.clone(), w.clone()).unwrap();
    let x = [0.0, 0.0, 0.0];
    let (r, k, r0) = (0.2, 1usize, 0.025);
    let (raw, _) = reifenberg_integral(&mu, &x, r, k, r0).unwrap();

    // non-dyadic Riemann refinement of the double sum
    let steps = 400;
    let mut oracle = 0.0;
    for (p, &wy) in pts.iter().zip(&w) {
        if fhm_core::fields::dist(p, &x) > r {
            continue;
        }
        for j in 0..steps {
            let s0 = r0 * (r / r0).powf(j as f64 / steps as f64);
            let s1 = r0 * (r / r0).powf((j + 1) as f64 / steps as f64);
            let s_mid = (s0 * s1).sqrt();
            let b = jones_beta(&mu, p, s_mid, k).unwrap();
            oracle += wy * b * b * (s1 / s0).ln();
        }
    }
    assert!(
        (raw - oracle).abs() <= 0.1 * oracle.max(1e-12),
        "dyadic {raw} vs refined {oracle}"
    );
    assert!(raw > 0.0);
}

#[test]
fn l2_check_degenerate_corners() {
    let h = 1.0 / 96.0;
    let cfg = thresholds(h);
    let opts = quick_opts();

    // cylinder: atoms on the singular axis, k = 1 → the cloud is a line, so
    // the left side vanishes
    let d = GridDomain::ball(3, 0.5, 96).unwrap();
    let u = SphereMap::cylinder(d).unwrap();
    let model = IntegrandModel::dirichlet(3, 3);
    let pc = ProfileComputer::new(&u, &model).unwrap();
    let atoms: Vec<Point> = (0..9)
        .map(|i| [0.0, 0.0, -0.02 + 0.005 * i as f64])
        .collect();
    let mu = MeasureCloud::new(3, atoms.clone(), vec![1.0; atoms.len()]).unwrap();
    let r = 4.0 * h;
    let chk = l2_approx_check(&pc, &mu, &[0.0; 3], r, 1, &cfg, &opts).unwrap();
    assert!(chk.lhs <= 1e-12, "axis cloud lhs = {}", chk.lhs);
    assert!(chk.rhs >= 0.0);

    // hedgehog: a single atom at the defect, k = 0 → β of one point is zero
    let d = GridDomain::ball(3, 0.5, 96).unwrap();
    let u = SphereMap::hedgehog(d, 0.0).unwrap();
    let pc = ProfileComputer::new(&u, &model).unwrap();
    let mu = MeasureCloud::new(3, vec![[0.0; 3]], vec![1.0]).unwrap();
    let chk = l2_approx_check(&pc, &mu, &[0.0; 3], r, 0, &cfg, &opts).unwrap();
    assert_eq!(chk.lhs, 0.0);
    assert!(chk.rhs >= 0.0);
    // the hedgehog ball is 0-symmetric but not 1-symmetric at this scale
    assert!(chk.applicable);
}
