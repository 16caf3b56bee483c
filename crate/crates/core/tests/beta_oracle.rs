//! Brute-force oracle for the Jones β₂ eigen-solution, plus its invariance
//! properties.

use fhm_core::fields::Point;
use fhm_core::strata::{jones_beta, MeasureCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, max_pts: usize) -> MeasureCloud {
    let n = rng.gen_range(3..=max_pts);
    let points: Vec<Point> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ]
        })
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    MeasureCloud::new(3, points, weights).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-3 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Mean-squared distance of the restricted cloud to an affine k-plane given
/// by an origin and an orthonormal basis.
fn plane_cost(mu: &MeasureCloud, x: &Point, r: f64, origin: &[f64; 3], basis: &[[f64; 3]]) -> f64 {
    let mut acc = 0.0;
    for (p, &w) in mu.points.iter().zip(&mu.weights) {
        let d = [p[0] - x[0], p[1] - x[1], p[2] - x[2]];
        if (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() > r {
            continue;
        }
        let mut v = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        for b in basis {
            let c = v[0] * b[0] + v[1] * b[1] + v[2] * b[2];
            for a in 0..3 {
                v[a] -= c * b[a];
            }
        }
        acc += w * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    acc
}

fn orthonormalize(dirs: &mut Vec<[f64; 3]>) -> bool {
    for i in 0..dirs.len() {
        for j in 0..i {
            let c = dirs[i][0] * dirs[j][0] + dirs[i][1] * dirs[j][1] + dirs[i][2] * dirs[j][2];
            for a in 0..3 {
                dirs[i][a] -= c * dirs[j][a];
            }
        }
        let n = (dirs[i][0] * dirs[i][0] + dirs[i][1] * dirs[i][1] + dirs[i][2] * dirs[i][2]).sqrt();
        if n < 1e-6 {
            return false;
        }
        for a in 0..3 {
            dirs[i][a] /= n;
        }
    }
    true
}

/// Randomized affine-plane search with shrinking local refinement; never
/// touches the eigendecomposition path.
fn brute_force_beta(
    mu: &MeasureCloud,
    x: &Point,
    r: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut best_cost = f64::INFINITY;
    let mut best: Option<([f64; 3], Vec<[f64; 3]>)> = None;
    for _ in 0..4000 {
        // random origin near the restricted cloud
        let pick = rng.gen_range(0..mu.points.len());
        let jitter = 0.3;
        let origin = [
            mu.points[pick][0] + rng.gen_range(-jitter..jitter),
            mu.points[pick][1] + rng.gen_range(-jitter..jitter),
            mu.points[pick][2] + rng.gen_range(-jitter..jitter),
        ];
        let mut basis: Vec<[f64; 3]> = (0..k).map(|_| random_unit(rng)).collect();
        if !orthonormalize(&mut basis) {
            continue;
        }
        let c = plane_cost(mu, x, r, &origin, &basis);
        if c < best_cost {
            best_cost = c;
            best = Some((origin, basis));
        }
    }
    let (mut origin, mut basis) = best.unwrap();
    let mut scale = 0.2;
    for _ in 0..60 {
        let mut improved = false;
        for _ in 0..30 {
            let cand_origin = [
                origin[0] + rng.gen_range(-scale..scale),
                origin[1] + rng.gen_range(-scale..scale),
                origin[2] + rng.gen_range(-scale..scale),
            ];
            let mut cand_basis = basis.clone();
            for b in cand_basis.iter_mut() {
                for a in 0..3 {
                    b[a] += rng.gen_range(-scale..scale);
                }
            }
            if !orthonormalize(&mut cand_basis) {
                continue;
            }
            let c = plane_cost(mu, x, r, &cand_origin, &cand_basis);
            if c < best_cost {
                best_cost = c;
                origin = cand_origin;
                basis = cand_basis;
                improved = true;
            }
        }
        if !improved {
            scale *= 0.7;
        }
    }
    (best_cost * r.powi(-2 - k as i32)).max(0.0).sqrt()
}

#[test]
fn eigen_beta_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let mut checked = 0;
    for trial in 0..100 {
        let mu = random_cloud(&mut rng, 20);
        let k = trial % 3;
        let r = 1.0;
        let x = [0.0, 0.0, 0.0];
        let eig = jones_beta(&mu, &x, r, k).unwrap();
        let oracle = brute_force_beta(&mu, &x, r, k, &mut rng);
        // the eigen route is the exact minimizer: it must never exceed the
        // search, and the refined search must come within 1e-4
        assert!(
            eig <= oracle + 1e-9,
            "trial {trial} k={k}: eigen {eig} above brute force {oracle}"
        );
        assert!(
            (oracle - eig).abs() <= 1e-4,
            "trial {trial} k={k}: eigen {eig} vs brute force {oracle}"
        );
        checked += 1;
    }
    assert_eq!(checked, 100);
}

#[test]
fn beta_invariant_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let mu = random_cloud(&mut rng, 15);
        let k = rng.gen_range(0..3);
        let r = 1.2;
        let base = jones_beta(&mu, &[0.0; 3], r, k).unwrap();
        if base < 1e-6 {
            // degenerate (exactly planar) clouds lose their exact zero to
            // coordinate rounding under rotation; covered by the exact
            // plane-supported test instead
            continue;
        }
        // translation
        let t = [0.3, -1.1, 0.7];
        let shifted = MeasureCloud::new(
            3,
            mu.points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
            mu.weights.clone(),
        )
        .unwrap();
        let b_t = jones_beta(&shifted, &t, r, k).unwrap();
        assert!((base - b_t).abs() < 1e-10, "translation: {base} vs {b_t}");
        // rotation about z by a random angle
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (c, s) = (ang.cos(), ang.sin());
        let rotated = MeasureCloud::new(
            3,
            mu.points
                .iter()
                .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect(),
            mu.weights.clone(),
        )
        .unwrap();
        let b_r = jones_beta(&rotated, &[0.0; 3], r, k).unwrap();
        assert!((base - b_r).abs() < 1e-10, "rotation: {base} vs {b_r}");
    }
}

#[test]
fn beta_invariant_under_scaling_with_weight_law() {
    // scaling points and radius by λ leaves β unchanged when weights scale
    // by λ^k
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..20 {
        let mu = random_cloud(&mut rng, 15);
        let k = rng.gen_range(0..3);
        let r = 0.9;
        let lam = rng.gen_range(0.2..3.0);
        let base = jones_beta(&mu, &[0.0; 3], r, k).unwrap();
        if base < 1e-6 {
            continue;
        }
        let scaled = MeasureCloud::new(
            3,
            mu.points
                .iter()
                .map(|p| [lam * p[0], lam * p[1], lam * p[2]])
                .collect(),
            mu.weights.iter().map(|w| w * lam.powi(k as i32)).collect(),
        )
        .unwrap();
        let b_s = jones_beta(&scaled, &[0.0; 3], lam * r, k).unwrap();
        assert!(
            (base - b_s).abs() < 1e-10 * (1.0 + base),
            "scaling: {base} vs {b_s}"
        );
    }
}
