//! Singular-set analytics: symmetry defects, quantitative strata, density
//! threshold detection, regularity scales, Jones β₂ numbers, covering
//! refinement and Minkowski content.

pub mod beta;
pub mod cover;
pub mod defect;

pub use beta::{effective_span, jones_beta, reifenberg_integral, AffinePlane, MeasureCloud};
pub use cover::{covering_refine, minkowski_content, BallLabel, CoverBall, CoverReport, ProfileTable};
pub use defect::{fibonacci_sphere, symmetry_defect, DefectOptions, SymmetryDefect};

use crate::error::{Error, Result};
use crate::fields::{Point, SphereMap};
use crate::monotone::ProfileComputer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Detection and refinement thresholds.  The density threshold `eps0` and the
/// pinch threshold `delta_pinch` are calibrated per experiment and recorded
/// with the results; the Reifenberg constant is a reporting threshold only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub eps0: f64,
    pub eps_strat: f64,
    pub delta_pinch: f64,
    pub rho: f64,
    pub r0: f64,
    pub reifenberg_delta: f64,
}

impl ThresholdConfig {
    pub fn validate(&self, spacing: f64) -> Result<()> {
        for (name, v) in [
            ("eps0", self.eps0),
            ("eps_strat", self.eps_strat),
            ("delta_pinch", self.delta_pinch),
            ("rho", self.rho),
            ("r0", self.r0),
            ("reifenberg_delta", self.reifenberg_delta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("threshold {name} must be positive, got {v}")));
            }
        }
        if self.rho >= 1.0 {
            return Err(Error::Domain("refinement ratio rho must be below 1".into()));
        }
        if self.r0 < 4.0 * spacing - 1e-12 {
            return Err(Error::Domain(format!(
                "finest scale r0 = {} below the 4h resolution floor (h = {spacing})",
                self.r0
            )));
        }
        Ok(())
    }
}

/// Symmetry-defect table over a point list, a scale ladder and all symmetry
/// orders, with membership flags derived from it.
#[derive(Debug, Clone, Serialize)]
pub struct StratumReport {
    pub n_dim: usize,
    pub points: Vec<Point>,
    pub scales: Vec<f64>,
    /// `defects[p][s][k]`, ambient-valued, for `k` in `0..=n_dim`.
    pub defects: Vec<Vec<Vec<f64>>>,
    /// Projected (sphere-valued) companion of `defects`.
    pub defects_projected: Vec<Vec<Vec<f64>>>,
    /// Estimated regularity scale per point (when requested).
    pub regularity_scales: Vec<f64>,
}

impl StratumReport {
    pub fn defect(&self, point: usize, scale: usize, k: usize) -> f64 {
        self.defects[point][scale][k]
    }

    /// Membership in the stratum `S^k_{eps, r}`: no sampled scale in
    /// `[r, s_max]` is `(k+1, eps)`-symmetric, i.e. `D^{k+1} > eps` at all of
    /// them.
    pub fn membership(&self, point: usize, k: usize, eps: f64, r: f64) -> bool {
        self.scales
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= r - 1e-12)
            .all(|(si, _)| self.defects[point][si][k + 1] > eps)
    }
}

/// Build the defect table for `points` at the given `scales`.
pub fn build_stratum_report(
    u: &SphereMap,
    points: &[Point],
    scales: &[f64],
    opts: &DefectOptions,
) -> Result<StratumReport> {
    let n = u.domain.n_dim;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..scales.len()).map(move |s| (p, s)))
        .collect();
    let computed: Vec<(Vec<f64>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let mut amb = Vec::with_capacity(n + 1);
            let mut proj = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let d = symmetry_defect(u, &points[p], scales[s], k, opts)?;
                amb.push(d.ambient);
                proj.push(d.projected);
            }
            Ok((amb, proj))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut defects = vec![vec![Vec::new(); scales.len()]; points.len()];
    let mut defects_projected = vec![vec![Vec::new(); scales.len()]; points.len()];
    for (ji, &(p, s)) in jobs.iter().enumerate() {
        defects[p][s] = computed[ji].0.clone();
        defects_projected[p][s] = computed[ji].1.clone();
    }
    Ok(StratumReport {
        n_dim: n,
        points: points.to_vec(),
        scales: scales.to_vec(),
        defects,
        defects_projected,
        regularity_scales: Vec::new(),
    })
}

/// Detected singular points: grid nodes whose corrected density stays above
/// `eps0` at every sampled scale of the dyadic ladder `r0, 2r0, …, r_max`
/// (one small scale below the threshold certifies regularity).
pub fn singular_detect(
    computer: &ProfileComputer,
    cfg: &ThresholdConfig,
    r_max: f64,
) -> Result<Vec<(usize, Point)>> {
    let u = computer.u;
    let d = &u.domain;
    cfg.validate(d.spacing)?;
    let needs_h = !matches!(computer.model.kind, crate::integrand::IntegrandKind::Dirichlet);
    if needs_h && computer.model.a_constant.is_none() {
        return Err(Error::State("singular detection needs a calibrated model".into()));
    }
    let mut ladder = Vec::new();
    let mut r = cfg.r0;
    while r <= r_max * (1.0 + 1e-12) {
        ladder.push(r);
        r *= 2.0;
    }
    if ladder.is_empty() {
        return Err(Error::Domain("no detection scales between r0 and r_max".into()));
    }
    let mut h_vals = Vec::with_capacity(ladder.len());
    for &r in &ladder {
        h_vals.push(if needs_h { computer.model.correction_h(r)? } else { 0.0 });
    }
    let kappa = computer.model.vartheta / computer.model.c_e;

    let flags: Vec<Option<(usize, Point)>> = (0..d.len())
        .into_par_iter()
        .map(|idx| {
            if !u.active[idx] {
                return Ok(None);
            }
            let p = d.node_pos(idx);
            if d.clearance(&p) < ladder[0] {
                return Ok(None);
            }
            let mut singular = true;
            for (li, &r) in ladder.iter().enumerate() {
                if d.clearance(&p) < r {
                    break; // larger scales unavailable; decided by smaller ones
                }
                let theta = computer.theta(&p, r)?;
                let bar = (kappa * r).exp() * theta + h_vals[li];
                if bar <= cfg.eps0 {
                    singular = false;
                    break;
                }
            }
            Ok(if singular { Some((idx, p)) } else { None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(flags.into_iter().flatten().collect())
}

/// Largest `r` with `r^α · sup_{p,q ∈ B_r(x)} |u(p)-u(q)|/|p-q|^α ≤ 1`,
/// estimated over subsampled node pairs and located by bisection.
pub fn regularity_scale(u: &SphereMap, x: &Point, alpha: f64, seed: u64) -> f64 {
    let d = &u.domain;
    let r_cap = d.clearance(x).max(0.0);
    if r_cap <= d.spacing {
        return r_cap;
    }
    let pairs = 4096;
    let seminorm = |r: f64| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (r.to_bits().rotate_left(17)));
        let mut sup = 0.0f64;
        let mut found = 0usize;
        let mut attempts = 0usize;
        while found < pairs && attempts < pairs * 20 {
            attempts += 1;
            let pick = |rng: &mut ChaCha8Rng| -> Option<usize> {
                let mut c = [0usize; 3];
                for a in 0..d.n_dim {
                    let lo = ((x[a] - r - d.origin[a]) / d.spacing - 0.5).floor().max(0.0) as usize;
                    let hi = (((x[a] + r - d.origin[a]) / d.spacing - 0.5).ceil() as usize)
                        .min(d.dims[a] - 1);
                    if lo > hi {
                        return None;
                    }
                    c[a] = rng.gen_range(lo..=hi);
                }
                let idx = d.index(c[0], c[1], c[2]);
                let p = d.node_pos(idx);
                (u.active[idx] && crate::fields::dist(&p, x) <= r).then_some(idx)
            };
            let (Some(i), Some(j)) = (pick(&mut rng), pick(&mut rng)) else {
                continue;
            };
            if i == j {
                continue;
            }
            found += 1;
            let pi = d.node_pos(i);
            let pj = d.node_pos(j);
            let sep = crate::fields::dist(&pi, &pj);
            if sep < 1e-12 {
                continue;
            }
            let du: f64 = u
                .node_value(i)
                .iter()
                .zip(u.node_value(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sup = sup.max(du / sep.powf(alpha));
        }
        sup
    };
    let ok = |r: f64| r.powf(alpha) * seminorm(r) <= 1.0;
    if ok(r_cap) {
        return r_cap;
    }
    let mut lo = d.spacing;
    let mut hi = r_cap;
    if !ok(lo) {
        return lo;
    }
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub applicable: bool,
    pub ratio: Option<f64>,
}

/// Tested inequality `β²(x, r) ≤ C_L r^{-k} Σ W_r(y) w_y`: reports both sides
/// and their ratio for the empirical calibration of a working constant.
/// Applicability requires the ball at scale `8r` to be almost 0-symmetric but
/// not `(k+1)`-symmetric.
#[allow(clippy::too_many_arguments)]
pub fn l2_approx_check(
    computer: &ProfileComputer,
    mu: &MeasureCloud,
    x: &Point,
    r: f64,
    k: usize,
    cfg: &ThresholdConfig,
    opts: &DefectOptions,
) -> Result<L2Check> {
    let u = computer.u;
    let d0 = symmetry_defect(u, x, 8.0 * r, 0, opts)?;
    let dk1 = symmetry_defect(u, x, 8.0 * r, k + 1, opts)?;
    let applicable = d0.ambient <= cfg.delta_pinch && dk1.ambient > cfg.eps_strat;
    let lhs = {
        let b = jones_beta(mu, x, r, k)?;
        b * b
    };
    let mut rhs = 0.0;
    for (p, &w) in mu.points.iter().zip(&mu.weights) {
        if w == 0.0 || crate::fields::dist(p, x) > r {
            continue;
        }
        let pinch = computer.theta_bar(p, 8.0 * r)? - computer.theta_bar(p, r)?;
        rhs += w * pinch.max(0.0);
    }
    rhs *= r.powi(-(k as i32));
    let ratio = (rhs > 0.0).then(|| lhs / rhs);
    Ok(L2Check {
        lhs,
        rhs,
        applicable,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridDomain;
    use crate::integrand::IntegrandModel;

    fn quick_opts() -> DefectOptions {
        DefectOptions {
            blow_points: 20,
            coarse_directions: 128,
            refine_steps: 12,
            radial_samples: 24,
            translate_samples: 12,
            angle_bins: 64,
            ..Default::default()
        }
    }

    #[test]
    fn threshold_validation() {
        let mut cfg = ThresholdConfig {
            eps0: 1.0,
            eps_strat: 0.05,
            delta_pinch: 0.3,
            rho: 0.4,
            r0: 0.1,
            reifenberg_delta: 0.1,
        };
        assert!(cfg.validate(0.02).is_ok());
        cfg.r0 = 0.05;
        assert!(cfg.validate(0.02).is_err());
        cfg.r0 = 0.1;
        cfg.rho = 1.2;
        assert!(cfg.validate(0.02).is_err());
    }

    #[test]
    fn hedgehog_defects_discriminate_orders() {
        let d = GridDomain::ball(3, 0.5, 48).unwrap();
        let u = SphereMap::hedgehog(d, 0.0).unwrap();
        let opts = quick_opts();
        let d0 = symmetry_defect(&u, &[0.0; 3], 0.3, 0, &opts).unwrap();
        let d1 = symmetry_defect(&u, &[0.0; 3], 0.3, 1, &opts).unwrap();
        assert!(d0.ambient < 1e-3, "D0 = {}", d0.ambient);
        assert!(d1.ambient > 1e-2, "D1 = {}", d1.ambient);
        assert!(d1.ambient > 10.0 * d0.ambient.max(1e-12));
        assert!(d1.ambient >= d0.ambient);
    }

    #[test]
    fn cylinder_defects_discriminate_orders() {
        let d = GridDomain::ball(3, 0.5, 48).unwrap();
        let u = SphereMap::cylinder(d).unwrap();
        let opts = quick_opts();
        let d1 = symmetry_defect(&u, &[0.0; 3], 0.3, 1, &opts).unwrap();
        let d2 = symmetry_defect(&u, &[0.0; 3], 0.3, 2, &opts).unwrap();
        assert!(d1.ambient < 1e-3, "D1 = {}", d1.ambient);
        assert!(d2.ambient > 1e-2, "D2 = {}", d2.ambient);
        // the best axis should align with e₃
        let axis = d1.plane[0];
        assert!(axis[2].abs() > 0.999, "axis = {axis:?}");
    }

    #[test]
    fn constant_map_all_defects_vanish() {
        let d = GridDomain::ball(3, 0.5, 24).unwrap();
        let u = SphereMap::constant(d, 3, &[0.0, 1.0, 0.0]).unwrap();
        let opts = quick_opts();
        for k in 0..=3 {
            let def = symmetry_defect(&u, &[0.0; 3], 0.3, k, &opts).unwrap();
            assert!(def.ambient < 1e-20, "D{k} = {}", def.ambient);
        }
    }

    #[test]
    fn defect_rejects_bad_k_and_escaping_ball() {
        let d = GridDomain::ball(3, 0.5, 24).unwrap();
        let u = SphereMap::constant(d, 3, &[1.0, 0.0, 0.0]).unwrap();
        assert!(symmetry_defect(&u, &[0.0; 3], 0.3, 4, &quick_opts()).is_err());
        assert!(symmetry_defect(&u, &[0.4, 0.0, 0.0], 0.3, 0, &quick_opts()).is_err());
    }

    #[test]
    fn membership_containment_on_synthetic_table() {
        // defects increasing in k guarantee the containment property
        let scales = vec![0.1, 0.2, 0.4];
        let mut defects = vec![vec![vec![0.0; 5]; scales.len()]; 1];
        for (si, row) in defects[0].iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = 0.01 * (k as f64 + 1.0) + 0.002 * si as f64;
            }
        }
        let rep = StratumReport {
            n_dim: 3,
            points: vec![[0.0; 3]],
            scales: scales.clone(),
            defects: defects.clone(),
            defects_projected: defects,
            regularity_scales: Vec::new(),
        };
        for k in 0..2usize {
            for (ei, eps) in [0.015, 0.025, 0.05].iter().enumerate() {
                for (ri, r) in scales.iter().enumerate() {
                    let m = rep.membership(0, k, *eps, *r);
                    // containment: k' ≤ k, eps' ≥ eps, r' ≤ r ⇒ member(k',eps',r') ⊆ member(k,eps,r)
                    for kp in 0..=k {
                        for epsp in [0.015, 0.025, 0.05].iter().skip(ei) {
                            for rp in scales.iter().take(ri + 1) {
                                let mp = rep.membership(0, kp, *epsp, *rp);
                                assert!(!mp || m, "containment violated");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn singular_detect_constant_map_empty() {
        let d = GridDomain::ball(3, 0.5, 16).unwrap();
        let u = SphereMap::constant(d, 3, &[1.0, 0.0, 0.0]).unwrap();
        let model = IntegrandModel::dirichlet(3, 3);
        let pc = ProfileComputer::new(&u, &model).unwrap();
        let cfg = ThresholdConfig {
            eps0: 0.5,
            eps_strat: 0.05,
            delta_pinch: 0.3,
            rho: 0.4,
            r0: 4.0 * u.domain.spacing,
            reifenberg_delta: 0.1,
        };
        let found = singular_detect(&pc, &cfg, 0.3).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn singular_detect_threshold_above_sup_is_empty() {
        let d = GridDomain::ball(3, 0.5, 24).unwrap();
        let u = SphereMap::hedgehog(d, 0.0).unwrap();
        let model = IntegrandModel::dirichlet(3, 3);
        let pc = ProfileComputer::new(&u, &model).unwrap();
        let cfg = ThresholdConfig {
            eps0: 1e6,
            eps_strat: 0.05,
            delta_pinch: 0.3,
            rho: 0.4,
            r0: 4.0 * u.domain.spacing,
            reifenberg_delta: 0.1,
        };
        assert!(singular_detect(&pc, &cfg, 0.3).unwrap().is_empty());
    }

    #[test]
    fn regularity_scale_constant_caps_at_clearance() {
        let d = GridDomain::ball(3, 0.5, 16).unwrap();
        let u = SphereMap::constant(d, 3, &[1.0, 0.0, 0.0]).unwrap();
        let x = [0.1, 0.0, 0.0];
        let r = regularity_scale(&u, &x, 0.5, 1);
        assert!((r - u.domain.clearance(&x)).abs() < 1e-12);
    }

    #[test]
    fn regularity_scale_hedgehog_small_at_core_larger_outside() {
        let d = GridDomain::ball(3, 1.0, 32).unwrap();
        let u = SphereMap::hedgehog(d, 0.0).unwrap();
        let at_core = regularity_scale(&u, &[0.0; 3], 0.5, 2);
        let outside = regularity_scale(&u, &[0.5, 0.0, 0.0], 0.5, 2);
        assert!(
            at_core <= 4.0 * u.domain.spacing,
            "core scale {at_core} vs h {}",
            u.domain.spacing
        );
        assert!(outside > 3.0 * at_core, "outside {outside} vs core {at_core}");
    }
}
