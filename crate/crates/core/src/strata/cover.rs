//! Inductive covering refinement driven by density drops, and Minkowski
//! content estimation of detected singular sets.

use super::beta::effective_span;
use super::ThresholdConfig;
use crate::error::{Error, Result};
use crate::fields::{dist, GridDomain, Point};
use serde::Serialize;

/// Corrected-density profiles of a fixed point set on a shared radius ladder,
/// interpolated in between and clamped at the resolution floor.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileTable {
    pub points: Vec<Point>,
    pub radii: Vec<f64>,
    pub theta_bar: Vec<Vec<f64>>,
}

impl ProfileTable {
    pub fn value(&self, point_idx: usize, s: f64) -> f64 {
        crate::monotone::interp_clamped(&self.radii, &self.theta_bar[point_idx], s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BallLabel {
    /// Radius reached the finest scale.
    R0Ball,
    /// Every singular point in the doubled ball drops the density by
    /// `delta_pinch` at a tenth of the radius.
    DropBall,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverBall {
    pub center: Point,
    pub radius: f64,
    pub label: BallLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineEvent {
    pub center: Point,
    pub radius: f64,
    pub high_pinch_count: usize,
    /// Whether the high-pinch set failed to ρr-effectively span k dimensions
    /// (it then concentrates near a lower-dimensional plane).
    pub concentrated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverReport {
    pub k: usize,
    pub balls: Vec<CoverBall>,
    pub sum_rk: f64,
    pub stages: usize,
    pub refine_events: Vec<RefineEvent>,
    pub density_sup: f64,
}

/// Refine a cover of the singular set, starting from one ball, until every
/// ball either reaches the finest scale `r0` or satisfies the density-drop
/// condition.  Refinement covers the retained points by balls of radius
/// `ρ·r` centered on singular points; the effective-spanning diagnostic of
/// the high-pinch subset is recorded per refinement.
pub fn covering_refine(
    singular: &[Point],
    profiles: &ProfileTable,
    cfg: &ThresholdConfig,
    k: usize,
    start_center: Point,
    start_radius: f64,
) -> Result<CoverReport> {
    if profiles.points.len() != singular.len() {
        return Err(Error::Dimension(
            "profile table must cover exactly the singular points".into(),
        ));
    }
    if singular.is_empty() {
        return Ok(CoverReport {
            k,
            balls: Vec::new(),
            sum_rk: 0.0,
            stages: 0,
            refine_events: Vec::new(),
            density_sup: 0.0,
        });
    }
    let e_sup = (0..singular.len())
        .map(|i| profiles.value(i, start_radius))
        .fold(f64::NEG_INFINITY, f64::max);

    let max_stages = ((cfg.r0 / start_radius).ln() / cfg.rho.ln()).ceil() as usize + 2;
    let mut final_balls = Vec::new();
    let mut refine_events = Vec::new();
    let mut frontier = vec![(start_center, start_radius)];
    let mut stages = 0usize;

    while !frontier.is_empty() {
        stages += 1;
        if stages > max_stages {
            return Err(Error::Internal(format!(
                "covering refinement exceeded {max_stages} stages"
            )));
        }
        // refinement targets are pooled across the stage so overlapping
        // parents do not spawn duplicate children
        let mut pool_member = vec![false; singular.len()];
        let mut pool_child_r = vec![0.0f64; singular.len()];
        for (center, radius) in frontier {
            if radius <= cfg.r0 * (1.0 + 1e-9) {
                final_balls.push(CoverBall {
                    center,
                    radius,
                    label: BallLabel::R0Ball,
                });
                continue;
            }
            let in_double: Vec<usize> = (0..singular.len())
                .filter(|&i| dist(&singular[i], &center) <= 2.0 * radius)
                .collect();
            let dropped = in_double
                .iter()
                .all(|&i| profiles.value(i, radius / 10.0) <= e_sup - cfg.delta_pinch);
            if dropped {
                final_balls.push(CoverBall {
                    center,
                    radius,
                    label: BallLabel::DropBall,
                });
                continue;
            }
            // high-pinch subset and its spanning dimension, for diagnostics
            // and the plane-concentration dichotomy
            let high: Vec<Point> = in_double
                .iter()
                .filter(|&&i| {
                    profiles.value(i, cfg.rho * radius / 10.0) > e_sup - cfg.delta_pinch
                })
                .map(|&i| singular[i])
                .collect();
            let (spans, _) = effective_span(&high, cfg.rho * radius, k);
            refine_events.push(RefineEvent {
                center,
                radius,
                high_pinch_count: high.len(),
                concentrated: !spans,
            });
            let child_r = (cfg.rho * radius).max(cfg.r0);
            for i in 0..singular.len() {
                if dist(&singular[i], &center) <= radius {
                    pool_member[i] = true;
                    pool_child_r[i] = pool_child_r[i].max(child_r);
                }
            }
        }
        // greedy sub-cover of the pooled points by balls centered on them
        let mut next = Vec::new();
        let mut covered = vec![false; singular.len()];
        for i in 0..singular.len() {
            if !pool_member[i] || covered[i] {
                continue;
            }
            let c = singular[i];
            let r_child = pool_child_r[i];
            for (j, cov) in covered.iter_mut().enumerate() {
                if pool_member[j] && !*cov && dist(&singular[j], &c) <= r_child {
                    *cov = true;
                }
            }
            next.push((c, r_child));
        }
        frontier = next;
    }

    let sum_rk: f64 = final_balls.iter().map(|b| b.radius.powi(k as i32)).sum();
    Ok(CoverReport {
        k,
        balls: final_balls,
        sum_rk,
        stages,
        refine_events,
        density_sup: e_sup,
    })
}

impl CoverReport {
    /// Every singular point must lie inside at least one output ball.
    pub fn covers(&self, singular: &[Point]) -> bool {
        singular.iter().all(|p| {
            self.balls
                .iter()
                .any(|b| dist(p, &b.center) <= b.radius + 1e-12)
        })
    }
}

/// Volume of the r-neighborhood of `s_points` inside the unit ball around the
/// domain center (clipped to the domain), by cell counting; also returns the
/// curve normalized by `r^{n-k}`.
pub fn minkowski_content(
    s_points: &[Point],
    radii: &[f64],
    domain: &GridDomain,
    k: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    let h = domain.spacing;
    if radii.iter().any(|&r| r < h) {
        return Err(Error::Resolution(format!(
            "neighborhood radii must be at least the grid spacing {h}"
        )));
    }
    let mask = domain.node_mask();
    let center = domain.center();
    let clip = 1.0f64;
    let n = domain.n_dim;
    let cell = domain.cell_volume();
    let half_diag = 0.5 * h * (n as f64).sqrt();
    let sub = 4usize;
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut acc = 0.0f64;
        for idx in 0..domain.len() {
            if !mask[idx] {
                continue;
            }
            let p = domain.node_pos(idx);
            if dist(&p, &center) > clip {
                continue;
            }
            let d_min = s_points
                .iter()
                .map(|s| dist(s, &p))
                .fold(f64::INFINITY, f64::min);
            if d_min <= r - half_diag {
                acc += 1.0;
            } else if d_min < r + half_diag {
                // partial cell: subsampled fraction of the cell within
                // distance r of the set
                let total = sub.pow(n as u32);
                let mut inside = 0usize;
                for si in 0..total {
                    let mut q = p;
                    let mut rem = si;
                    for a in 0..n {
                        let j = rem % sub;
                        rem /= sub;
                        q[a] += ((j as f64 + 0.5) / sub as f64 - 0.5) * h;
                    }
                    if s_points.iter().any(|s| dist(s, &q) <= r) {
                        inside += 1;
                    }
                }
                acc += inside as f64 / total as f64;
            }
        }
        let vol = acc * cell;
        out.push((r, vol, vol / r.powi((n - k) as i32)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_table(points: Vec<Point>, value: f64) -> ProfileTable {
        let radii: Vec<f64> = (1..=16).map(|i| i as f64 * 0.05).collect();
        let theta_bar = vec![vec![value; radii.len()]; points.len()];
        ProfileTable {
            points,
            radii,
            theta_bar,
        }
    }

    fn cfg() -> ThresholdConfig {
        ThresholdConfig {
            eps0: 1.0,
            eps_strat: 0.05,
            delta_pinch: 0.3,
            rho: 0.4,
            r0: 0.1,
            reifenberg_delta: 0.1,
        }
    }

    #[test]
    fn empty_singular_set_gives_empty_cover() {
        let table = flat_table(vec![], 0.0);
        let rep = covering_refine(&[], &table, &cfg(), 0, [0.0; 3], 0.8).unwrap();
        assert!(rep.balls.is_empty());
        assert_eq!(rep.sum_rk, 0.0);
    }

    #[test]
    fn single_point_never_dropping_refines_to_r0() {
        // constant profile: no drop is ever possible, so the point is chased
        // down to r0 and the count stays 1
        let pts = vec![[0.0, 0.0, 0.0]];
        let table = flat_table(pts.clone(), 5.0);
        for r0 in [0.1, 0.05, 0.025] {
            let mut c = cfg();
            c.r0 = r0;
            let rep = covering_refine(&pts, &table, &c, 0, [0.0; 3], 0.8).unwrap();
            assert!(rep.covers(&pts));
            assert!(rep
                .balls
                .iter()
                .all(|b| b.label == BallLabel::R0Ball));
            assert_eq!(rep.balls.len(), 1, "r0 = {r0}: {:?}", rep.balls);
        }
    }

    #[test]
    fn dropping_profile_stops_early() {
        // profiles that collapse at small radii trigger drop balls
        let pts = vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]];
        let radii: Vec<f64> = (1..=16).map(|i| i as f64 * 0.05).collect();
        let theta_bar: Vec<Vec<f64>> = (0..2)
            .map(|_| radii.iter().map(|&r| 5.0 * r).collect())
            .collect();
        let table = ProfileTable {
            points: pts.clone(),
            radii,
            theta_bar,
        };
        let rep = covering_refine(&pts, &table, &cfg(), 0, [0.1, 0.0, 0.0], 0.8).unwrap();
        assert!(rep.covers(&pts));
        assert!(rep.balls.iter().any(|b| b.label == BallLabel::DropBall));
    }

    #[test]
    fn segment_cover_length_stable() {
        // never-dropping points along a segment: Σ r¹ stays near the length
        let pts: Vec<Point> = (0..64)
            .map(|i| [-0.4 + 0.8 * i as f64 / 63.0, 0.0, 0.0])
            .collect();
        let table = flat_table(pts.clone(), 5.0);
        let mut sums = Vec::new();
        for r0 in [0.1, 0.05] {
            let mut c = cfg();
            c.r0 = r0;
            let rep = covering_refine(&pts, &table, &c, 1, [0.0; 3], 0.8).unwrap();
            assert!(rep.covers(&pts));
            sums.push(rep.sum_rk);
        }
        assert!(sums[1] <= 2.0 * sums[0], "sums {sums:?}");
        assert!(sums.iter().all(|&s| s <= 3.0 * 0.8), "sums {sums:?}");
    }

    #[test]
    fn minkowski_single_point_is_ball_volume() {
        let d = GridDomain::ball(3, 0.5, 48).unwrap();
        let rows = minkowski_content(&[[0.0, 0.0, 0.0]], &[0.1, 0.2, 0.4], &d, 0).unwrap();
        for (r, vol, _) in &rows {
            let want = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
            assert!(
                (vol - want).abs() < 0.06 * want,
                "vol({r}) = {vol}, want {want}"
            );
        }
        // monotone in r
        assert!(rows.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn minkowski_segment_matches_tube_formula() {
        let d = GridDomain::ball(3, 0.5, 48).unwrap();
        let seg: Vec<Point> = (0..33).map(|i| [0.0, 0.0, -0.2 + 0.4 * i as f64 / 32.0]).collect();
        let rows = minkowski_content(&seg, &[0.1], &d, 1).unwrap();
        let (r, vol, _) = rows[0];
        let want = std::f64::consts::PI * r * r * 0.4 + 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert!((vol - want).abs() < 0.1 * want, "vol = {vol}, want {want}");
    }

    #[test]
    fn minkowski_empty_set_and_radius_guard() {
        let d = GridDomain::ball(3, 0.5, 16).unwrap();
        let rows = minkowski_content(&[], &[0.1, 0.2], &d, 0).unwrap();
        assert!(rows.iter().all(|&(_, v, _)| v == 0.0));
        assert!(minkowski_content(&[[0.0; 3]], &[1e-4], &d, 0).is_err());
    }
}
