//! Jones β₂ numbers of weighted point clouds, effective spanning, and the
//! Reifenberg-type multiscale integral.

use crate::error::{Error, Result};
use crate::fields::{dist, Point};
use serde::{Deserialize, Serialize};

/// Finite non-negative weighted point set standing in for the measure μ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureCloud {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl MeasureCloud {
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Domain("cloud dimension must be 2 or 3".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension("points/weights length mismatch".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        Ok(MeasureCloud { dim, points, weights })
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Eigenvalues and eigenvectors of a symmetric 3×3 matrix by cyclic Jacobi
/// rotations; returned in descending eigenvalue order.
pub fn jacobi_eigen_3x3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let app = a[p][p];
            let aqq = a[q][q];
            let apq = a[p][q];
            a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
            a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for r in 0..3 {
                if r != p && r != q {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[p][r] = a[r][p];
                    a[r][q] = s * arp + c * arq;
                    a[q][r] = a[r][q];
                }
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vecs = [[0.0; 3]; 3];
    for (out_col, &src_col) in order.iter().enumerate() {
        for r in 0..3 {
            vecs[r][out_col] = v[r][src_col];
        }
    }
    (vals, vecs)
}

/// `β^k_{2,μ}(x, r)`: the scale-normalized least mean-squared distance of the
/// cloud restricted to `B_r(x)` from an affine k-plane.  The optimal plane
/// passes through the weighted barycenter and is spanned by the top
/// eigenvectors of the second-moment matrix, so β² collects the `n-k`
/// smallest eigenvalues.
pub fn jones_beta(mu: &MeasureCloud, x: &Point, r: f64, k: usize) -> Result<f64> {
    if k >= mu.dim {
        return Err(Error::Domain(format!(
            "plane dimension k = {k} must be below the cloud dimension {}",
            mu.dim
        )));
    }
    if r <= 0.0 {
        return Err(Error::Domain("radius must be positive".into()));
    }
    let mut mass = 0.0;
    let mut bary = [0.0f64; 3];
    for (p, &w) in mu.points.iter().zip(&mu.weights) {
        if dist(p, x) <= r {
            mass += w;
            for a in 0..3 {
                bary[a] += w * p[a];
            }
        }
    }
    if mass <= 0.0 {
        return Ok(0.0);
    }
    for b in bary.iter_mut() {
        *b /= mass;
    }
    let mut m = [[0.0f64; 3]; 3];
    for (p, &w) in mu.points.iter().zip(&mu.weights) {
        if dist(p, x) <= r {
            let d = [p[0] - bary[0], p[1] - bary[1], p[2] - bary[2]];
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += w * d[a] * d[b];
                }
            }
        }
    }
    let (vals, _) = jacobi_eigen_3x3(m);
    // descending order puts the n-k smallest at the tail; 2-d clouds carry a
    // structurally zero eigenvalue for the z direction, which sorts last and
    // is excluded from the in-plane tail
    let beta2: f64 = vals[k..mu.dim]
        .iter()
        .map(|&l| l.max(0.0))
        .sum::<f64>()
        * r.powi(-2 - k as i32);
    Ok(beta2.max(0.0).sqrt())
}

#[derive(Debug, Clone)]
pub struct AffinePlane {
    pub origin: Point,
    pub basis: Vec<Point>,
}

impl AffinePlane {
    pub fn distance(&self, p: &Point) -> f64 {
        let mut d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        for b in &self.basis {
            let c = d[0] * b[0] + d[1] * b[1] + d[2] * b[2];
            for a in 0..3 {
                d[a] -= c * b[a];
            }
        }
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Greedy ρ-effective spanning: starting from the first point, repeatedly
/// take the point farthest from the current affine span; the set spans k
/// dimensions effectively when all k picks clear the 2ρ margin.
pub fn effective_span(points: &[Point], rho: f64, k: usize) -> (bool, Option<AffinePlane>) {
    if rho <= 0.0 || points.is_empty() || k == 0 {
        return (
            !points.is_empty() && k == 0,
            points.first().map(|&p| AffinePlane {
                origin: p,
                basis: Vec::new(),
            }),
        );
    }
    let origin = points[0];
    let mut plane = AffinePlane {
        origin,
        basis: Vec::new(),
    };
    for _ in 0..k {
        let mut best = (0.0f64, None::<usize>);
        for (i, p) in points.iter().enumerate() {
            let d = plane.distance(p);
            if d > best.0 {
                best = (d, Some(i));
            }
        }
        let Some(pick) = best.1 else {
            return (false, None);
        };
        if best.0 <= 2.0 * rho {
            return (false, None);
        }
        // orthonormalize the new direction against the current basis
        let p = points[pick];
        let mut d = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        for b in &plane.basis {
            let c = d[0] * b[0] + d[1] * b[1] + d[2] * b[2];
            for a in 0..3 {
                d[a] -= c * b[a];
            }
        }
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        plane.basis.push([d[0] / n, d[1] / n, d[2] / n]);
    }
    (true, Some(plane))
}

/// Discrete Reifenberg hypothesis integral
/// `Σ_{y ∈ supp μ ∩ B_r(x)} w_y Σ_{s dyadic} β²(y, s)·ln 2`, with the dyadic
/// ladder running from `r` down to `r0`.  Returns the raw value and the ratio
/// against `r^k`.
pub fn reifenberg_integral(
    mu: &MeasureCloud,
    x: &Point,
    r: f64,
    k: usize,
    r0: f64,
) -> Result<(f64, f64)> {
    if r0 <= 0.0 || r0 > r {
        return Err(Error::Domain(format!("need 0 < r0 <= r, got r0 = {r0}, r = {r}")));
    }
    let ln2 = std::f64::consts::LN_2;
    // log-midpoints of the dyadic bands [r·2^{-i-1}, r·2^{-i}], so each term
    // represents its band in the ds/s integral
    let mut scales = Vec::new();
    let mut s = r * 0.5f64.sqrt();
    while s >= r0 * (1.0 - 1e-12) {
        scales.push(s);
        s *= 0.5;
    }
    let mut raw = 0.0;
    for (p, &w) in mu.points.iter().zip(&mu.weights) {
        if w == 0.0 || dist(p, x) > r {
            continue;
        }
        for &s in &scales {
            let b = jones_beta(mu, p, s, k)?;
            raw += w * b * b * ln2;
        }
    }
    Ok((raw, raw / r.powi(k as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let (vals, _) = jacobi_eigen_3x3(m);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_for_plane_supported_cloud() {
        // points on the plane z = 0.2 inside B_r
        let pts: Vec<Point> = (0..20)
            .map(|i| {
                let t = i as f64 / 20.0;
                [0.3 * (7.0 * t).cos(), 0.3 * (11.0 * t).sin(), 0.2]
            })
            .collect();
        let w = vec![1.0; pts.len()];
        let mu = MeasureCloud::new(3, pts, w).unwrap();
        let b = jones_beta(&mu, &[0.0, 0.0, 0.2], 1.0, 2).unwrap();
        assert!(b <= 1e-12, "beta = {b}");
    }

    #[test]
    fn beta_two_atoms_hand_value() {
        // two unit masses at ±(r/2)e₁: β⁰² = r^{-2}·2·(r/2)² = 1/2
        let r = 0.8;
        let mu = MeasureCloud::new(
            3,
            vec![[r / 2.0, 0.0, 0.0], [-r / 2.0, 0.0, 0.0]],
            vec![1.0, 1.0],
        )
        .unwrap();
        let b = jones_beta(&mu, &[0.0; 3], r, 0).unwrap();
        assert!((b - 0.5f64.sqrt()).abs() < 1e-12, "beta = {b}");
    }

    #[test]
    fn beta_rejects_k_at_or_above_dim() {
        let mu = MeasureCloud::new(3, vec![[0.0; 3]], vec![1.0]).unwrap();
        assert!(jones_beta(&mu, &[0.0; 3], 1.0, 3).is_err());
    }

    #[test]
    fn beta_empty_ball_is_zero() {
        let mu = MeasureCloud::new(3, vec![[5.0, 0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(jones_beta(&mu, &[0.0; 3], 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn effective_span_margin_behavior() {
        // three nearly collinear points: off-line offset 1.9ρ fails, 2.1ρ spans
        let rho = 0.05;
        for (off, want) in [(1.9 * rho, false), (2.1 * rho, true)] {
            let pts = vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, off, 0.0],
            ];
            let (spans, plane) = effective_span(&pts, rho, 2);
            assert_eq!(spans, want, "offset {off}");
            if want {
                assert_eq!(plane.unwrap().basis.len(), 2);
            }
        }
    }

    #[test]
    fn effective_span_spread_points() {
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let (spans, plane) = effective_span(&pts, 0.01, 3);
        assert!(spans);
        assert_eq!(plane.unwrap().basis.len(), 3);
    }

    #[test]
    fn effective_span_tube_fails() {
        // all points within a thin tube of the x-axis cannot 2-span
        let rho = 0.1;
        let pts: Vec<Point> = (0..30)
            .map(|i| [i as f64 / 30.0, 0.01 * ((i * 7) % 3) as f64, 0.0])
            .collect();
        let (spans, _) = effective_span(&pts, rho, 2);
        assert!(!spans);
    }

    #[test]
    fn reifenberg_zero_for_plane_and_atom() {
        let pts: Vec<Point> = (0..12).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
        let w = vec![1.0; pts.len()];
        let mu = MeasureCloud::new(3, pts, w).unwrap();
        let (raw, _) = reifenberg_integral(&mu, &[0.05, 0.0, 0.0], 0.2, 1, 0.01).unwrap();
        assert!(raw < 1e-20);
        let atom = MeasureCloud::new(3, vec![[0.0; 3]], vec![2.0]).unwrap();
        let (raw, _) = reifenberg_integral(&atom, &[0.0; 3], 0.5, 0, 0.01).unwrap();
        assert_eq!(raw, 0.0);
    }
}
