//! Quantitative symmetry defects.
//!
//! `D^k(x, r)` measures the mean-squared distance of the blown-up map
//! `u_{x,r}` on the unit ball to its best approximation by a map that is
//! homogeneous about the origin and invariant along a k-dimensional subspace.
//! The candidate for a subspace `V` is the orbit average of the map over
//! `{t·ω + v : t > 0, v ∈ V}`, sampled on a radial × translate lattice with
//! the Lebesgue weight `t^{n-k-1}`; the plane search scans a Fibonacci lattice
//! of directions followed by local golden-section refinement.  Both the
//! ambient-valued defect (lower bound) and the sphere-projected defect (upper
//! bound) are reported.

use crate::error::{Error, Result};
use crate::fields::{Point, SphereMap, MAX_Q};
use crate::quad::golden_section_min;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct DefectOptions {
    /// Blow-up grid resolution (points per axis).
    pub blow_points: usize,
    /// Coarse Fibonacci directions scanned on the Grassmannian.
    pub coarse_directions: usize,
    /// Golden-section steps in the local refinement.
    pub refine_steps: usize,
    /// Radial samples per orbit.
    pub radial_samples: usize,
    /// Translate samples per orbit (lattice over the V-slice).
    pub translate_samples: usize,
    /// Angular bins of the orbit-mean table for codimension-2 orbits.
    pub angle_bins: usize,
}

impl Default for DefectOptions {
    fn default() -> Self {
        DefectOptions {
            blow_points: 24,
            coarse_directions: 512,
            refine_steps: 20,
            radial_samples: 32,
            translate_samples: 16,
            angle_bins: 96,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SymmetryDefect {
    /// Mean-squared deviation from the ambient-valued orbit average.
    pub ambient: f64,
    /// Same with the average projected back to the sphere.
    pub projected: f64,
    /// Orthonormal basis of the best invariant subspace (empty for k = 0).
    pub plane: Vec<[f64; 3]>,
}

pub fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Any orthonormal pair spanning the plane orthogonal to `a`.
fn orthogonal_frame(a: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let seed = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot3(seed, a);
    let e1 = unit([seed[0] - d * a[0], seed[1] - d * a[1], seed[2] - d * a[2]]);
    let e2 = cross(a, e1);
    (e1, e2)
}

struct BlowupEval<'a> {
    map: &'a SphereMap,
    nodes: Vec<(usize, Point)>,
    q: usize,
    n: usize,
}

impl<'a> BlowupEval<'a> {
    fn new(map: &'a SphereMap, floor: f64) -> Self {
        let nodes: Vec<(usize, Point)> = (0..map.domain.len())
            .filter(|&i| map.active[i])
            .map(|i| (i, map.domain.node_pos(i)))
            .filter(|(_, p)| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() >= floor)
            .collect();
        BlowupEval {
            map,
            nodes,
            q: map.q_dim,
            n: map.domain.n_dim,
        }
    }

    fn sample(&self, p: &Point, out: &mut [f64]) {
        self.map.interp_renormalized(p, out);
    }

    /// Defect against per-node orbit means supplied by `mean_of`.
    fn defect_with<F>(&self, mean_of: F) -> (f64, f64)
    where
        F: Fn(&Point, &mut [f64]),
    {
        let q = self.q;
        let mut amb = 0.0;
        let mut proj = 0.0;
        let mut m = [0.0f64; MAX_Q];
        for (idx, p) in &self.nodes {
            mean_of(p, &mut m[..q]);
            let uv = self.map.node_value(*idx);
            let mut d2 = 0.0;
            let mut norm2 = 0.0;
            for a in 0..q {
                let dv = uv[a] - m[a];
                d2 += dv * dv;
                norm2 += m[a] * m[a];
            }
            amb += d2;
            let norm = norm2.sqrt();
            if norm > 1e-12 {
                let mut dp = 0.0;
                for a in 0..q {
                    let dv = uv[a] - m[a] / norm;
                    dp += dv * dv;
                }
                proj += dp;
            } else {
                proj += 2.0;
            }
        }
        let count = self.nodes.len().max(1) as f64;
        (amb / count, proj / count)
    }
}

/// Quantitative symmetry defect `D^k(x, r)`; `k = n` measures the distance to
/// constants.  Preconditions mirror the blow-up: `B_r(x)` must sit inside the
/// domain.
pub fn symmetry_defect(
    u: &SphereMap,
    x: &Point,
    r: f64,
    k: usize,
    opts: &DefectOptions,
) -> Result<SymmetryDefect> {
    let n = u.domain.n_dim;
    if k > n {
        return Err(Error::Domain(format!("symmetry order k = {k} exceeds n = {n}")));
    }
    if opts.blow_points < 12 || opts.radial_samples < 8 {
        return Err(Error::Resolution(
            "defect sampling needs >= 12 blow-up points per axis and >= 8 radial samples".into(),
        ));
    }
    let blow = u.blowup(x, r, opts.blow_points)?;
    let h_blow = blow.domain.spacing;
    let h_src = u.domain.spacing;
    let floor = (2.0 * h_blow).max(4.0 * h_src / r);
    let eval = BlowupEval::new(&blow, floor);
    if eval.nodes.len() < 8 {
        return Err(Error::Resolution("fewer than 8 usable blow-up nodes".into()));
    }

    match n - k.min(n) {
        0 => Ok(defect_constant(&eval)),
        1 => search_codim1(&eval, opts),
        2 => search_codim2(&eval, opts),
        _ => Ok(defect_rays(&eval, opts)), // k = 0 in a 3-d domain
    }
}

/// k = n: best constant is the population mean over the quadrature nodes.
fn defect_constant(eval: &BlowupEval) -> SymmetryDefect {
    let q = eval.q;
    let mut mean = [0.0f64; MAX_Q];
    for (idx, _) in &eval.nodes {
        let uv = eval.map.node_value(*idx);
        for a in 0..q {
            mean[a] += uv[a];
        }
    }
    for a in mean.iter_mut().take(q) {
        *a /= eval.nodes.len() as f64;
    }
    let (amb, proj) = eval.defect_with(|_, out| out.copy_from_slice(&mean[..q]));
    SymmetryDefect {
        ambient: amb,
        projected: proj,
        plane: basis_full(eval.n),
    }
}

fn basis_full(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|a| {
            let mut e = [0.0; 3];
            e[a] = 1.0;
            e
        })
        .collect()
}

/// k = 0 in 3-d: orbits are rays; each node averages its own ray with the
/// volume weight t².
fn defect_rays(eval: &BlowupEval, opts: &DefectOptions) -> SymmetryDefect {
    let q = eval.q;
    let ts = opts.radial_samples;
    let mut buf = [0.0f64; MAX_Q];
    let samples: Vec<(f64, f64)> = (0..ts)
        .map(|i| {
            let t = (i as f64 + 0.5) / ts as f64;
            (t, t * t)
        })
        .collect();
    let per_node: Vec<[f64; MAX_Q]> = eval
        .nodes
        .iter()
        .map(|(_, p)| {
            let rr = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let dir = [p[0] / rr, p[1] / rr, p[2] / rr];
            let mut acc = [0.0f64; MAX_Q];
            let mut wsum = 0.0;
            let mut b = [0.0f64; MAX_Q];
            for &(t, w) in &samples {
                let sp = [t * dir[0], t * dir[1], t * dir[2]];
                eval.sample(&sp, &mut b);
                for a in 0..q {
                    acc[a] += w * b[a];
                }
                wsum += w;
            }
            for a in acc.iter_mut().take(q) {
                *a /= wsum;
            }
            acc
        })
        .collect();
    let _ = &mut buf;
    let mut amb = 0.0;
    let mut proj = 0.0;
    for (ni, (idx, _)) in eval.nodes.iter().enumerate() {
        let uv = eval.map.node_value(*idx);
        let m = &per_node[ni];
        let mut d2 = 0.0;
        let mut norm2 = 0.0;
        for a in 0..q {
            let dv = uv[a] - m[a];
            d2 += dv * dv;
            norm2 += m[a] * m[a];
        }
        amb += d2;
        let norm = norm2.sqrt();
        if norm > 1e-12 {
            let mut dp = 0.0;
            for a in 0..q {
                let dv = uv[a] - m[a] / norm;
                dp += dv * dv;
            }
            proj += dp;
        } else {
            proj += 2.0;
        }
    }
    let count = eval.nodes.len() as f64;
    SymmetryDefect {
        ambient: amb / count,
        projected: proj / count,
        plane: Vec::new(),
    }
}

/// Codimension-2 orbits (k = 1 in 3-d, k = 0 in 2-d): the orbit mean depends
/// on one angle, tabulated per candidate and interpolated per node.
fn search_codim2(eval: &BlowupEval, opts: &DefectOptions) -> Result<SymmetryDefect> {
    if eval.n == 2 {
        // k = 0 in the plane: single candidate, orbits are rays with weight t
        let d = codim2_defect(eval, None, opts);
        return Ok(SymmetryDefect {
            ambient: d.0,
            projected: d.1,
            plane: Vec::new(),
        });
    }
    // k = 1 in 3-d: scan axes
    let axes = fibonacci_sphere(opts.coarse_directions);
    let evals: Vec<f64> = axes
        .par_iter()
        .map(|a| codim2_defect(eval, Some(*a), opts).0)
        .collect();
    let best = evals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut axis = axes[best];
    // local refinement: alternating golden-section over two tilt coordinates
    let spread = 2.0 / (opts.coarse_directions as f64).sqrt() * 2.0;
    let steps_per_coord = (opts.refine_steps / 2).max(1);
    for pass in 0..2 {
        let (p1, p2) = orthogonal_frame(axis);
        let tilt_dir = if pass == 0 { p1 } else { p2 };
        let f = |t: f64| {
            let cand = unit([
                axis[0] + t * tilt_dir[0],
                axis[1] + t * tilt_dir[1],
                axis[2] + t * tilt_dir[2],
            ]);
            codim2_defect(eval, Some(cand), opts).0
        };
        let (t_best, _) = golden_section_min(&f, -spread, spread, steps_per_coord);
        axis = unit([
            axis[0] + t_best * tilt_dir[0],
            axis[1] + t_best * tilt_dir[1],
            axis[2] + t_best * tilt_dir[2],
        ]);
    }
    let (amb, proj) = codim2_defect(eval, Some(axis), opts);
    Ok(SymmetryDefect {
        ambient: amb,
        projected: proj,
        plane: vec![axis],
    })
}

/// Orbit-mean table over the angle for a codimension-2 orbit; `axis = None`
/// means the 2-d ray case (no translates).
fn codim2_defect(eval: &BlowupEval, axis: Option<[f64; 3]>, opts: &DefectOptions) -> (f64, f64) {
    let q = eval.q;
    let bins = opts.angle_bins;
    let ts = opts.radial_samples;
    let vs = if axis.is_some() { opts.translate_samples } else { 1 };
    let (e1, e2) = match axis {
        Some(a) => orthogonal_frame(a),
        None => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    // weight t^{n-k-1} = t for both supported cases
    let mut table = vec![[0.0f64; MAX_Q]; bins];
    let mut buf = [0.0f64; MAX_Q];
    for (b, entry) in table.iter_mut().enumerate() {
        let phi = two_pi * b as f64 / bins as f64;
        let omega = [
            phi.cos() * e1[0] + phi.sin() * e2[0],
            phi.cos() * e1[1] + phi.sin() * e2[1],
            phi.cos() * e1[2] + phi.sin() * e2[2],
        ];
        let mut wsum = 0.0;
        for i in 0..ts {
            let t = (i as f64 + 0.5) / ts as f64;
            for j in 0..vs {
                let v = if axis.is_some() {
                    -1.0 + 2.0 * (j as f64 + 0.5) / vs as f64
                } else {
                    0.0
                };
                if t * t + v * v > 1.0 {
                    continue;
                }
                let mut p = [t * omega[0], t * omega[1], t * omega[2]];
                if let Some(a) = axis {
                    p[0] += v * a[0];
                    p[1] += v * a[1];
                    p[2] += v * a[2];
                }
                eval.sample(&p, &mut buf);
                for c in 0..q {
                    entry[c] += t * buf[c];
                }
                wsum += t;
            }
        }
        if wsum > 0.0 {
            for c in entry.iter_mut().take(q) {
                *c /= wsum;
            }
        }
    }
    eval.defect_with(|p, out| {
        let (w_perp, _t) = perp_part(p, axis);
        let x1 = dot3(w_perp, e1);
        let x2 = dot3(w_perp, e2);
        let phi = x2.atan2(x1).rem_euclid(two_pi);
        let g = phi / two_pi * bins as f64;
        let b0 = (g.floor() as usize) % bins;
        let b1 = (b0 + 1) % bins;
        let f = g - g.floor();
        for c in 0..q {
            out[c] = (1.0 - f) * table[b0][c] + f * table[b1][c];
        }
    })
}

fn perp_part(p: &Point, axis: Option<[f64; 3]>) -> ([f64; 3], f64) {
    let w = match axis {
        Some(a) => {
            let d = dot3(*p, a);
            [p[0] - d * a[0], p[1] - d * a[1], p[2] - d * a[2]]
        }
        None => *p,
    };
    let t = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    (w, t)
}

/// Codimension-1 orbits (k = n-1): two half-space means per candidate normal.
fn search_codim1(eval: &BlowupEval, opts: &DefectOptions) -> Result<SymmetryDefect> {
    let normals: Vec<[f64; 3]> = if eval.n == 3 {
        fibonacci_sphere(opts.coarse_directions)
    } else {
        (0..opts.coarse_directions.max(64))
            .map(|i| {
                let phi = std::f64::consts::PI * i as f64 / opts.coarse_directions.max(64) as f64;
                [phi.cos(), phi.sin(), 0.0]
            })
            .collect()
    };
    let evals: Vec<f64> = normals
        .par_iter()
        .map(|nu| codim1_defect(eval, *nu, opts).0)
        .collect();
    let best = evals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut normal = normals[best];
    let spread = 2.0 / (opts.coarse_directions as f64).sqrt() * 2.0;
    let steps_per_coord = (opts.refine_steps / 2).max(1);
    let passes = if eval.n == 3 { 2 } else { 1 };
    for pass in 0..passes {
        let tilt_dir = if eval.n == 3 {
            let (p1, p2) = orthogonal_frame(normal);
            if pass == 0 {
                p1
            } else {
                p2
            }
        } else {
            [-normal[1], normal[0], 0.0]
        };
        let f = |t: f64| {
            let cand = unit([
                normal[0] + t * tilt_dir[0],
                normal[1] + t * tilt_dir[1],
                normal[2] + t * tilt_dir[2],
            ]);
            codim1_defect(eval, cand, opts).0
        };
        let (t_best, _) = golden_section_min(&f, -spread, spread, steps_per_coord);
        normal = unit([
            normal[0] + t_best * tilt_dir[0],
            normal[1] + t_best * tilt_dir[1],
            normal[2] + t_best * tilt_dir[2],
        ]);
    }
    let (amb, proj) = codim1_defect(eval, normal, opts);
    let plane = if eval.n == 3 {
        let (p1, p2) = orthogonal_frame(normal);
        vec![p1, p2]
    } else {
        vec![[-normal[1], normal[0], 0.0]]
    };
    Ok(SymmetryDefect {
        ambient: amb,
        projected: proj,
        plane,
    })
}

fn codim1_defect(eval: &BlowupEval, normal: [f64; 3], opts: &DefectOptions) -> (f64, f64) {
    let q = eval.q;
    let ts = opts.radial_samples;
    // lattice over the V-slice: 2-d grid in 3-d, line in 2-d
    let k = eval.n - 1;
    let side = (opts.translate_samples as f64).sqrt().round() as usize;
    let (v1, v2): ([f64; 3], [f64; 3]) = if eval.n == 3 {
        orthogonal_frame(normal)
    } else {
        ([-normal[1], normal[0], 0.0], [0.0, 0.0, 0.0])
    };
    let mut means = [[0.0f64; MAX_Q]; 2];
    let mut buf = [0.0f64; MAX_Q];
    for (side_idx, sgn) in [1.0f64, -1.0].iter().enumerate() {
        let mut wsum = 0.0;
        for i in 0..ts {
            let t = (i as f64 + 0.5) / ts as f64;
            let vcount = if k == 2 { side * side } else { opts.translate_samples };
            for j in 0..vcount {
                let (a1, a2) = if k == 2 {
                    (
                        -1.0 + 2.0 * ((j / side) as f64 + 0.5) / side as f64,
                        -1.0 + 2.0 * ((j % side) as f64 + 0.5) / side as f64,
                    )
                } else {
                    (-1.0 + 2.0 * (j as f64 + 0.5) / opts.translate_samples as f64, 0.0)
                };
                if t * t + a1 * a1 + a2 * a2 > 1.0 {
                    continue;
                }
                let p = [
                    sgn * t * normal[0] + a1 * v1[0] + a2 * v2[0],
                    sgn * t * normal[1] + a1 * v1[1] + a2 * v2[1],
                    sgn * t * normal[2] + a1 * v1[2] + a2 * v2[2],
                ];
                eval.sample(&p, &mut buf);
                for c in 0..q {
                    means[side_idx][c] += buf[c];
                }
                wsum += 1.0;
            }
        }
        if wsum > 0.0 {
            for c in means[side_idx].iter_mut().take(q) {
                *c /= wsum;
            }
        }
    }
    eval.defect_with(|p, out| {
        let s = dot3(*p, normal);
        let m = if s >= 0.0 { &means[0] } else { &means[1] };
        out.copy_from_slice(&m[..q]);
    })
}
