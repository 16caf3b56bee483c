//! Scale-invariant density profiles and their monotone corrections.
//!
//! `θ(x, r) = r^{2-n} ∫_{B_r(x)} F(x, u, |∇u|²)` is integrated with
//! partial-cell boundary weights (cell fraction inside the ball by 4ⁿ
//! subsampling).  The corrected profile is
//! `Θ̄(x, r) = e^{(ϑ/c_e) r} θ(x, r) + h(r)`, with `h` from the calibrated
//! integrand.  The mollified profile, pinches and the slope/flux report are
//! built on top.

use crate::error::{Error, Result};
use crate::fields::{dist, Point, SphereMap};
use crate::integrand::IntegrandModel;
use crate::quad;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Per-center radial profile of the density and its corrected variants.
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneProfile {
    pub center: Point,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub theta_smooth: Vec<f64>,
}

impl MonotoneProfile {
    /// Linear interpolation of `Θ̄` inside the sampled range, clamped at the
    /// ends (scales below the grid floor report the innermost value).
    pub fn theta_bar_at(&self, r: f64) -> f64 {
        interp_clamped(&self.radii, &self.theta_bar, r)
    }

    /// Pinch `W_r = Θ̄(8r) - Θ̄(r)`, clamped at zero; the raw difference is
    /// returned alongside.
    pub fn pinch(&self, r: f64) -> Result<(f64, f64)> {
        let lo = self.radii[0];
        let hi = *self.radii.last().unwrap();
        if r < lo - 1e-12 || 8.0 * r > hi + 1e-12 {
            return Err(Error::Range(format!(
                "pinch needs both r and 8r inside [{lo}, {hi}], got r = {r}"
            )));
        }
        let raw = self.theta_bar_at(8.0 * r) - self.theta_bar_at(r);
        Ok((raw.max(0.0), raw))
    }
}

pub(crate) fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let i = xs.partition_point(|&v| v < x).max(1) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - t) + ys[i + 1] * t
}

/// Shared evaluator: refined energy density of one map, integrated over balls.
pub struct ProfileComputer<'a> {
    pub u: &'a SphereMap,
    pub model: &'a IntegrandModel,
    /// Refined `|∇u|²` per cell.
    pub gradsq: Vec<f64>,
    /// `F(x, u, |∇u|²)` per cell.
    pub density: Vec<f64>,
}

const SUBSAMPLES_PER_AXIS: usize = 4;

impl<'a> ProfileComputer<'a> {
    pub fn new(u: &'a SphereMap, model: &'a IntegrandModel) -> Result<Self> {
        let gradsq = u.energy_density_refined();
        let density: Vec<f64> = gradsq
            .par_iter()
            .enumerate()
            .map(|(idx, &g)| {
                if !u.active[idx] {
                    return Ok(0.0);
                }
                model.eval_raw(g).map(|(f, _, _)| f)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(ProfileComputer {
            u,
            model,
            gradsq,
            density,
        })
    }

    fn check_ball(&self, x: &Point, r: f64) -> Result<()> {
        let d = &self.u.domain;
        if r < 4.0 * d.spacing - 1e-12 {
            return Err(Error::Resolution(format!(
                "radius {r} below the 4h floor (h = {})",
                d.spacing
            )));
        }
        if d.clearance(x) < r - 1e-12 {
            return Err(Error::Domain(format!(
                "ball of radius {r} around {x:?} exits the domain"
            )));
        }
        Ok(())
    }

    /// Fraction of the cell centered at `pos` inside `B_r(x)`, by subsampling
    /// with a smoothstep shoulder of width `h/4` on the ball indicator.  The
    /// shoulder keeps every cell weight C¹ and non-decreasing in `r`, so
    /// profile slopes see no subsample quantization jumps; the symmetric
    /// kernel leaves the mass unbiased to second order.
    fn cell_weight(&self, pos: &Point, x: &Point, r: f64) -> f64 {
        let h = self.u.domain.spacing;
        let band = h / SUBSAMPLES_PER_AXIS as f64;
        let half_diag = 0.5 * h * (self.u.domain.n_dim as f64).sqrt() + band;
        let dc = dist(pos, x);
        if dc <= r - half_diag {
            return 1.0;
        }
        if dc >= r + half_diag {
            return 0.0;
        }
        let m = SUBSAMPLES_PER_AXIS;
        let n = self.u.domain.n_dim;
        let total = m.pow(n as u32);
        let mut acc = 0.0;
        for s in 0..total {
            let mut q = *pos;
            let mut rem = s;
            for a in 0..n {
                let j = rem % m;
                rem /= m;
                q[a] += ((j as f64 + 0.5) / m as f64 - 0.5) * h;
            }
            acc += quad::smoothstep((r - dist(&q, x)) / band + 0.5);
        }
        acc / total as f64
    }

    /// Weighted sum of `values` over `B_r(x)`; also returns the covered volume.
    fn ball_sum(&self, values: &[f64], x: &Point, r: f64) -> (f64, f64) {
        let d = &self.u.domain;
        let h = d.spacing;
        let mut lo = [0isize; 3];
        let mut hi = [0isize; 3];
        for a in 0..d.n_dim {
            lo[a] = (((x[a] - r - h) - d.origin[a]) / h - 0.5).floor() as isize;
            hi[a] = (((x[a] + r + h) - d.origin[a]) / h - 0.5).ceil() as isize;
            lo[a] = lo[a].max(0);
            hi[a] = hi[a].min(d.dims[a] as isize - 1);
        }
        let kk = if d.n_dim == 3 { (lo[2], hi[2]) } else { (0, 0) };
        let mut acc = 0.0;
        let mut vol = 0.0;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in kk.0..=kk.1 {
                    let idx = d.index(i as usize, j as usize, k as usize);
                    if !self.u.active[idx] {
                        continue;
                    }
                    let pos = d.node_pos(idx);
                    let w = self.cell_weight(&pos, x, r);
                    if w > 0.0 {
                        acc += w * values[idx];
                        vol += w;
                    }
                }
            }
        }
        let cell = d.cell_volume();
        (acc * cell, vol * cell)
    }

    /// `θ(x, r) = r^{2-n} ∫_{B_r(x)} F`.
    pub fn theta(&self, x: &Point, r: f64) -> Result<f64> {
        self.check_ball(x, r)?;
        let (mass, _) = self.ball_sum(&self.density, x, r);
        Ok(r.powi(2 - self.u.domain.n_dim as i32) * mass)
    }

    /// Energy average `⨍_{B_r(x)} F` over the discretely covered ball.
    pub fn energy_average(&self, x: &Point, r: f64) -> Result<f64> {
        self.check_ball(x, r)?;
        let (mass, vol) = self.ball_sum(&self.density, x, r);
        if vol <= 0.0 {
            return Ok(0.0);
        }
        Ok(mass / vol)
    }

    /// Error-term integral `2 r^{1-n} ∫_{B_r(x)} e(|∇u|²)`.
    pub fn error_integral(&self, x: &Point, r: f64) -> Result<f64> {
        self.check_ball(x, r)?;
        let e_vals: Vec<f64> = self
            .gradsq
            .par_iter()
            .enumerate()
            .map(|(idx, &g)| {
                if !self.u.active[idx] {
                    return Ok(0.0);
                }
                self.model.error_term_raw(g)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mass, _) = self.ball_sum(&e_vals, x, r);
        Ok(2.0 * r.powi(1 - self.u.domain.n_dim as i32) * mass)
    }

    /// Boundary-flux term `2 r^{2-n} ∫_{∂B_r(x)} F_p |∂u/∂r|²` by seeded
    /// spherical-shell Monte-Carlo with trilinear sampling.
    pub fn boundary_flux<R: Rng>(&self, x: &Point, r: f64, dirs: usize, rng: &mut R) -> Result<f64> {
        self.check_ball(x, r)?;
        let d = &self.u.domain;
        let n = d.n_dim;
        let h = d.spacing;
        let q = self.u.q_dim;
        let delta = 0.5 * h;
        let mut mean = 0.0;
        let mut va = [0.0f64; crate::fields::MAX_Q];
        let mut vb = [0.0f64; crate::fields::MAX_Q];
        for _ in 0..dirs {
            let mut w = [0.0f64; 3];
            loop {
                let mut norm2 = 0.0;
                for wa in w.iter_mut().take(n) {
                    *wa = rng.gen_range(-1.0..1.0f64);
                    norm2 += *wa * *wa;
                }
                if norm2 > 1e-6 && norm2 <= 1.0 {
                    let norm = norm2.sqrt();
                    for wa in w.iter_mut().take(n) {
                        *wa /= norm;
                    }
                    break;
                }
            }
            let p = [x[0] + r * w[0], x[1] + r * w[1], x[2] + r * w[2]];
            let pa = [p[0] + delta * w[0], p[1] + delta * w[1], p[2] + delta * w[2]];
            let pb = [p[0] - delta * w[0], p[1] - delta * w[1], p[2] - delta * w[2]];
            self.u.interp_renormalized(&pa, &mut va);
            self.u.interp_renormalized(&pb, &mut vb);
            let mut du2 = 0.0;
            for a in 0..q {
                let dv = (va[a] - vb[a]) / (2.0 * delta);
                du2 += dv * dv;
            }
            // F_p at the interpolated density
            let g = self.interp_scalar(&self.gradsq, &p);
            let (_, fp, _) = self.model.eval_raw(g.max(0.0))?;
            mean += fp * du2;
        }
        mean /= dirs as f64;
        let area = match n {
            3 => 4.0 * std::f64::consts::PI * r * r,
            _ => 2.0 * std::f64::consts::PI * r,
        };
        Ok(2.0 * r.powi(2 - n as i32) * area * mean)
    }

    fn interp_scalar(&self, values: &[f64], p: &Point) -> f64 {
        let d = &self.u.domain;
        let h = d.spacing;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..d.n_dim {
            let g = ((p[a] - d.origin[a]) / h - 0.5).clamp(0.0, (d.dims[a] - 1) as f64);
            let b = (g.floor() as usize).min(d.dims[a] - 2);
            base[a] = b;
            frac[a] = g - b as f64;
        }
        let corners = 1usize << d.n_dim;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut w = 1.0;
            let mut coord = [0usize; 3];
            for a in 0..d.n_dim {
                let bit = (c >> a) & 1;
                coord[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * values[d.index(coord[0], coord[1], coord[2])];
        }
        acc
    }

    /// Corrected density `Θ̄(x, r) = e^{(ϑ/c_e) r} θ(x, r) + h(r)` at a single
    /// center and radius.
    pub fn theta_bar(&self, x: &Point, r: f64) -> Result<f64> {
        let needs_h = !matches!(self.model.kind, crate::integrand::IntegrandKind::Dirichlet);
        let h = if needs_h { self.model.correction_h(r)? } else { 0.0 };
        let kappa = self.model.vartheta / self.model.c_e;
        Ok((kappa * r).exp() * self.theta(x, r)? + h)
    }

    /// Full profile at one center: θ, h, and Θ̄ per radius.
    pub fn profile(&self, x: &Point, radii: &[f64]) -> Result<MonotoneProfile> {
        if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("radii must be strictly increasing".into()));
        }
        let needs_h = !matches!(self.model.kind, crate::integrand::IntegrandKind::Dirichlet);
        if needs_h && self.model.a_constant.is_none() {
            return Err(Error::State(
                "profile needs a calibrated model (run calibrate_a first)".into(),
            ));
        }
        let theta: Vec<f64> = radii
            .par_iter()
            .map(|&r| self.theta(x, r))
            .collect::<Result<Vec<f64>>>()?;
        let mut h_vals = Vec::with_capacity(radii.len());
        for &r in radii {
            h_vals.push(if needs_h { self.model.correction_h(r)? } else { 0.0 });
        }
        let kappa = self.model.vartheta / self.model.c_e;
        let theta_bar: Vec<f64> = radii
            .iter()
            .zip(theta.iter().zip(h_vals.iter()))
            .map(|(&r, (&t, &h))| (kappa * r).exp() * t + h)
            .collect();
        Ok(MonotoneProfile {
            center: *x,
            radii: radii.to_vec(),
            theta,
            h_vals,
            theta_bar,
            theta_smooth: Vec::new(),
        })
    }
}

/// One-off density `θ(x, r)`; builds the refined field, so prefer
/// `ProfileComputer` when evaluating many centers or radii.
pub fn theta(u: &SphereMap, model: &IntegrandModel, x: &Point, r: f64) -> Result<f64> {
    ProfileComputer::new(u, model)?.theta(x, r)
}

/// Mollified profile `Θ̃(r) = ∫ Θ̄(s) ψ(s/r) ds / r` where ψ is the smooth
/// bump equal to one on `[ε, 1-ε]`.  Values below the sampled range use the
/// innermost sample (constant extension).  Radii with fewer than 16 profile
/// samples in their support are emitted as NaN; the call fails only when no
/// radius is adequately sampled.
pub fn theta_smoothed(profile: &MonotoneProfile, eps_mollifier: f64) -> Result<Vec<f64>> {
    if !(0.0 < eps_mollifier && eps_mollifier < 0.5) {
        return Err(Error::Domain("mollifier shoulder must lie in (0, 0.5)".into()));
    }
    let out: Vec<f64> = profile
        .radii
        .iter()
        .map(|&r| {
            let inside = profile.radii.iter().filter(|&&s| s <= r).count();
            if inside < 16 {
                return f64::NAN;
            }
            // ∫_0^1 Θ̄(r t) ψ(t) dt by composite midpoint
            let m = 512;
            let mut acc = 0.0;
            for i in 0..m {
                let t = (i as f64 + 0.5) / m as f64;
                acc += profile.theta_bar_at(r * t) * quad::bump(t, eps_mollifier);
            }
            acc / m as f64
        })
        .collect();
    if out.iter().all(|v| v.is_nan()) {
        return Err(Error::Resolution(format!(
            "no profile radius has 16 samples in its support ({} radii total)",
            profile.radii.len()
        )));
    }
    Ok(out)
}

/// Mass of the mollifier itself (the normalization constant reported with Θ̃).
pub fn mollifier_mass(eps_mollifier: f64) -> f64 {
    let m = 512;
    (0..m)
        .map(|i| quad::bump((i as f64 + 0.5) / m as f64, eps_mollifier))
        .sum::<f64>()
        / m as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub tol: f64,
    pub lambda: f64,
    /// Slope checks: count of Θ̄ slopes below `-tol`.
    pub slope_checks: usize,
    pub slope_violations: usize,
    pub worst_slope: f64,
    /// Identity checks against the boundary flux and error term.
    pub flux_checks: usize,
    pub flux_violations: usize,
    pub worst_flux_defect: f64,
    pub fluxes: Vec<Vec<f64>>,
}

/// Slope statistics of `Θ̄` over the given centers, plus the stronger check
/// `dθ/dr ≥ flux - error term` from the differentiated stationarity identity.
/// Violations are data, not errors.
pub fn monotonicity_report<R: Rng>(
    computer: &ProfileComputer,
    profiles: &[MonotoneProfile],
    flux_dirs: usize,
    rng: &mut R,
) -> Result<MonotonicityReport> {
    let lambda = profiles
        .iter()
        .flat_map(|p| p.theta_bar.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-12);
    let tol = 1e-3 * lambda;
    let mut slope_checks = 0;
    let mut slope_violations = 0;
    let mut worst_slope = f64::INFINITY;
    let mut flux_checks = 0;
    let mut flux_violations = 0;
    let mut worst_flux_defect = f64::INFINITY;
    let mut fluxes = Vec::with_capacity(profiles.len());

    for prof in profiles {
        let mut prof_flux = Vec::with_capacity(prof.radii.len().saturating_sub(1));
        for i in 0..prof.radii.len() - 1 {
            let dr = prof.radii[i + 1] - prof.radii[i];
            let slope = (prof.theta_bar[i + 1] - prof.theta_bar[i]) / dr;
            slope_checks += 1;
            worst_slope = worst_slope.min(slope);
            if slope < -tol {
                slope_violations += 1;
            }
            // identity check at the midpoint radius, on the raw density θ
            let r_mid = 0.5 * (prof.radii[i] + prof.radii[i + 1]);
            let theta_slope = (prof.theta[i + 1] - prof.theta[i]) / dr;
            let flux = computer.boundary_flux(&prof.center, r_mid, flux_dirs, rng)?;
            let err = computer.error_integral(&prof.center, r_mid)?;
            let defect = theta_slope + err - flux;
            flux_checks += 1;
            worst_flux_defect = worst_flux_defect.min(defect);
            if defect < -tol {
                flux_violations += 1;
            }
            prof_flux.push(flux);
        }
        fluxes.push(prof_flux);
    }
    Ok(MonotonicityReport {
        tol,
        lambda,
        slope_checks,
        slope_violations,
        worst_slope,
        flux_checks,
        flux_violations,
        worst_flux_defect,
        fluxes,
    })
}
