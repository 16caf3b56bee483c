//! Admissible integrands `F(x, z, p)` with their derivatives, the error term
//! `e = F_p·p - F`, the Jensen transform, and the integral correction `h(r)`
//! that makes the density profile monotone.
//!
//! All built-in integrands depend on `p = |∇u|²` only; the `(x, z)` slots are
//! carried through the signatures so the weak/stationary residual formulas
//! stay complete, and the `vartheta` bound enters the profile through the
//! exponential prefactor.

use crate::error::{Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};

/// Calibration slack in `calibrate_a`: the correction at scale one must stay
/// below `EPS_CAL · A²`.
pub const EPS_CAL: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum IntegrandKind {
    /// `F(p) = p`, the classical gradient energy.
    Dirichlet,
    /// `F(p) = p·(2 - (p+1)^{-β})` for `β < 1`.
    F1 { beta: f64 },
    /// Sampled integrand, monotone-cubic interpolated.
    Tabulated(TabulatedF),
}

/// Monotone cubic (Fritsch-Carlson) interpolant of `F` samples on `[0, p_max]`.
/// Derivatives come from differentiating the interpolant, so the sign checks
/// on `F_pp` see exactly what the evaluator sees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabulatedF {
    p: Vec<f64>,
    f: Vec<f64>,
    slopes: Vec<f64>,
    /// Power-law tail model `F_pp(t) ≈ coeff·(t/p_max)^sigma` for `t > p_max`,
    /// fitted on the last decade of samples.
    tail_coeff: f64,
    tail_sigma: f64,
}

impl TabulatedF {
    pub fn new(p: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if p.len() != f.len() || p.len() < 4 {
            return Err(Error::Domain(
                "tabulated integrand needs >= 4 aligned samples".into(),
            ));
        }
        if p[0] != 0.0 {
            return Err(Error::Domain("tabulated samples must start at p = 0".into()));
        }
        if p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("tabulated p samples must increase".into()));
        }
        let slopes = fritsch_carlson_slopes(&p, &f);
        let mut t = TabulatedF {
            p,
            f,
            slopes,
            tail_coeff: 0.0,
            tail_sigma: 0.0,
        };
        let (c, s) = t.fit_tail();
        t.tail_coeff = c;
        t.tail_sigma = s;
        Ok(t)
    }

    pub fn p_max(&self) -> f64 {
        *self.p.last().unwrap()
    }

    fn segment(&self, x: f64) -> usize {
        match self.p.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.p.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.p.len() - 2),
        }
    }

    /// `(F, F', F'')` of the interpolant at `x` in `[0, p_max]`.
    fn eval(&self, x: f64) -> Result<(f64, f64, f64)> {
        if x < 0.0 || x > self.p_max() {
            return Err(Error::Extrapolation(format!(
                "tabulated integrand queried at p = {x}, range [0, {}]",
                self.p_max()
            )));
        }
        let i = self.segment(x);
        let dx = self.p[i + 1] - self.p[i];
        let t = (x - self.p[i]) / dx;
        let (f0, f1) = (self.f[i], self.f[i + 1]);
        let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * f0 + h10 * dx * d0 + h01 * f1 + h11 * dx * d1;
        let dv = ((6.0 * t2 - 6.0 * t) * f0
            + (3.0 * t2 - 4.0 * t + 1.0) * dx * d0
            + (-6.0 * t2 + 6.0 * t) * f1
            + (3.0 * t2 - 2.0 * t) * dx * d1)
            / dx;
        let ddv = ((12.0 * t - 6.0) * f0
            + (6.0 * t - 4.0) * dx * d0
            + (-12.0 * t + 6.0) * f1
            + (6.0 * t - 2.0) * dx * d1)
            / (dx * dx);
        Ok((v, dv, ddv))
    }

    /// `F_pp` extended beyond the table by the fitted power law.
    fn fpp_extended(&self, x: f64) -> f64 {
        if x <= self.p_max() {
            self.eval(x.max(0.0)).map(|v| v.2).unwrap_or(0.0)
        } else {
            self.tail_coeff * (x / self.p_max()).powf(self.tail_sigma)
        }
    }

    fn fit_tail(&self) -> (f64, f64) {
        let p_max = self.p_max();
        let lo = p_max / 10.0;
        let n = 8;
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let x = lo * (p_max / lo).powf(i as f64 / (n - 1) as f64);
            let fpp = self.eval(x).map(|v| v.2).unwrap_or(0.0);
            if fpp > 1e-300 {
                pts.push((x.ln(), fpp.ln()));
            }
        }
        let end = self.eval(p_max).map(|v| v.2).unwrap_or(0.0);
        if end.abs() < 1e-14 || pts.len() < 3 {
            return (0.0, 0.0);
        }
        // least-squares log-log slope
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = m * sxx - sx * sx;
        let sigma = if denom.abs() < 1e-30 {
            0.0
        } else {
            (m * sxy - sx * sy) / denom
        };
        (end, sigma)
    }
}

fn fritsch_carlson_slopes(p: &[f64], f: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut delta = vec![0.0; n - 1];
    for i in 0..n - 1 {
        delta[i] = (f[i + 1] - f[i]) / (p[i + 1] - p[i]);
    }
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            d[i] = 0.5 * (delta[i - 1] + delta[i]);
        }
    }
    // limiter keeping the interpolant monotone on monotone data
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
        } else {
            let a = d[i] / delta[i];
            let b = d[i + 1] / delta[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                d[i] = tau * a * delta[i];
                d[i + 1] = tau * b * delta[i];
            }
        }
    }
    d
}

/// An admissible integrand with its regularity constants, calibration state
/// and accumulated rescaling factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrandModel {
    pub kind: IntegrandKind,
    /// Ellipticity constant `𝓑 > 1`.
    pub ellipticity_b: f64,
    /// Bound `ϑ ≥ 0` on `|F_x|, |F_z| / p`; zero for the built-in kinds.
    pub vartheta: f64,
    pub n_dim: usize,
    pub q_dim: usize,
    /// Derived constant `nq𝓑/2`.
    pub c_e: f64,
    /// Calibrated constant; set by `calibrate_a`.
    pub a_constant: Option<f64>,
    /// Quadrature value of `∫_1^∞ F_pp ln p dp`; set by `verify_assumptions`.
    pub integrability_c: Option<f64>,
    /// Quadrature value of `∫_0^1 p e(p^{-2}) dp`; set by `verify_assumptions`.
    pub integrability_d: Option<f64>,
    /// Accumulated blow-up factor λ; the model evaluates `λ²F(p/λ²)`.
    scale: f64,
}

impl IntegrandModel {
    pub fn new(
        kind: IntegrandKind,
        ellipticity_b: f64,
        vartheta: f64,
        n_dim: usize,
        q_dim: usize,
    ) -> Result<Self> {
        if ellipticity_b <= 1.0 {
            return Err(Error::Domain(format!(
                "ellipticity constant must exceed 1, got {ellipticity_b}"
            )));
        }
        if vartheta < 0.0 {
            return Err(Error::Domain("vartheta must be non-negative".into()));
        }
        if n_dim == 0 || q_dim < 2 {
            return Err(Error::Domain(
                "need domain dimension >= 1 and ambient target dimension >= 2".into(),
            ));
        }
        if let IntegrandKind::F1 { beta } = kind {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::Domain(format!(
                    "F1 requires beta in (0, 1), got {beta}"
                )));
            }
        }
        let c_e = n_dim as f64 * q_dim as f64 * ellipticity_b / 2.0;
        Ok(IntegrandModel {
            kind,
            ellipticity_b,
            vartheta,
            n_dim,
            q_dim,
            c_e,
            a_constant: None,
            integrability_c: None,
            integrability_d: None,
            scale: 1.0,
        })
    }

    pub fn dirichlet(n_dim: usize, q_dim: usize) -> Self {
        let b = n_dim as f64 * q_dim as f64 / 2.0 + 1.0;
        Self::new(IntegrandKind::Dirichlet, b, 0.0, n_dim, q_dim).unwrap()
    }

    pub fn f1(beta: f64, ellipticity_b: f64, n_dim: usize, q_dim: usize) -> Result<Self> {
        Self::new(IntegrandKind::F1 { beta }, ellipticity_b, 0.0, n_dim, q_dim)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `(F, F_p, F_pp)` at `p`, ignoring the (unused) base-point slots.
    pub fn eval_raw(&self, p: f64) -> Result<(f64, f64, f64)> {
        if p < 0.0 {
            return Err(Error::Domain(format!("p must be non-negative, got {p}")));
        }
        let l2 = self.scale * self.scale;
        let q = p / l2;
        let (f, fp, fpp) = match &self.kind {
            IntegrandKind::Dirichlet => (q, 1.0, 0.0),
            IntegrandKind::F1 { beta } => f1_eval(*beta, q),
            IntegrandKind::Tabulated(t) => t.eval(q)?,
        };
        Ok((l2 * f, fp, fpp / l2))
    }

    /// `(F, F_p, F_pp)` at `(x, z, p)` with dimension checks.
    pub fn eval(&self, x: &[f64], z: &[f64], p: f64) -> Result<(f64, f64, f64)> {
        if x.len() != self.n_dim {
            return Err(Error::Dimension(format!(
                "base point has dim {}, model expects {}",
                x.len(),
                self.n_dim
            )));
        }
        if z.len() != self.q_dim {
            return Err(Error::Dimension(format!(
                "target vector has dim {}, model expects {}",
                z.len(),
                self.q_dim
            )));
        }
        self.eval_raw(p)
    }

    /// Partial derivative of F in the base point; zero for all built-in kinds.
    pub fn f_x(&self, _x: &[f64], _z: &[f64], _p: f64) -> Vec<f64> {
        vec![0.0; self.n_dim]
    }

    /// Partial derivative of F in the target slot; zero for all built-in kinds.
    pub fn f_z(&self, _x: &[f64], _z: &[f64], _p: f64) -> Vec<f64> {
        vec![0.0; self.q_dim]
    }

    /// Error term `e = F_p·p - F`.
    pub fn error_term(&self, x: &[f64], z: &[f64], p: f64) -> Result<f64> {
        let (f, fp, _) = self.eval(x, z, p)?;
        Ok(fp * p - f)
    }

    pub fn error_term_raw(&self, p: f64) -> Result<f64> {
        let (f, fp, _) = self.eval_raw(p)?;
        Ok(fp * p - f)
    }

    /// `F_pp` with the tabulated kinds extended past their range by the fitted
    /// power law; backs the Jensen tail integrals.
    fn fpp_extended(&self, p: f64) -> f64 {
        let l2 = self.scale * self.scale;
        let q = p / l2;
        let v = match &self.kind {
            IntegrandKind::Dirichlet => 0.0,
            IntegrandKind::F1 { beta } => f1_eval(*beta, q).2,
            IntegrandKind::Tabulated(t) => t.fpp_extended(q),
        };
        v / l2
    }

    /// `e(p)` with tabulated kinds extended by integrating the tail power law.
    fn e_extended(&self, p: f64) -> f64 {
        let l2 = self.scale * self.scale;
        let q = p / l2;
        let v = match &self.kind {
            IntegrandKind::Dirichlet => 0.0,
            IntegrandKind::F1 { beta } => {
                let (f, fp, _) = f1_eval(*beta, q);
                fp * q - f
            }
            IntegrandKind::Tabulated(t) => {
                if q <= t.p_max() {
                    t.eval(q).map(|(f, fp, _)| fp * q - f).unwrap_or(0.0)
                } else {
                    // e' = F_pp·t, so extend by ∫_{p_max}^{q} t·F_pp_tail(t) dt
                    let base = t
                        .eval(t.p_max())
                        .map(|(f, fp, _)| fp * t.p_max() - f)
                        .unwrap_or(0.0);
                    let pm = t.p_max();
                    let s = t.tail_sigma;
                    let c = t.tail_coeff;
                    let extra = if c == 0.0 {
                        0.0
                    } else if (s + 2.0).abs() < 1e-12 {
                        c * pm * pm * (q / pm).ln()
                    } else {
                        c * pm * pm * ((q / pm).powf(s + 2.0) - 1.0) / (s + 2.0)
                    };
                    base + extra
                }
            }
        };
        l2 * v
    }

    /// Jensen transform of the error term: `J_e(y) = e(y) + y ∫_y^∞ F_pp dt`.
    pub fn j_e(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::Domain(format!("J_e needs y >= 0, got {y}")));
        }
        if matches!(self.kind, IntegrandKind::Dirichlet) {
            return Ok(0.0);
        }
        let tail = quad::tail_integral(&|t| self.fpp_extended(t), y)?;
        Ok(self.e_extended(y) + y * tail)
    }

    /// Correction `h(r) = 2 ∫_0^r t·J_e(2 c_e A² t^{-2}) dt` for a given `A`.
    ///
    /// Substituting `y = α t^{-2}` and integrating the tail part by parts
    /// collapses the nested quadrature to three tail integrals:
    /// `h(r) = α [∫_{y_r}^∞ e/y² + ∫_{y_r}^∞ F_pp·ln y - T(y_r)·ln y_r]`
    /// with `y_r = α/r²` and `T(y) = ∫_y^∞ F_pp`.
    pub fn h_with_a(&self, r: f64, a: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(Error::Domain(format!("h needs r >= 0, got {r}")));
        }
        if matches!(self.kind, IntegrandKind::Dirichlet) {
            return Ok(0.0);
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        let alpha = 2.0 * self.c_e * a * a;
        let y_r = alpha / (r * r);
        let e_part = quad::tail_integral(&|y| self.e_extended(y) / (y * y), y_r)?;
        let log_part = quad::tail_integral(&|y| self.fpp_extended(y) * y.ln(), y_r)?;
        let t_yr = quad::tail_integral(&|y| self.fpp_extended(y), y_r)?;
        let v = alpha * (e_part + log_part - t_yr * y_r.ln());
        if !v.is_finite() {
            return Err(Error::Integrability(
                "correction quadrature hit a non-convergent Jensen tail".into(),
            ));
        }
        Ok(v)
    }

    /// Correction `h(r)` with the calibrated constant.
    pub fn correction_h(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("h is defined for r in [0, 1], got {r}")));
        }
        let a = self.a_constant.ok_or_else(|| {
            Error::State("correction requested before calibrate_a set the constant".into())
        })?;
        self.h_with_a(r, a)
    }

    /// Doubling search for the smallest `A ∈ {1, 2, 4, …}` with
    /// `A² ≥ ℰ(1)` and `h(1; A) ≤ EPS_CAL·A²`; stores and returns it.
    pub fn calibrate_a(&mut self, energy_at_scale_one: f64) -> Result<f64> {
        if energy_at_scale_one < 0.0 {
            return Err(Error::Domain("energy must be non-negative".into()));
        }
        let mut a = 1.0_f64;
        for _ in 0..=64 {
            if a * a >= energy_at_scale_one {
                let h1 = self.h_with_a(1.0, a)?;
                if h1 <= EPS_CAL * a * a {
                    self.a_constant = Some(a);
                    return Ok(a);
                }
            }
            a *= 2.0;
        }
        Err(Error::Integrability(format!(
            "calibration did not terminate below A = 2^64 (energy {energy_at_scale_one})"
        )))
    }

    /// Blow-up of the model: `F^λ(p) = λ² F(p/λ²)`.  Constants, calibration
    /// and verification state carry over; rescalings compose multiplicatively.
    pub fn rescale(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Domain(format!(
                "rescale factor must lie in (0, 1], got {lambda}"
            )));
        }
        let mut m = self.clone();
        m.scale *= lambda;
        Ok(m)
    }

    /// Check the structural assumptions over the supplied `p` samples.
    /// Failures are report entries, not errors.
    pub fn verify_assumptions(&mut self, p_samples: &[f64]) -> AssumptionReport {
        let nq2 = self.n_dim as f64 * self.q_dim as f64 / 2.0;
        let b = self.ellipticity_b;
        let slack = 1e-9 * b;
        let mut rep = AssumptionReport::default();
        rep.ellipticity_min = f64::INFINITY;
        rep.ellipticity_max = f64::NEG_INFINITY;
        rep.min_fpp = f64::INFINITY;
        rep.fp_min = f64::INFINITY;
        rep.fp_max = f64::NEG_INFINITY;
        rep.ellipticity_ok = true;
        rep.convexity_ok = true;
        rep.xz_bounds_ok = true;
        rep.fp_bounds_ok = true;
        rep.integrability_ok = true;

        let p_max_valid = match &self.kind {
            IntegrandKind::Tabulated(t) => t.p_max() * self.scale * self.scale,
            _ => f64::INFINITY,
        };
        for &p in p_samples {
            if p < 0.0 {
                continue;
            }
            let p = p.min(p_max_valid);
            let Ok((_, fp, fpp)) = self.eval_raw(p) else {
                rep.notes.push(format!("evaluation failed at p = {p}"));
                rep.ellipticity_ok = false;
                continue;
            };
            let s = fpp * p + nq2 * fp;
            rep.ellipticity_min = rep.ellipticity_min.min(s);
            rep.ellipticity_max = rep.ellipticity_max.max(s);
            if !(s >= 1.0 / b - slack && s <= b + slack) {
                rep.ellipticity_ok = false;
            }
            if fpp < -1e-12 {
                rep.convexity_ok = false;
            }
            rep.min_fpp = rep.min_fpp.min(fpp);
            rep.fp_min = rep.fp_min.min(fp);
            rep.fp_max = rep.fp_max.max(fp);
            // derived bound 2/(nq𝓑) ≤ F_p ≤ 2𝓑/(nq)
            if !(fp >= 1.0 / (nq2 * b) - slack && fp <= b / nq2 + slack) {
                rep.fp_bounds_ok = false;
            }
            // the built-in kinds have F_x = F_z = 0, so the ϑ bound holds with
            // ratio zero; recorded for completeness
            let x0 = vec![0.0; self.n_dim];
            let z0 = vec![0.0; self.q_dim];
            let fx = self.f_x(&x0, &z0, p);
            let fz = self.f_z(&x0, &z0, p);
            let bound = self.vartheta * p + 1e-30;
            let worst = fx
                .iter()
                .chain(fz.iter())
                .fold(0.0_f64, |acc, v| acc.max(v.abs()));
            rep.xz_max_ratio = rep.xz_max_ratio.max(worst / bound.max(1e-30));
            if worst > bound {
                rep.xz_bounds_ok = false;
            }
        }

        match quad::tail_integral(&|t| self.fpp_extended(t) * t.ln(), 1.0) {
            Ok(c) => {
                rep.c_value = Some(c);
                self.integrability_c = Some(c);
            }
            Err(e) => {
                rep.notes.push(format!("C integral: {e}"));
                rep.integrability_ok = false;
            }
        }
        match quad::integral_to_zero(&|s| s * self.e_extended(1.0 / (s * s)), 1.0) {
            Ok(d) => {
                rep.d_value = Some(d);
                self.integrability_d = Some(d);
            }
            Err(e) => {
                rep.notes.push(format!("D integral: {e}"));
                rep.integrability_ok = false;
            }
        }
        rep
    }
}

fn f1_eval(beta: f64, p: f64) -> (f64, f64, f64) {
    let w = (p + 1.0).powf(-beta);
    let w1 = (p + 1.0).powf(-beta - 1.0);
    let w2 = (p + 1.0).powf(-beta - 2.0);
    let f = p * (2.0 - w);
    let fp = 2.0 - w + beta * p * w1;
    let fpp = beta * w2 * ((1.0 - beta) * p + 2.0);
    (f, fp, fpp)
}

/// Jensen transform `J_g(x) = g(x) + x ∫_x^∞ g'(t)/t dt` for a non-negative
/// derivative `g'` with `g(0) = 0`.  The tail is integrated over doubling
/// windows capped at `cutoff`; tails still significant at the cutoff are an
/// integrability failure.
pub fn jensen_transform<F: Fn(f64) -> f64>(gprime: &F, x: f64, cutoff: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("Jensen transform needs x >= 0, got {x}")));
    }
    let g = quad::adaptive_simpson(gprime, 0.0, x, 1e-13 * (1.0 + x));
    let mut lo = x.max(1e-300);
    let mut hi = if lo < 1.0 { 1.0 } else { 2.0 * lo };
    let mut tail = 0.0_f64;
    let mut last = f64::INFINITY;
    while lo < cutoff {
        let hi_c = hi.min(cutoff);
        let w = quad::adaptive_simpson(&|t| gprime(t) / t, lo, hi_c, 1e-13 * (1.0 + tail.abs()));
        tail += w;
        last = w;
        lo = hi_c;
        hi *= 2.0;
        if w.abs() < quad::TAIL_TOL * (1.0 + tail.abs()) && hi_c < cutoff {
            return Ok(g + x * tail);
        }
    }
    if last.abs() >= quad::TAIL_TOL * (1.0 + tail.abs()) {
        return Err(Error::Integrability(format!(
            "Jensen tail still contributes {last:.3e} at cutoff {cutoff:.3e}"
        )));
    }
    Ok(g + x * tail)
}

/// Log-uniform sample ladder on `[0, p_max]` for assumption checks.
pub fn log_samples(p_max: f64, count: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(count + 1);
    v.push(0.0);
    let lo = 1e-4_f64;
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        v.push(lo * (p_max / lo).powf(t));
    }
    v
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AssumptionReport {
    pub ellipticity_ok: bool,
    pub ellipticity_min: f64,
    pub ellipticity_max: f64,
    pub xz_bounds_ok: bool,
    pub xz_max_ratio: f64,
    pub convexity_ok: bool,
    pub min_fpp: f64,
    pub fp_bounds_ok: bool,
    pub fp_min: f64,
    pub fp_max: f64,
    pub integrability_ok: bool,
    pub c_value: Option<f64>,
    pub d_value: Option<f64>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.ellipticity_ok
            && self.xz_bounds_ok
            && self.convexity_ok
            && self.fp_bounds_ok
            && self.integrability_ok
    }
}
