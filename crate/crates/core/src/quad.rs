//! Small quadrature toolbox: adaptive Simpson, truncated tail integrals with
//! geometric-decay detection, and the smooth cutoff used by the profile
//! mollifier.

use crate::error::{Error, Result};

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson_rule(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 30)
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Relative truncation threshold for tail integrals.  Truncation happens at
/// the first window whose geometric tail bound drops below this level.
pub const TAIL_TOL: f64 = 1e-10;

/// `∫_from^∞ f(t) dt` over doubling windows `[T, 2T]`.  Window contributions
/// of a power-law tail form a geometric sequence, so the sum closes with the
/// geometric remainder once the window ratio has stabilized; slowly decaying
/// but convergent tails (ratio near one) are extrapolated the same way.
/// Ratios that do not settle below one signal a divergent tail.
pub fn tail_integral<F: Fn(f64) -> f64>(f: &F, from: f64) -> Result<f64> {
    let mut lo = from.max(1e-300);
    let mut hi = if lo < 1.0 { 1.0 } else { 2.0 * lo };
    let mut acc = 0.0_f64;
    let mut prev_window = f64::INFINITY;
    let mut prev_ratio = f64::INFINITY;
    let mut last_window = f64::INFINITY;
    for _ in 0..160 {
        let w = adaptive_simpson(f, lo, hi, 1e-13 * (1.0 + acc.abs()));
        acc += w;
        let scale = 1.0 + acc.abs();
        let ratio = if prev_window.abs() > 0.0 && prev_window.is_finite() {
            (w / prev_window).abs()
        } else {
            0.0
        };
        if w.abs() < TAIL_TOL * scale && ratio <= 0.9 {
            if ratio > 0.0 && w.is_sign_positive() == prev_window.is_sign_positive() {
                acc += w * ratio / (1.0 - ratio);
            }
            return Ok(acc);
        }
        // stabilized geometric decay: close with the extrapolated remainder
        // once its drift-induced error is negligible
        if ratio > 0.0
            && ratio < 0.999
            && prev_ratio.is_finite()
            && w.is_sign_positive() == prev_window.is_sign_positive()
        {
            let drift = (ratio - prev_ratio).abs();
            let remainder = w.abs() * ratio / (1.0 - ratio);
            let rem_err = remainder * drift / (1.0 - ratio);
            if rem_err < TAIL_TOL * scale && remainder < scale {
                acc += w.signum() * remainder;
                return Ok(acc);
            }
        }
        prev_ratio = ratio;
        prev_window = w;
        last_window = w;
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
    Err(Error::Integrability(format!(
        "tail integral from {from} does not converge: window near {lo:.3e} still contributes {last_window:.3e}"
    )))
}

/// `∫_0^r f(t) dt` for integrands that may blow up (integrably) at `t = 0`:
/// dyadic pieces `[r·2^{-k-1}, r·2^{-k}]` summed until they stop mattering.
pub fn integral_to_zero<F: Fn(f64) -> f64>(f: &F, r: f64) -> Result<f64> {
    if r == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0_f64;
    let mut hi = r;
    for k in 0..200 {
        let lo = 0.5 * hi;
        let piece = adaptive_simpson(f, lo, hi, 1e-13 * (1.0 + acc.abs()));
        acc += piece;
        if k > 2 && piece.abs() < 1e-13 * (1.0 + acc.abs()) {
            return Ok(acc);
        }
        hi = lo;
    }
    Err(Error::Integrability(format!(
        "integral over (0, {r}] does not settle; contribution near zero still significant"
    )))
}

/// Smoothstep `3x² - 2x³` clamped to `[0, 1]`.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Smooth bump on `[0, 1]`: identically 1 on `[eps, 1-eps]`, 0 outside `(0, 1)`.
pub fn bump(t: f64, eps: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    smoothstep(t / eps) * smoothstep((1.0 - t) / eps)
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
