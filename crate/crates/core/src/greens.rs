//! Green-function evaluations for `∂_tt - ∂_xx + a∂_t + m²`.
//!
//! Only two objects are needed: the spatial Fourier transform `ℱG(t)(ξ)` for
//! arbitrary `(a, m)`, and the physical-space kernel of the critically damped
//! operator (`m² = a²/4`),
//!
//! ```text
//! Γ(t, x) = ½ e^{-at/2} 1{|x| < t}.
//! ```
//!
//! General `(a, m)` is reduced to the critical kernel plus a linear drift, so
//! a physical-space `G` for arbitrary parameters is never evaluated.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coords::{to_rotated, PhysPoint};
use crate::error::{Error, Result};

/// Below this `|ξ² + m² - a²/4|` the spectral quotient is evaluated by series.
pub const BRANCH_POINT_BAND: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub a: f64,
    pub m: f64,
    pub theta: f64,
}

impl PhysParams {
    pub fn new(a: f64, m: f64, theta: f64) -> Result<Self> {
        let p = Self { a, m, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.m.is_finite() && self.theta.is_finite()) {
            return Err(Error::Configuration("physical parameters must be finite".into()));
        }
        if self.m < 0.0 {
            return Err(Error::Configuration(format!("mass must be >= 0, got {}", self.m)));
        }
        if self.theta <= 0.0 {
            return Err(Error::Configuration(format!(
                "noise scale theta must be > 0, got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Coefficient of the linear drift left over after reducing to critical
    /// damping: `b(u) = (a²/4 - m²) u`.
    pub fn drift_coefficient(&self) -> f64 {
        0.25 * self.a * self.a - self.m * self.m
    }

    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Oscillatory,
    Critical,
    Hyperbolic,
}

/// `ξ² + m² - a²/4`, the squared frequency of the damped mode.
fn discriminant(a: f64, m: f64, xi: f64) -> f64 {
    xi * xi + m * m - 0.25 * a * a
}

pub fn regime(a: f64, m: f64, xi: f64) -> Regime {
    let d = discriminant(a, m, xi);
    if d > 0.0 {
        Regime::Oscillatory
    } else if d == 0.0 {
        Regime::Critical
    } else {
        Regime::Hyperbolic
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// `ℱG(t)(ξ)` using the explicit three-branch formula.
pub fn fourier_green_branch(a: f64, m: f64, t: f64, xi: f64) -> Result<f64> {
    check_time(t)?;
    let damp = (-0.5 * a * t).exp();
    let d = discriminant(a, m, xi);
    let value = match regime(a, m, xi) {
        Regime::Oscillatory => {
            let w = d.sqrt();
            damp * (t * w).sin() / w
        }
        Regime::Critical => damp * t,
        Regime::Hyperbolic => {
            let w = (-d).sqrt();
            damp * (t * w).sinh() / w
        }
    };
    Ok(value)
}

/// `sin(t√d)/√d` as a series in `d`, valid on both sides of `d = 0`.
fn sinc_series(t: f64, d: f64) -> f64 {
    // t Σ_k (-d t²)^k / (2k+1)!, five terms
    let z = -d * t * t;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..5u32 {
        term *= z / f64::from((2 * k) * (2 * k + 1));
        sum += term;
    }
    t * sum
}

/// `ℱG(t)(ξ)` from the single formula `e^{-at/2} sin(t√d)/√d`, continued
/// analytically through complex `√d` for `d < 0`.
pub fn fourier_green_unified(a: f64, m: f64, t: f64, xi: f64) -> Result<f64> {
    check_time(t)?;
    let damp = (-0.5 * a * t).exp();
    let d = discriminant(a, m, xi);
    if d.abs() < BRANCH_POINT_BAND {
        return Ok(damp * sinc_series(t, d));
    }
    let w = Complex64::new(d, 0.0).sqrt();
    let q = (w * t).sin() / w;
    Ok(damp * q.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralNorm {
    /// `∫_{|ξ| ≤ cutoff} |ℱG(t)(ξ)|² dξ`
    pub value: f64,
    /// Analytic bound on the discarded tails `|ξ| > cutoff`.
    pub tail_bound: f64,
}

/// Truncated `∫_ℝ |ℱG(t)(ξ)|² dξ` by composite Simpson on `[-cutoff, cutoff]`.
pub fn l2_spectral_norm(a: f64, m: f64, t: f64, cutoff: f64, step: f64) -> Result<SpectralNorm> {
    check_time(t)?;
    if !(cutoff > 0.0 && step > 0.0 && step < cutoff) {
        return Err(Error::Quadrature(format!(
            "need 0 < step < cutoff, got step={step}, cutoff={cutoff}"
        )));
    }
    let k2 = 0.25 * a * a - m * m;
    let k = k2.max(0.0).sqrt();
    if cutoff <= 2.0 * k {
        return Err(Error::Quadrature(format!(
            "cutoff {cutoff} is inside the growing band |ξ| <= 2K = {}",
            2.0 * k
        )));
    }
    let mut intervals = (cutoff / step).ceil() as usize;
    if intervals % 2 == 1 {
        intervals += 1;
    }
    let h = cutoff / intervals as f64;
    let f = |xi: f64| -> Result<f64> {
        let g = fourier_green_unified(a, m, t, xi)?;
        Ok(g * g)
    };
    let mut acc = f(0.0)? + f(cutoff)?;
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h)?;
    }
    // integrand is even in ξ
    let value = 2.0 * acc * h / 3.0;

    // |ℱG|² ≤ e^{-at} / (ξ² - K²) beyond the band
    let one_side = if k > 0.0 {
        ((cutoff + k) / (cutoff - k)).ln() / (2.0 * k)
    } else {
        1.0 / cutoff
    };
    let tail_bound = 2.0 * (-a * t).exp() * one_side;
    if !value.is_finite() || !tail_bound.is_finite() {
        return Err(Error::Quadrature("non-finite spectral integral".into()));
    }
    if t > 0.0 && tail_bound > value {
        return Err(Error::Quadrature(format!(
            "tail bound {tail_bound:.3e} exceeds the truncated integral {value:.3e}"
        )));
    }
    Ok(SpectralNorm { value, tail_bound })
}

/// Critically damped kernel `Γ(t, x) = ½ e^{-at/2} 1{|x| < t}`.
pub fn critical_kernel(a: f64, t: f64, x: f64) -> f64 {
    if x.abs() < t {
        0.5 * (-0.5 * a * t).exp()
    } else {
        0.0
    }
}

/// `∫∫ |Γ - Γ₁ - Γ₂ + Γ₃|^p ds dy` for the shifted kernels
/// `Γ₁ = Γ(· - ε/√2, · + ε/√2)`, `Γ₂ = Γ(· - ε/√2, · - ε/√2)`,
/// `Γ₃ = Γ(· - √2ε, ·)` around the cone of `(t, x)`.
///
/// In the characteristic frame the cone of `(t, x)` is the triangle
/// `{σ ≤ τ₀, μ ≤ λ₀, σ + μ ≥ 0}` and the shifted cones move the apex by `ε`
/// along one or both axes. The integral splits into four polygons on each of
/// which a fixed subset of kernels is active:
///
/// * diamond `[τ₀-ε, τ₀] × [λ₀-ε, λ₀]`: `Γ` only;
/// * strip `λ₀-ε ≤ μ ≤ λ₀, σ ≤ τ₀-ε`: `Γ - Γ₁`;
/// * strip `τ₀-ε ≤ σ ≤ τ₀, μ ≤ λ₀-ε`: `Γ - Γ₂`;
/// * bulk `σ ≤ τ₀-ε, μ ≤ λ₀-ε`: all four.
pub fn kernel_second_difference_lp(a: f64, p: f64, t: f64, x: f64, eps: f64) -> Result<f64> {
    Ok(kernel_second_difference_parts(a, p, t, x, eps)?.total())
}

/// Per-region contributions to [`kernel_second_difference_lp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelRegions {
    pub diamond: f64,
    pub strip_tau: f64,
    pub strip_lambda: f64,
    pub bulk: f64,
}

impl KernelRegions {
    pub fn total(&self) -> f64 {
        self.diamond + self.strip_tau + self.strip_lambda + self.bulk
    }
}

pub fn kernel_second_difference_parts(
    a: f64,
    p: f64,
    t: f64,
    x: f64,
    eps: f64,
) -> Result<KernelRegions> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("exponent p must be >= 1, got {p}")));
    }
    if !(eps > 0.0 && SQRT_2 * eps < t) {
        return Err(Error::Geometry(format!(
            "need 0 < √2·eps < t, got eps={eps}, t={t}"
        )));
    }
    let apex = to_rotated(PhysPoint::new(t, x));
    let (tau0, lam0) = (apex.tau, apex.lambda);

    // kernel magnitudes as functions of u = σ + μ, i.e. s = u/√2
    let base = move |u: f64| 0.5 * (-0.5 * a * (t - u * FRAC_1_SQRT_2)).exp();
    let half_shift = (0.5 * a * eps * FRAC_1_SQRT_2).exp();
    let full_shift = (0.5 * a * eps * SQRT_2).exp();
    let pow = move |v: f64| v.abs().powf(p);

    let tol = 1e-13 * eps * eps;

    let diamond = integrate_rect(tau0 - eps, tau0, lam0 - eps, lam0, tol, |u| pow(base(u)));
    // Γ - Γ₁ on the λ-strip, σ from the initial line to τ₀ - ε
    let strip_lambda = integrate_outer(lam0 - eps, lam0, tol, |mu| (-mu, tau0 - eps), |u| {
        pow(base(u) * (1.0 - half_shift))
    });
    let strip_tau = integrate_outer(tau0 - eps, tau0, tol, |sigma| (-sigma, lam0 - eps), |u| {
        pow(base(u) * (1.0 - half_shift))
    });
    let bulk = integrate_outer(-(tau0 - eps), lam0 - eps, tol, |mu| (-mu, tau0 - eps), |u| {
        pow(base(u) * (1.0 - 2.0 * half_shift + full_shift))
    });
    Ok(KernelRegions {
        diamond,
        strip_tau,
        strip_lambda,
        bulk,
    })
}

/// `∫_{y0}^{y1} ∫_{lo(y)}^{hi(y)} g(x + y) dx dy`.
fn integrate_outer<B, G>(y0: f64, y1: f64, tol: f64, bounds: B, g: G) -> f64
where
    B: Fn(f64) -> (f64, f64),
    G: Fn(f64) -> f64 + Copy,
{
    if y1 <= y0 {
        return 0.0;
    }
    let inner = |y: f64| {
        let (lo, hi) = bounds(y);
        if hi <= lo {
            0.0
        } else {
            adaptive_simpson(|x| g(x + y), lo, hi, tol / (y1 - y0), 40)
        }
    };
    adaptive_simpson(inner, y0, y1, tol, 40)
}

fn integrate_rect<G>(x0: f64, x1: f64, y0: f64, y1: f64, tol: f64, g: G) -> f64
where
    G: Fn(f64) -> f64 + Copy,
{
    integrate_outer(y0, y1, tol, |_| (x0, x1), g)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
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
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
