//! Physical `(t, x)` and characteristic `(τ, λ)` frames.
//!
//! The characteristic frame is the `-45°` rotation of the physical one:
//!
//! ```text
//! τ = (t - x)/√2,   λ = (t + x)/√2
//! t = (τ + λ)/√2,   x = (λ - τ)/√2
//! ```
//!
//! Light cones of the wave operator become coordinate quadrants, so the
//! lattice `τ_i = i/n`, `λ_j = j/n` is aligned with the characteristics.
//! Lattice indices are signed; the initial line `t = 0` is `i + j = 0`.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysPoint {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RotPoint {
    pub tau: f64,
    pub lambda: f64,
}

impl PhysPoint {
    pub fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }
}

impl RotPoint {
    pub fn new(tau: f64, lambda: f64) -> Self {
        Self { tau, lambda }
    }

    /// Physical time of the point, `(τ + λ)/√2`.
    pub fn time(&self) -> f64 {
        (self.tau + self.lambda) / SQRT_2
    }
}

pub fn to_rotated(p: PhysPoint) -> RotPoint {
    RotPoint {
        tau: (p.t - p.x) / SQRT_2,
        lambda: (p.t + p.x) / SQRT_2,
    }
}

pub fn to_physical(q: RotPoint) -> PhysPoint {
    PhysPoint {
        t: (q.tau + q.lambda) / SQRT_2,
        x: (q.lambda - q.tau) / SQRT_2,
    }
}

/// Uniform characteristic lattice with spacing `1/n`.
///
/// The window is `i ∈ [i_min, i_max]`, `j ∈ [j_min, j_max]` restricted to
/// `i + j ≥ 0`. The lower bounds are tied to the upper ones
/// (`i_min = -j_max`, `j_min = -i_max`) so that the window contains the full
/// domain of dependence of every point in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RotatedGrid {
    n: u32,
    i_max: i64,
    j_max: i64,
}

impl RotatedGrid {
    /// Window covering the domain of dependence of `[0, i_max/n] × [0, j_max/n]`.
    pub fn new(n: u32, i_max: i64, j_max: i64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Configuration("grid resolution must be positive".into()));
        }
        if i_max + j_max < 0 {
            return Err(Error::Configuration(format!(
                "empty window: i_max + j_max = {} < 0",
                i_max + j_max
            )));
        }
        Ok(Self { n, i_max, j_max })
    }

    /// Window covering the unit square `[0,1]²` in `(τ, λ)`: `i, j ∈ [-n, n]`.
    pub fn unit(n: u32) -> Result<Self> {
        Self::new(n, i64::from(n), i64::from(n))
    }

    /// Smallest window whose upper corner reaches `(tau_max, lambda_max)`.
    pub fn covering(n: u32, tau_max: f64, lambda_max: f64) -> Result<Self> {
        let nf = f64::from(n);
        Self::new(n, (tau_max * nf).ceil() as i64, (lambda_max * nf).ceil() as i64)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn eps(&self) -> f64 {
        1.0 / f64::from(self.n)
    }

    pub fn i_min(&self) -> i64 {
        -self.j_max
    }

    pub fn i_max(&self) -> i64 {
        self.i_max
    }

    pub fn j_min(&self) -> i64 {
        -self.i_max
    }

    pub fn j_max(&self) -> i64 {
        self.j_max
    }

    pub fn width(&self) -> usize {
        (self.j_max - self.j_min() + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.i_max - self.i_min() + 1) as usize
    }

    pub fn contains(&self, i: i64, j: i64) -> bool {
        i + j >= 0 && i >= self.i_min() && i <= self.i_max && j >= self.j_min() && j <= self.j_max
    }

    /// Whether the cell with bottom vertex `(i, j)` lies in the window.
    pub fn contains_cell(&self, i: i64, j: i64) -> bool {
        i + j >= 0 && i >= self.i_min() && i < self.i_max && j >= self.j_min() && j < self.j_max
    }

    /// Row-major offset of `(i, j)` in a dense `height × width` buffer.
    pub fn offset(&self, i: i64, j: i64) -> usize {
        (i - self.i_min()) as usize * self.width() + (j - self.j_min()) as usize
    }

    pub fn point(&self, i: i64, j: i64) -> RotPoint {
        let h = self.eps();
        RotPoint::new(i as f64 * h, j as f64 * h)
    }

    /// Converts an increment to a whole number of lattice steps, rejecting
    /// anything that is not grid aligned.
    pub fn steps(&self, eps: f64) -> Result<i64> {
        let scaled = eps * f64::from(self.n);
        let k = scaled.round();
        if !scaled.is_finite() || (scaled - k).abs() > 1e-9 * scaled.abs().max(1.0) {
            return Err(Error::NotGridAligned { eps, n: self.n });
        }
        Ok(k as i64)
    }

    /// Lattice index of a grid-aligned point.
    pub fn index_of(&self, q: RotPoint) -> Result<(i64, i64)> {
        let i = self.steps(q.tau)?;
        let j = self.steps(q.lambda)?;
        if !self.contains(i, j) {
            return Err(Error::Index { i, j, what: "grid window" });
        }
        Ok((i, j))
    }
}

/// A real-valued field on the characteristic plane.
pub trait RotField {
    fn eval(&self, q: RotPoint) -> Result<f64>;
}

impl<F> RotField for F
where
    F: Fn(RotPoint) -> f64,
{
    fn eval(&self, q: RotPoint) -> Result<f64> {
        Ok(self(q))
    }
}

/// `δ^{(1)}_{±ε} f(τ, λ) = f(τ ± ε, λ) - f(τ, λ)`.
pub fn delta1<F: RotField + ?Sized>(f: &F, q: RotPoint, eps: f64, sign: Sign) -> Result<f64> {
    let shifted = RotPoint::new(q.tau + sign.apply(eps), q.lambda);
    Ok(f.eval(shifted)? - f.eval(q)?)
}

/// `δ^{(2)}_ε f(τ, λ) = f(τ, λ + ε) - f(τ, λ)`.
pub fn delta2<F: RotField + ?Sized>(f: &F, q: RotPoint, eps: f64) -> Result<f64> {
    let shifted = RotPoint::new(q.tau, q.lambda + eps);
    Ok(f.eval(shifted)? - f.eval(q)?)
}

/// Rectangular increment `δ^{(1)}_{±ε} δ^{(2)}_ε f(τ, λ)`.
pub fn second_diff<F: RotField + ?Sized>(f: &F, q: RotPoint, eps: f64, sign: Sign) -> Result<f64> {
    let tau_s = q.tau + sign.apply(eps);
    let lam_s = q.lambda + eps;
    let a = f.eval(RotPoint::new(tau_s, lam_s))?;
    let b = f.eval(RotPoint::new(tau_s, q.lambda))?;
    let c = f.eval(RotPoint::new(q.tau, lam_s))?;
    let d = f.eval(q)?;
    Ok(a - b - c + d)
}

/// Which of the two original-coordinate stencils to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhysStencil {
    /// `f(t,x+2ε) - f(t-ε,x+ε) - f(t+ε,x+ε) + f(t,x)`
    Spatial,
    /// `f(t+2ε,x) - f(t+ε,x-ε) - f(t+ε,x+ε) + f(t,x)`
    Temporal,
}

impl PhysStencil {
    /// The characteristic-frame sign of `δ^{(1)}` the stencil maps onto.
    pub fn rotated_sign(self) -> Sign {
        match self {
            PhysStencil::Spatial => Sign::Minus,
            PhysStencil::Temporal => Sign::Plus,
        }
    }

    /// `k` in `Δ^{(k)}_ε`.
    pub fn k(self) -> u8 {
        match self {
            PhysStencil::Spatial => 1,
            PhysStencil::Temporal => 2,
        }
    }

    pub fn from_k(k: u8) -> Result<Self> {
        match k {
            1 => Ok(PhysStencil::Spatial),
            2 => Ok(PhysStencil::Temporal),
            other => Err(Error::Domain(format!("stencil index must be 1 or 2, got {other}"))),
        }
    }
}

/// `Δ^{(k)}_ε f(t, x)` evaluated through the characteristic frame.
///
/// Both stencils are rectangles in `(τ, λ)` of side `√2 ε`: `Δ^{(1)}` is
/// `δ^{(1)}_{-√2ε} δ^{(2)}_{√2ε}` and `Δ^{(2)}` is `δ^{(1)}_{+√2ε} δ^{(2)}_{√2ε}`
/// at the rotated image of `(t, x)`.
pub fn original_coord_diff<F: RotField + ?Sized>(
    f_rot: &F,
    p: PhysPoint,
    eps: f64,
    stencil: PhysStencil,
) -> Result<f64> {
    second_diff(f_rot, to_rotated(p), SQRT_2 * eps, stencil.rotated_sign())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Sign::Plus => v,
            Sign::Minus => -v,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rotation_examples() {
        let q = to_rotated(PhysPoint::new(SQRT_2, 0.0));
        assert!(close(q.tau, 1.0, 1e-15) && close(q.lambda, 1.0, 1e-15));
        let q = to_rotated(PhysPoint::new(0.0, 0.0));
        assert_eq!((q.tau, q.lambda), (0.0, 0.0));
        let q = to_rotated(PhysPoint::new(1.0, 1.0));
        assert!(close(q.tau, 0.0, 1e-15) && close(q.lambda, SQRT_2, 1e-15));

        let p = to_physical(RotPoint::new(1.0, 1.0));
        assert!(close(p.t, SQRT_2, 1e-15) && close(p.x, 0.0, 1e-15));
        let p = to_physical(RotPoint::new(0.0, 0.0));
        assert_eq!((p.t, p.x), (0.0, 0.0));
        let p = to_physical(to_rotated(PhysPoint::new(0.3, -0.7)));
        assert!(close(p.t, 0.3, 1e-14) && close(p.x, -0.7, 1e-14));
    }

    #[test]
    fn difference_operator_examples() {
        let q = RotPoint::new(0.3, 0.4);
        let eps = 0.125;
        let constant = |_: RotPoint| 2.5;
        assert_eq!(delta1(&constant, q, eps, Sign::Plus).unwrap(), 0.0);
        assert_eq!(delta2(&constant, q, eps).unwrap(), 0.0);

        let tau = |q: RotPoint| q.tau;
        assert!(close(delta1(&tau, q, eps, Sign::Plus).unwrap(), eps, 1e-15));

        let bilinear = |q: RotPoint| q.tau * q.lambda;
        assert!(close(second_diff(&bilinear, q, eps, Sign::Plus).unwrap(), eps * eps, 1e-15));
        // composing the two first differences gives the same rectangle
        let composed = {
            let d2 = |p: RotPoint| delta2(&bilinear, p, eps).unwrap();
            delta1(&d2, q, eps, Sign::Plus).unwrap()
        };
        assert!(close(composed, eps * eps, 1e-15));

        let affine = |q: RotPoint| 3.0 * q.tau - 2.0 * q.lambda + 1.0;
        assert!(close(second_diff(&affine, q, eps, Sign::Minus).unwrap(), 0.0, 1e-15));
    }

    #[test]
    fn original_coordinate_stencils() {
        let eps = 0.01;
        let p = PhysPoint::new(0.6, 0.1);
        let phys = |p: PhysPoint| p.t * p.t - p.x * p.x;
        let rot = |q: RotPoint| phys(to_physical(q));

        // direct four-point evaluation of the spatial stencil
        let direct = phys(PhysPoint::new(p.t, p.x + 2.0 * eps))
            - phys(PhysPoint::new(p.t - eps, p.x + eps))
            - phys(PhysPoint::new(p.t + eps, p.x + eps))
            + phys(p);
        // t² - x² = 2τλ, so the stencil is 2·(-√2ε)(√2ε)
        assert!(close(direct, -4.0 * eps * eps, 1e-14));
        let mapped = original_coord_diff(&rot, p, eps, PhysStencil::Spatial).unwrap();
        assert!(close(mapped, direct, 1e-12));

        let affine = |q: RotPoint| {
            let p = to_physical(q);
            1.0 + 2.0 * p.t - 0.5 * p.x
        };
        for stencil in [PhysStencil::Spatial, PhysStencil::Temporal] {
            assert!(close(original_coord_diff(&affine, p, eps, stencil).unwrap(), 0.0, 1e-13));
        }
    }

    #[test]
    fn grid_alignment_is_enforced() {
        let g = RotatedGrid::unit(16).unwrap();
        assert_eq!(g.steps(0.125).unwrap(), 2);
        assert!(matches!(g.steps(0.1), Err(Error::NotGridAligned { .. })));
        assert!(g.index_of(RotPoint::new(-0.5, 0.25)).is_err());
        assert_eq!(g.index_of(RotPoint::new(-0.25, 0.5)).unwrap(), (-4, 8));
        assert_eq!(g.i_min(), -16);
        assert_eq!(g.width(), 33);
    }

    fn smooth(p: PhysPoint) -> f64 {
        (1.3 * p.t).sin() * (0.7 * p.x).cos() + p.t * p.x * p.x
    }

    proptest! {
        #[test]
        fn rotation_is_an_isometry(t in 0.0f64..10.0, x in -10.0f64..10.0) {
            let q = to_rotated(PhysPoint::new(t, x));
            let lhs = t * t + x * x;
            let rhs = q.tau * q.tau + q.lambda * q.lambda;
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.max(1.0));
            prop_assert!(q.tau + q.lambda >= -1e-15);
            let back = to_physical(q);
            prop_assert!((back.t - t).abs() <= 1e-14 * t.abs().max(1.0));
            prop_assert!((back.x - x).abs() <= 1e-14 * x.abs().max(1.0));
        }

        #[test]
        fn second_diff_kills_one_variable_functions(
            tau in -1.0f64..1.0, lambda in -1.0f64..1.0, eps in 1e-3f64..0.5, c in -3.0f64..3.0
        ) {
            let q = RotPoint::new(tau, lambda);
            let g = |q: RotPoint| (c * q.tau).sin() + q.lambda.powi(3) - (q.lambda * c).exp();
            let d = second_diff(&g, q, eps, Sign::Plus).unwrap();
            prop_assert!(d.abs() < 1e-12);
            let d = second_diff(&g, q, eps, Sign::Minus).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn stencil_mapping_matches_direct_sum(
            t in 0.1f64..2.0, x in -1.0f64..1.0, eps in 1e-3f64..0.05
        ) {
            let p = PhysPoint::new(t, x);
            let rot = |q: RotPoint| smooth(to_physical(q));
            let spatial = smooth(PhysPoint::new(t, x + 2.0 * eps))
                - smooth(PhysPoint::new(t - eps, x + eps))
                - smooth(PhysPoint::new(t + eps, x + eps))
                + smooth(p);
            let temporal = smooth(PhysPoint::new(t + 2.0 * eps, x))
                - smooth(PhysPoint::new(t + eps, x - eps))
                - smooth(PhysPoint::new(t + eps, x + eps))
                + smooth(p);
            let s = original_coord_diff(&rot, p, eps, PhysStencil::Spatial).unwrap();
            let tt = original_coord_diff(&rot, p, eps, PhysStencil::Temporal).unwrap();
            prop_assert!((s - spatial).abs() < 1e-12);
            prop_assert!((tt - temporal).abs() < 1e-12);
        }
    }
}
