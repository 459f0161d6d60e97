//! Characteristic-grid marching for the damped stochastic Klein–Gordon
//! equation with zero initial data, plus a brute-force Picard oracle.
//!
//! Writing the operator as `(□ + a∂_t + a²/4) u = F(u) Ẇ + b(u)` with
//! `b(u) = (a²/4 - m²) u`, the mild solution uses the critical kernel
//! `Γ = ½ e^{-a(t-s)/2} 1_{cone}`. Over one lattice cell the exponential
//! factor of `Γ` moves by exactly `β = e^{-aε/(2√2)}`, so
//!
//! ```text
//! v(top) - β v(left) - β v(right) + β² v(bottom) = ∫_cell Γ(top - ·) [F(v) dW + b(v) ds dy]
//! ```
//!
//! holds exactly; only the integral over the cell itself is approximated,
//! with the integrand frozen at the bottom vertex and the kernel at its value
//! `½` at the top vertex.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coords::{RotField, RotPoint, RotatedGrid};
use crate::error::{Error, Result};
use crate::greens::{critical_kernel, PhysParams};
use crate::noise::NoiseField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum DiffusionCoefficient {
    /// `F ≡ 1`
    ConstantOne,
    /// `F(u) = α + βu`
    Affine { alpha: f64, beta: f64 },
    /// `F(u) = c₀ + c₁ sin u`
    ShiftedSine { c0: f64, c1: f64 },
    /// `F(u) = clamp(u, -M₀, M₀) + c₂`
    ClippedLinear { m0: f64, c2: f64 },
}

impl DiffusionCoefficient {
    pub const IDS: [&'static str; 4] = ["constant_one", "affine", "shifted_sine", "clipped_linear"];

    /// Builds a coefficient from its menu id and positional parameters;
    /// missing parameters take the documented defaults.
    ///
    /// | id | parameters | defaults |
    /// |----|------------|----------|
    /// | `constant_one` | none | |
    /// | `affine` | `α, β` | `1, 0.5` |
    /// | `shifted_sine` | `c₀, c₁` | `2, 1` |
    /// | `clipped_linear` | `M₀, c₂` | `1, 1.5` |
    pub fn from_id(id: &str, params: &[f64]) -> Result<Self> {
        let arg = |k: usize, default: f64| params.get(k).copied().unwrap_or(default);
        let max_params = match id {
            "constant_one" => 0,
            _ => 2,
        };
        if params.len() > max_params {
            return Err(Error::Configuration(format!(
                "diffusion '{id}' takes at most {max_params} parameters, got {}",
                params.len()
            )));
        }
        let f = match id {
            "constant_one" => Self::ConstantOne,
            "affine" => Self::Affine {
                alpha: arg(0, 1.0),
                beta: arg(1, 0.5),
            },
            "shifted_sine" => Self::ShiftedSine {
                c0: arg(0, 2.0),
                c1: arg(1, 1.0),
            },
            "clipped_linear" => Self::ClippedLinear {
                m0: arg(0, 1.0),
                c2: arg(1, 1.5),
            },
            other => {
                return Err(Error::Configuration(format!(
                    "unknown diffusion '{other}', expected one of {:?}",
                    Self::IDS
                )))
            }
        };
        if let Self::ClippedLinear { m0, .. } = f {
            if m0 < 0.0 {
                return Err(Error::Configuration("clipped_linear needs M0 >= 0".into()));
            }
        }
        Ok(f)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::ConstantOne => "constant_one",
            Self::Affine { .. } => "affine",
            Self::ShiftedSine { .. } => "shifted_sine",
            Self::ClippedLinear { .. } => "clipped_linear",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::ConstantOne => vec![],
            Self::Affine { alpha, beta } => vec![alpha, beta],
            Self::ShiftedSine { c0, c1 } => vec![c0, c1],
            Self::ClippedLinear { m0, c2 } => vec![m0, c2],
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Self::ConstantOne => 1.0,
            Self::Affine { alpha, beta } => alpha + beta * u,
            Self::ShiftedSine { c0, c1 } => c0 + c1 * u.sin(),
            Self::ClippedLinear { m0, c2 } => u.clamp(-m0, m0) + c2,
        }
    }

    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Self::ConstantOne => 0.0,
            Self::Affine { beta, .. } => beta.abs(),
            Self::ShiftedSine { c1, .. } => c1.abs(),
            Self::ClippedLinear { m0, .. } => {
                if m0 > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Linear drift `b(u) = (a²/4 - m²) u` left by the reduction to critical damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCoefficient {
    pub coefficient: f64,
}

impl DriftCoefficient {
    pub fn from_params(params: &PhysParams) -> Self {
        Self {
            coefficient: params.drift_coefficient(),
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.coefficient * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Nonlinear,
    Linear,
    DriftPart,
    CriticalPart,
}

/// Lattice values of a solution over a [`RotatedGrid`] window.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    grid: RotatedGrid,
    values: Vec<f64>,
    params: PhysParams,
    kind: FieldKind,
    /// Master seed of the driving noise, if the field was marched.
    noise_seed: Option<u64>,
}

impl FieldSample {
    pub fn grid(&self) -> &RotatedGrid {
        &self.grid
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn noise_seed(&self) -> Option<u64> {
        self.noise_seed
    }

    pub fn get(&self, i: i64, j: i64) -> Result<f64> {
        if !self.grid.contains(i, j) {
            return Err(Error::Index {
                i,
                j,
                what: "field window",
            });
        }
        Ok(self.values[self.grid.offset(i, j)])
    }

    /// Unchecked lattice access; `(i, j)` must be inside the window.
    #[inline]
    pub fn at(&self, i: i64, j: i64) -> f64 {
        debug_assert!(self.grid.contains(i, j));
        self.values[self.grid.offset(i, j)]
    }

    /// `(i, j, value)` over the window in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        let g = self.grid;
        (g.i_min()..=g.i_max()).flat_map(move |i| {
            ((-i).max(g.j_min())..=g.j_max()).map(move |j| (i, j, self.values[g.offset(i, j)]))
        })
    }

    /// Returns a copy scaled by `c`, keeping the grid and metadata.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// Builds a sample by evaluating `f` at every lattice point of `grid`.
    pub fn from_fn<G: Fn(RotPoint) -> f64>(
        grid: RotatedGrid,
        params: PhysParams,
        kind: FieldKind,
        f: G,
    ) -> Self {
        let mut values = vec![f64::NAN; grid.height() * grid.width()];
        for i in grid.i_min()..=grid.i_max() {
            for j in (-i).max(grid.j_min())..=grid.j_max() {
                values[grid.offset(i, j)] = f(grid.point(i, j));
            }
        }
        Self {
            grid,
            values,
            params,
            kind,
            noise_seed: None,
        }
    }

    /// CSV dump with columns `i,j,tau,lambda,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,tau,lambda,value")?;
        for (i, j, v) in self.iter() {
            let q = self.grid.point(i, j);
            writeln!(w, "{i},{j},{},{},{v:e}", q.tau, q.lambda)?;
        }
        Ok(())
    }
}

impl RotField for FieldSample {
    fn eval(&self, q: RotPoint) -> Result<f64> {
        let (i, j) = self.grid.index_of(q)?;
        Ok(self.at(i, j))
    }
}

/// One-step decay of the critical kernel along a characteristic.
pub fn step_decay(a: f64, h: f64) -> f64 {
    (-a * h / (2.0 * SQRT_2)).exp()
}

struct Stepper {
    beta: f64,
    beta2: f64,
    half_theta: f64,
    half_drift_area: f64,
}

impl Stepper {
    fn new(params: &PhysParams, h: f64, with_drift: bool) -> Self {
        let beta = step_decay(params.a, h);
        let drift = if with_drift { params.drift_coefficient() } else { 0.0 };
        Self {
            beta,
            beta2: beta * beta,
            half_theta: 0.5 * params.theta,
            half_drift_area: 0.5 * drift * h * h,
        }
    }
}

fn check_noise(params: &PhysParams, noise: &NoiseField) -> Result<()> {
    params.validate()?;
    let g = noise.grid();
    if g.i_max() + g.j_max() < 1 {
        return Err(Error::Configuration("window must reach the first layer".into()));
    }
    Ok(())
}

/// Core march. `coefficient_source` supplies the field at which `F` and `b`
/// are frozen (the field itself for a full march, an already marched field
/// for the split components).
fn march_with(
    params: &PhysParams,
    f: &DiffusionCoefficient,
    noise: &NoiseField,
    with_drift: bool,
    frozen: Option<&FieldSample>,
) -> Vec<f64> {
    let g = *noise.grid();
    let st = Stepper::new(params, g.eps(), with_drift);
    let width = g.width();
    let mut values = vec![f64::NAN; g.height() * width];
    let f0 = f.eval(0.0);

    for i in g.i_min()..=g.i_max() {
        let j_start = (-i).max(g.j_min());
        for j in j_start..=g.j_max() {
            let o = g.offset(i, j);
            let v = match i + j {
                0 => 0.0,
                1 => st.half_theta * f0 * noise.triangle_unchecked(i),
                _ => {
                    let below = o - width; // (i-1, j)
                    let bottom = below - 1; // (i-1, j-1)
                    let vb = values[bottom];
                    let coeff_at = match frozen {
                        Some(full) => full.values[bottom],
                        None => vb,
                    };
                    st.beta * (values[o - 1] + values[below]) - st.beta2 * vb
                        + st.half_theta * f.eval(coeff_at) * noise.cell_at_offset(bottom)
                        + st.half_drift_area * coeff_at
                }
            };
            values[o] = v;
        }
    }
    values
}

/// Marches the full nonlinear scheme on the noise field's window.
pub fn march(params: &PhysParams, f: &DiffusionCoefficient, noise: &NoiseField) -> Result<FieldSample> {
    check_noise(params, noise)?;
    let values = march_with(params, f, noise, true, None);
    Ok(FieldSample {
        grid: *noise.grid(),
        values,
        params: *params,
        kind: FieldKind::Nonlinear,
        noise_seed: Some(noise.master_seed()),
    })
}

/// `V`: the same march with `F ≡ 1`, `θ = 1` on the same noise.
pub fn march_linear(params: &PhysParams, noise: &NoiseField) -> Result<FieldSample> {
    let lin = params.with_theta(1.0);
    check_noise(&lin, noise)?;
    let values = march_with(&lin, &DiffusionCoefficient::ConstantOne, noise, true, None);
    Ok(FieldSample {
        grid: *noise.grid(),
        values,
        params: lin,
        kind: FieldKind::Linear,
        noise_seed: Some(noise.master_seed()),
    })
}

/// Split of `v` into the drift part `v_L` and the critical part `v_C`.
#[derive(Debug, Clone)]
pub struct SplitFields {
    pub full: FieldSample,
    pub drift: FieldSample,
    pub critical: FieldSample,
}

/// Marches `v`, then `v_C` (stochastic term only, `F` frozen on `v`), and
/// evaluates `v_L` as the kernel-weighted Riemann sum of `b(v)` over each
/// cone.
///
/// The cone sums are accumulated through the inclusion–exclusion identity
/// of the exponentially weighted cones rather than point by point;
/// [`drift_quadrature_at`] evaluates the same sum directly.
pub fn march_split(
    params: &PhysParams,
    f: &DiffusionCoefficient,
    noise: &NoiseField,
) -> Result<SplitFields> {
    let full = march(params, f, noise)?;
    let critical_values = march_with(params, f, noise, false, Some(&full));
    let drift_values = cone_sums(params, &full);
    let grid = *noise.grid();
    Ok(SplitFields {
        drift: FieldSample {
            grid,
            values: drift_values,
            params: *params,
            kind: FieldKind::DriftPart,
            noise_seed: Some(noise.master_seed()),
        },
        critical: FieldSample {
            grid,
            values: critical_values,
            params: *params,
            kind: FieldKind::CriticalPart,
            noise_seed: Some(noise.master_seed()),
        },
        full,
    })
}

fn cone_sums(params: &PhysParams, full: &FieldSample) -> Vec<f64> {
    let g = full.grid;
    let h = g.eps();
    let beta = step_decay(params.a, h);
    let b = DriftCoefficient::from_params(params);
    let width = g.width();
    let mut s = vec![f64::NAN; full.values.len()];
    for i in g.i_min()..=g.i_max() {
        for j in (-i).max(g.j_min())..=g.j_max() {
            let o = g.offset(i, j);
            s[o] = if i + j <= 1 {
                0.0
            } else {
                let below = o - width;
                let bottom = below - 1;
                beta * (s[o - 1] + s[below]) - beta * beta * s[bottom]
                    + 0.5 * b.eval(full.values[bottom]) * h * h
            };
        }
    }
    s
}

/// `v_L(i, j)` as an explicit sum over the cells of the cone of `(i, j)`,
/// each weighted by the kernel factor at the cell's top vertex.
pub fn drift_quadrature_at(params: &PhysParams, full: &FieldSample, i: i64, j: i64) -> Result<f64> {
    let g = full.grid;
    if !g.contains(i, j) {
        return Err(Error::Index {
            i,
            j,
            what: "field window",
        });
    }
    let h = g.eps();
    let b = DriftCoefficient::from_params(params);
    let t_p = g.point(i, j).time();
    let mut acc = 0.0;
    for ci in g.i_min()..i {
        for cj in (-ci).max(g.j_min())..j {
            let t_top = g.point(ci + 1, cj + 1).time();
            let kernel = 0.5 * (-0.5 * params.a * (t_p - t_top)).exp();
            acc += kernel * b.eval(full.at(ci, cj)) * h * h;
        }
    }
    Ok(acc)
}

/// Successive-difference trace of a Picard run.
#[derive(Debug, Clone)]
pub struct PicardTrace {
    pub field: FieldSample,
    /// `sup |u_{k+1} - u_k|` for each iteration.
    pub successive_differences: Vec<f64>,
}

pub const PICARD_MAX_RESOLUTION: u32 = 16;
pub const PICARD_MIN_ITERATIONS: usize = 8;

/// Brute-force fixed-point iteration of the discretised mild equation.
///
/// Each iterate is `u_{k+1}(P) = Σ_c Γ(P - centre_c) [b(u_k) ε² + θ F(u_k) ΔW_c]`
/// over the cells whose centre lies in the light cone of `P` (tested in
/// physical coordinates), plus the layer-1 triangles weighted by `Γ` at their
/// centroids. `u_k` is frozen at each cell's bottom vertex.
pub fn picard_oracle(
    params: &PhysParams,
    f: &DiffusionCoefficient,
    noise: &NoiseField,
    iterations: usize,
) -> Result<FieldSample> {
    Ok(picard_trace(params, f, noise, iterations)?.field)
}

pub fn picard_trace(
    params: &PhysParams,
    f: &DiffusionCoefficient,
    noise: &NoiseField,
    iterations: usize,
) -> Result<PicardTrace> {
    check_noise(params, noise)?;
    let g = *noise.grid();
    if g.n() > PICARD_MAX_RESOLUTION {
        return Err(Error::Configuration(format!(
            "picard oracle needs n <= {PICARD_MAX_RESOLUTION}, got {}",
            g.n()
        )));
    }
    if iterations < PICARD_MIN_ITERATIONS {
        return Err(Error::Configuration(format!(
            "picard oracle needs at least {PICARD_MIN_ITERATIONS} iterations"
        )));
    }
    let h = g.eps();
    let b = DriftCoefficient::from_params(params);

    struct Source {
        t: f64,
        x: f64,
        /// Lattice point at which the integrand is frozen.
        at: (i64, i64),
        area: f64,
        dw: f64,
    }
    let phys = |sigma: f64, mu: f64| ((sigma + mu) * FRAC_1_SQRT_2, (mu - sigma) * FRAC_1_SQRT_2);
    let mut sources = Vec::new();
    for (i, j, dw) in noise.cells() {
        let (t, x) = phys((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
        sources.push(Source {
            t,
            x,
            at: (i, j),
            area: h * h,
            dw,
        });
    }
    for (i, dw) in noise.triangles() {
        // vertices (i, -i), (i, 1-i), (i-1, 1-i)
        let (t, x) = phys((i as f64 - 1.0 / 3.0) * h, (2.0 / 3.0 - i as f64) * h);
        sources.push(Source {
            t,
            x,
            at: (i, -i),
            area: 0.5 * h * h,
            dw,
        });
    }

    let points: Vec<(i64, i64)> = (g.i_min()..=g.i_max())
        .flat_map(|i| ((-i).max(g.j_min())..=g.j_max()).map(move |j| (i, j)))
        .collect();
    // kernel weights are iteration independent
    let weights: Vec<Vec<(usize, f64)>> = points
        .iter()
        .map(|&(i, j)| {
            let p = g.point(i, j);
            let (tp, xp) = phys(p.tau, p.lambda);
            sources
                .iter()
                .enumerate()
                .filter_map(|(k, s)| {
                    let w = critical_kernel(params.a, tp - s.t, xp - s.x);
                    (w != 0.0 && s.t < tp).then_some((k, w))
                })
                .collect()
        })
        .collect();

    let mut u = vec![f64::NAN; g.height() * g.width()];
    for &(i, j) in &points {
        u[g.offset(i, j)] = 0.0;
    }
    let mut diffs = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let integrand: Vec<f64> = sources
            .iter()
            .map(|s| {
                let uk = u[g.offset(s.at.0, s.at.1)];
                b.eval(uk) * s.area + params.theta * f.eval(uk) * s.dw
            })
            .collect();
        let next: Vec<f64> = points
            .iter()
            .zip(&weights)
            .map(|(_, ws)| ws.iter().map(|&(s, w)| w * integrand[s]).sum())
            .collect();
        let mut sup = 0.0f64;
        for (&(i, j), v) in points.iter().zip(next) {
            let o = g.offset(i, j);
            sup = sup.max((v - u[o]).abs());
            u[o] = v;
        }
        if !sup.is_finite() {
            return Err(Error::OracleDivergence(format!("non-finite iterate at step {k}")));
        }
        let n = diffs.len();
        if n >= 4 && sup > 1e-10 && sup > diffs[n - 1] && diffs[n - 1] > diffs[n - 2] {
            return Err(Error::OracleDivergence(format!(
                "successive differences growing at step {k}: {:.3e} > {:.3e} > {:.3e}",
                sup,
                diffs[n - 1],
                diffs[n - 2]
            )));
        }
        diffs.push(sup);
    }
    Ok(PicardTrace {
        field: FieldSample {
            grid: g,
            values: u,
            params: *params,
            kind: FieldKind::Nonlinear,
            noise_seed: Some(noise.master_seed()),
        },
        successive_differences: diffs,
    })
}

/// Largest absolute difference over the common window.
pub fn sup_distance(a: &FieldSample, b: &FieldSample) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Coupling("fields live on different grids".into()));
    }
    Ok(a
        .iter()
        .map(|(i, j, v)| (v - b.at(i, j)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, m: f64, theta: f64) -> PhysParams {
        PhysParams::new(a, m, theta).unwrap()
    }

    fn sine() -> DiffusionCoefficient {
        DiffusionCoefficient::ShiftedSine { c0: 2.0, c1: 1.0 }
    }

    #[test]
    fn initial_line_is_exactly_zero() {
        let noise = NoiseField::generate(RotatedGrid::unit(32).unwrap(), 5);
        let v = march(&params(1.0, 0.3, 1.5), &sine(), &noise).unwrap();
        for (i, j, val) in v.iter() {
            if i + j == 0 {
                assert_eq!(val, 0.0);
            }
        }
    }

    #[test]
    fn undamped_massless_reduces_to_wave_scheme() {
        let noise = NoiseField::generate(RotatedGrid::unit(16).unwrap(), 3);
        let v = march_linear(&params(0.0, 0.0, 1.0), &noise).unwrap();
        let g = *noise.grid();
        for i in g.i_min() + 1..=g.i_max() {
            for j in (2 - i).max(g.j_min() + 1)..=g.j_max() {
                let expect = v.at(i, j - 1) + v.at(i - 1, j) - v.at(i - 1, j - 1)
                    + 0.5 * noise.increment_over_cell(i - 1, j - 1).unwrap();
                assert!((v.at(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let noise = NoiseField::zeros(RotatedGrid::unit(16).unwrap());
        let v = march(&params(1.0, 2.0, 1.0), &sine(), &noise).unwrap();
        assert!(v.iter().all(|(_, _, x)| x == 0.0));
        let o = picard_oracle(&params(1.0, 2.0, 1.0), &sine(), &noise, 8).unwrap();
        assert!(o.iter().all(|(_, _, x)| x == 0.0));
    }

    #[test]
    fn first_layer_variance() {
        let (theta, n) = (1.7, 32u32);
        let f = DiffusionCoefficient::Affine { alpha: 0.8, beta: 1.0 };
        let grid = RotatedGrid::new(n, 2, 2).unwrap();
        let reps = 40_000u64;
        let mut acc = 0.0;
        for s in 0..reps {
            let v = march(&params(0.7, 0.2, theta), &f, &NoiseField::generate(grid, s)).unwrap();
            acc += v.at(1, 0).powi(2);
        }
        let var = acc / reps as f64;
        let eps = 1.0 / f64::from(n);
        let expect = theta * theta * 0.64 * eps * eps / 8.0;
        assert!((var / expect - 1.0).abs() < 4.0 * (2.0 / reps as f64).sqrt(), "{var} vs {expect}");
    }

    #[test]
    fn linear_march_equals_constant_one_march() {
        let noise = NoiseField::generate(RotatedGrid::unit(32).unwrap(), 8);
        let p = params(1.0, 0.5, 1.0);
        let a = march(&p, &DiffusionCoefficient::ConstantOne, &noise).unwrap();
        let b = march_linear(&p.with_theta(3.0), &noise).unwrap();
        assert_eq!(sup_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn linearity_in_theta() {
        let noise = NoiseField::generate(RotatedGrid::unit(32).unwrap(), 2);
        let f = DiffusionCoefficient::ConstantOne;
        let one = march(&params(0.9, 0.1, 1.0), &f, &noise).unwrap();
        let two = march(&params(0.9, 0.1, 2.0), &f, &noise).unwrap();
        for (i, j, v) in one.iter() {
            assert_eq!(two.at(i, j), 2.0 * v);
        }
    }

    #[test]
    fn split_recombines() {
        let noise = NoiseField::generate(RotatedGrid::unit(32).unwrap(), 4);
        let p = params(1.0, 0.9, 1.0);
        let split = march_split(&p, &sine(), &noise).unwrap();
        let eps2 = noise.grid().eps().powi(2);
        for (i, j, v) in split.full.iter() {
            let sum = split.drift.at(i, j) + split.critical.at(i, j);
            assert!((sum - v).abs() <= 5.0 * eps2, "({i},{j})");
        }
        for (i, j) in [(5, 7), (32, 32), (-3, 10), (20, -4)] {
            let direct = drift_quadrature_at(&p, &split.full, i, j).unwrap();
            assert!((direct - split.drift.at(i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn critical_damping_has_no_drift_part() {
        let noise = NoiseField::generate(RotatedGrid::unit(16).unwrap(), 4);
        let split = march_split(&params(1.0, 0.5, 1.0), &sine(), &noise).unwrap();
        assert!(split.drift.iter().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn zero_diffusion_kills_everything() {
        let noise = NoiseField::generate(RotatedGrid::unit(16).unwrap(), 4);
        let f = DiffusionCoefficient::Affine { alpha: 0.0, beta: 0.0 };
        let split = march_split(&params(1.0, 0.9, 1.0), &f, &noise).unwrap();
        assert!(split.full.iter().all(|(_, _, v)| v == 0.0));
        assert!(split.critical.iter().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn picard_matches_wave_scheme_exactly_when_kernel_is_flat() {
        let noise = NoiseField::generate(RotatedGrid::unit(8).unwrap(), 21);
        let p = params(0.0, 0.0, 1.0);
        let lin = march_linear(&p, &noise).unwrap();
        let oracle = picard_oracle(&p, &DiffusionCoefficient::ConstantOne, &noise, 8).unwrap();
        let eps2 = noise.grid().eps().powi(2);
        assert!(sup_distance(&lin, &oracle).unwrap() <= 10.0 * eps2);
    }

    #[test]
    fn picard_contracts() {
        let noise = NoiseField::generate(RotatedGrid::unit(8).unwrap(), 5);
        let trace = picard_trace(&params(1.0, 0.3, 1.0), &sine(), &noise, 12).unwrap();
        let d = &trace.successive_differences;
        for k in 3..d.len() - 1 {
            if d[k] > 1e-14 {
                assert!(d[k + 1] / d[k] < 0.5, "k={k}: {d:?}");
            }
        }
    }

    #[test]
    fn picard_rejects_bad_configuration() {
        let noise = NoiseField::generate(RotatedGrid::unit(32).unwrap(), 5);
        assert!(picard_oracle(&params(1.0, 0.3, 1.0), &sine(), &noise, 8).is_err());
        let noise = NoiseField::generate(RotatedGrid::unit(8).unwrap(), 5);
        assert!(picard_oracle(&params(1.0, 0.3, 1.0), &sine(), &noise, 3).is_err());
    }

    #[test]
    fn diffusion_menu() {
        assert!(DiffusionCoefficient::from_id("nope", &[]).is_err());
        assert!(DiffusionCoefficient::from_id("constant_one", &[1.0]).is_err());
        let f = DiffusionCoefficient::from_id("shifted_sine", &[]).unwrap();
        assert_eq!(f, sine());
        for id in DiffusionCoefficient::IDS {
            let f = DiffusionCoefficient::from_id(id, &[]).unwrap();
            assert_eq!(f.id(), id);
            let l = f.lipschitz_constant();
            let xs: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
            for &x in &xs {
                for &y in &xs {
                    assert!((f.eval(x) - f.eval(y)).abs() <= l * (x - y).abs() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_point() {
        let noise = NoiseField::generate(RotatedGrid::unit(4).unwrap(), 1);
        let v = march_linear(&params(1.0, 0.5, 1.0), &noise).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, v.iter().count());
        assert!(text.starts_with("i,j,tau,lambda,value\n"));
    }

    #[test]
    fn field_lookup_by_rotated_point() {
        let noise = NoiseField::generate(RotatedGrid::unit(8).unwrap(), 1);
        let v = march_linear(&params(1.0, 0.5, 1.0), &noise).unwrap();
        assert_eq!(v.eval(RotPoint::new(0.25, 0.5)).unwrap(), v.at(2, 4));
        assert!(v.eval(RotPoint::new(0.3, 0.5)).is_err());
        assert!(v.eval(RotPoint::new(-0.5, 0.25)).is_err());
    }
}
