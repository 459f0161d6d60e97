//! Statistics of simulated fields: local-linearization remainders, Monte
//! Carlo `L^p` norms, quadratic variations and the diffusion estimator.

use rayon::prelude::*;
use serde::Serialize;

use crate::coords::{original_coord_diff, second_diff, PhysPoint, PhysStencil, RotField, RotPoint, Sign};
use crate::error::{Error, Result};
use crate::greens::PhysParams;
use crate::noise::NoiseField;
use crate::solver::{march_linear, DiffusionCoefficient, FieldKind, FieldSample};
use crate::stats::pairwise_sum;

/// Minimum replication count accepted by [`lp_norm_mc`].
pub const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderSample {
    pub eps: f64,
    pub point: RotPoint,
    pub sign: Sign,
    pub value: f64,
}

fn check_coupling(v: &FieldSample, big_v: &FieldSample) -> Result<()> {
    if v.grid() != big_v.grid() {
        return Err(Error::Coupling(format!(
            "fields live on different grids: {:?} vs {:?}",
            v.grid(),
            big_v.grid()
        )));
    }
    if v.noise_seed() != big_v.noise_seed() {
        return Err(Error::Coupling(format!(
            "fields driven by different noise: {:?} vs {:?}",
            v.noise_seed(),
            big_v.noise_seed()
        )));
    }
    if big_v.kind() != FieldKind::Linear {
        return Err(Error::Coupling(format!(
            "second field must be the linear solution, got {:?}",
            big_v.kind()
        )));
    }
    Ok(())
}

/// `δ^{(1)}_{±ε} δ^{(2)}_ε v(q) - F(v(q)) δ^{(1)}_{±ε} δ^{(2)}_ε V(q)`.
pub fn remainder(
    v: &FieldSample,
    big_v: &FieldSample,
    f: &DiffusionCoefficient,
    q: RotPoint,
    eps: f64,
    sign: Sign,
) -> Result<f64> {
    check_coupling(v, big_v)?;
    v.grid().steps(eps)?;
    let dv = second_diff(v, q, eps, sign)?;
    let dbig = second_diff(big_v, q, eps, sign)?;
    Ok(dv - f.eval(v.eval(q)?) * dbig)
}

pub fn remainder_sample(
    v: &FieldSample,
    big_v: &FieldSample,
    f: &DiffusionCoefficient,
    q: RotPoint,
    eps: f64,
    sign: Sign,
) -> Result<RemainderSample> {
    Ok(RemainderSample {
        eps,
        point: q,
        sign,
        value: remainder(v, big_v, f, q, eps, sign)?,
    })
}

/// Remainder of the original-coordinate stencil `Δ^{(k)}_ε` at `(t, x)`.
pub fn original_remainder(
    v: &FieldSample,
    big_v: &FieldSample,
    f: &DiffusionCoefficient,
    p: PhysPoint,
    eps: f64,
    stencil: PhysStencil,
) -> Result<f64> {
    check_coupling(v, big_v)?;
    let dv = original_coord_diff(v, p, eps, stencil)?;
    let dbig = original_coord_diff(big_v, p, eps, stencil)?;
    let centre = crate::coords::to_rotated(p);
    Ok(dv - f.eval(v.eval(centre)?) * dbig)
}

/// Monte Carlo `L^p` norm with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub replications: usize,
}

/// `((1/R) Σ |x_r|^p)^{1/p}` from precomputed samples.
pub fn lp_norm_from_samples(xs: &[f64], p: f64) -> Result<MomentEstimate> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("moment order must be >= 1, got {p}")));
    }
    if xs.is_empty() {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("sample value {bad}")));
    }
    let powers: Vec<f64> = xs.iter().map(|x| x.abs().powf(p)).collect();
    let m = crate::stats::mean(&powers);
    let se_m = crate::stats::std_error(&powers);
    let estimate = m.powf(1.0 / p);
    // d/dm m^{1/p} = m^{1/p - 1} / p
    let std_error = if m > 0.0 {
        estimate / (p * m) * se_m
    } else {
        0.0
    };
    Ok(MomentEstimate {
        estimate,
        std_error,
        replications: xs.len(),
    })
}

/// Runs `sampler(r)` for `r = 0..replications` in parallel and estimates the
/// `L^p` norm. Samples are reduced in replication order.
pub fn lp_norm_mc<S>(sampler: S, p: f64, replications: usize) -> Result<MomentEstimate>
where
    S: Fn(u64) -> Result<f64> + Sync,
{
    if replications < MIN_REPLICATIONS {
        return Err(Error::Domain(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    let xs: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(&sampler)
        .collect::<Result<_>>()?;
    lp_norm_from_samples(&xs, p)
}

fn observation_stride(field: &FieldSample, n_obs: u32) -> Result<i64> {
    let g = field.grid();
    if n_obs == 0 || !g.n().is_multiple_of(n_obs) {
        return Err(Error::Domain(format!(
            "observation resolution {n_obs} does not divide grid resolution {}",
            g.n()
        )));
    }
    let n = i64::from(g.n());
    if g.i_max() < n || g.j_max() < n {
        return Err(Error::Domain(format!(
            "window reaches ({}, {}), quadratic variation needs ({n}, {n})",
            g.i_max(),
            g.j_max()
        )));
    }
    Ok(n / i64::from(n_obs))
}

/// `Q_N` at the field's own resolution.
pub fn quad_var(field: &FieldSample) -> Result<f64> {
    quad_var_at(field, field.grid().n())
}

/// `Q_N` from the sub-lattice of spacing `1/n_obs`.
pub fn quad_var_at(field: &FieldSample, n_obs: u32) -> Result<f64> {
    let s = observation_stride(field, n_obs)?;
    let n_obs = i64::from(n_obs);
    let rows: Vec<f64> = (0..n_obs)
        .map(|a| {
            let i = a * s;
            let terms: Vec<f64> = (0..n_obs)
                .map(|b| {
                    let j = b * s;
                    let d = field.at(i + s, j + s) - field.at(i + s, j) - field.at(i, j + s)
                        + field.at(i, j);
                    d * d
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

fn f_squared_sum(field: &FieldSample, f: &DiffusionCoefficient, n_obs: u32) -> Result<f64> {
    let s = observation_stride(field, n_obs)?;
    let n_obs = i64::from(n_obs);
    let rows: Vec<f64> = (0..n_obs)
        .map(|a| {
            let terms: Vec<f64> = (0..n_obs)
                .map(|b| f.eval(field.at(a * s, b * s)).powi(2))
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

/// `¼ N^{-2} Σ_{i,j<N} F²(v(τ_i, λ_j))`.
pub fn limit_functional(field: &FieldSample, f: &DiffusionCoefficient) -> Result<f64> {
    limit_functional_at(field, f, field.grid().n())
}

pub fn limit_functional_at(field: &FieldSample, f: &DiffusionCoefficient, n_obs: u32) -> Result<f64> {
    let n = f64::from(n_obs);
    Ok(0.25 * f_squared_sum(field, f, n_obs)? / (n * n))
}

/// `θ̂_N = sqrt(4 N² Q_N / Σ F²(v))`.
pub fn estimate_theta(field: &FieldSample, f: &DiffusionCoefficient) -> Result<f64> {
    estimate_theta_at(field, f, field.grid().n())
}

pub fn estimate_theta_at(field: &FieldSample, f: &DiffusionCoefficient, n_obs: u32) -> Result<f64> {
    let denom = f_squared_sum(field, f, n_obs)?;
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "diffusion coefficient vanishes on every observation".into(),
        ));
    }
    let n = f64::from(n_obs);
    Ok((4.0 * n * n * quad_var_at(field, n_obs)? / denom).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadVarReport {
    pub n: u32,
    pub q_n: f64,
    pub limit_value: f64,
    pub abs_error: f64,
}

pub fn quad_var_report(field: &FieldSample, f: &DiffusionCoefficient, n_obs: u32) -> Result<QuadVarReport> {
    let q_n = quad_var_at(field, n_obs)?;
    let limit_value = limit_functional_at(field, f, n_obs)?;
    Ok(QuadVarReport {
        n: n_obs,
        q_n,
        limit_value,
        abs_error: (q_n - limit_value).abs(),
    })
}

/// Monte Carlo estimate of `‖δ^{(1)}_{±ε} δ^{(2)}_ε V(q)‖₂` for one `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearIncrementEstimate {
    pub eps: f64,
    /// Control-variate estimate of the norm.
    pub estimate: f64,
    pub std_error: f64,
    /// Plain sample estimate `sqrt(mean X²)` from the same draws.
    pub plain_estimate: f64,
    pub plain_std_error: f64,
}

impl LinearIncrementEstimate {
    pub fn deviation(&self) -> f64 {
        (self.estimate - 0.5 * self.eps).abs()
    }
}

/// `½ Σ ΔW` over the cells of the increment rectangle: the increment's
/// leading part, with second moment `ε²/4` exactly.
fn diamond_control(noise: &NoiseField, i: i64, j: i64, k: i64, sign: Sign) -> Result<f64> {
    let (i0, i1) = match sign {
        Sign::Plus => (i, i + k),
        Sign::Minus => (i - k, i),
    };
    let mut terms = Vec::with_capacity((k * k) as usize);
    for a in i0..i1 {
        for b in j..j + k {
            terms.push(noise.increment_over_cell(a, b)?);
        }
    }
    Ok(0.5 * pairwise_sum(&terms))
}

/// Nested sweep of [`linear_increment_l2`] over several `ε` sharing each
/// replication's noise field, simulated at resolution `n`.
///
/// Replication `r` uses master seed `master_seed + r`. The second moment is
/// estimated as `mean(X² - Y²) + ε²/4` with `Y` the rectangle's own noise
/// scaled by `½`; `X - Y` is of order `ε^{3/2}`, which removes most of the
/// sampling noise from the deviation `|estimate - ε/2|`.
pub fn linear_increment_sweep(
    params: &PhysParams,
    n: u32,
    eps_list: &[f64],
    point: RotPoint,
    sign: Sign,
    replications: usize,
    master_seed: u64,
) -> Result<Vec<LinearIncrementEstimate>> {
    if replications == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    if eps_list.is_empty() {
        return Err(Error::Domain("empty eps list".into()));
    }
    let eps_max = eps_list.iter().cloned().fold(0.0, f64::max);
    let tau_reach = point.tau + eps_max.max(0.0);
    let grid = crate::coords::RotatedGrid::covering(n, tau_reach, point.lambda + eps_max)?;
    let steps: Vec<i64> = eps_list
        .iter()
        .map(|&e| {
            let k = grid.steps(e)?;
            if k <= 0 {
                return Err(Error::Domain(format!("eps must be positive, got {e}")));
            }
            Ok(k)
        })
        .collect::<Result<_>>()?;
    let (i, j) = grid.index_of(point)?;

    let per_rep: Vec<Vec<(f64, f64)>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let noise = NoiseField::generate(grid, master_seed.wrapping_add(r));
            let big_v = march_linear(params, &noise)?;
            steps
                .iter()
                .zip(eps_list)
                .map(|(&k, &e)| {
                    let x = second_diff(&big_v, point, e, sign)?;
                    let y = diamond_control(&noise, i, j, k, sign)?;
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!("increment at eps {e}")));
                    }
                    Ok((x, y))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(eps_list.len());
    for (col, &eps) in eps_list.iter().enumerate() {
        let x2: Vec<f64> = per_rep.iter().map(|row| row[col].0.powi(2)).collect();
        let diff: Vec<f64> = per_rep
            .iter()
            .map(|row| row[col].0.powi(2) - row[col].1.powi(2))
            .collect();
        let plain = crate::stats::mean(&x2);
        let plain_se = crate::stats::std_error(&x2);
        let m = crate::stats::mean(&diff) + 0.25 * eps * eps;
        let m_se = crate::stats::std_error(&diff);
        if m <= 0.0 {
            return Err(Error::NonFinite(format!(
                "second-moment estimate {m} at eps {eps} is not positive"
            )));
        }
        out.push(LinearIncrementEstimate {
            eps,
            estimate: m.sqrt(),
            std_error: m_se / (2.0 * m.sqrt()),
            plain_estimate: plain.sqrt(),
            plain_std_error: plain_se / (2.0 * plain.sqrt()),
        });
    }
    Ok(out)
}

/// Single-`ε` estimate on the lattice of spacing `ε`.
pub fn linear_increment_l2(
    params: &PhysParams,
    eps: f64,
    point: RotPoint,
    replications: usize,
    master_seed: u64,
) -> Result<LinearIncrementEstimate> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1], got {eps}")));
    }
    let n = (1.0 / eps).round();
    if (n * eps - 1.0).abs() > 1e-12 {
        return Err(Error::NotGridAligned { eps, n: n as u32 });
    }
    let est = linear_increment_sweep(
        params,
        n as u32,
        &[eps],
        point,
        Sign::Plus,
        replications,
        master_seed,
    )?;
    Ok(est[0])
}
