//! Truncated energies `U_k`, the nonlinear recurrence and the Chebyshev chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::barriers::psi;
use super::{radii, sample_at, time_tolerance, window};
use crate::error::{invalid, Error, Result};
use crate::flow::Trajectory;
use crate::grid::{Field, SeminormWeights};

/// Floor below which `U_k` counts as zero.
pub const ENERGY_FLOOR: f64 = 1e-14;

/// `T_k = -1 - 2^{-k}`
pub fn truncation_time(k: usize) -> f64 {
    -1.0 - 0.5f64.powi(k as i32)
}

/// `L_k = (1 - 2^{-k}) / 2`
pub fn truncation_level(k: usize) -> f64 {
    0.5 * (1.0 - 0.5f64.powi(k as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEnergySequence {
    pub order: f64,
    pub k_max: usize,
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    /// `sup_t ∫ (w - ψ_{L_k})_+²`
    pub sup_terms: Vec<f64>,
    /// `∫ |(w - ψ_{L_k})_+|²_{H^{s/2}} dt`
    pub seminorm_terms: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 2.0 {
        Ok(())
    } else {
        Err(invalid("order", format!("order out of (0,2): {s}")))
    }
}

/// `w - ψ` at every node.
fn excess_over_psi(w: &Field, rad: &[f64], s: f64) -> Vec<f64> {
    w.values().iter().zip(rad).map(|(&v, &r)| v - psi(r, s)).collect()
}

/// Computes `U_0, ..., U_{k_max}` from a trajectory covering `[-2, 0]`.
///
/// Every `T_k` must be a sample time and the sample spacing on `[T_{k_max}, 0]`
/// must not exceed `2^{-k_max} / 4`.
pub fn truncated_energies(traj: &Trajectory, s: f64, k_max: usize) -> Result<TruncatedEnergySequence> {
    check_order(s)?;
    let tol = time_tolerance(traj);
    let end = sample_at(traj, 0.0, 0.0)?;
    let starts: Vec<usize> = (0..=k_max)
        .map(|k| sample_at(traj, truncation_time(k), 0.0))
        .collect::<Result<_>>()?;
    let max_gap = 0.25 * 0.5f64.powi(k_max as i32);
    let times = traj.times();
    for i in starts[k_max]..end {
        if times[i + 1] - times[i] > max_gap + tol {
            return Err(Error::UnderResolved(format!(
                "sample gap {} exceeds {max_gap} on [{}, 0]",
                times[i + 1] - times[i],
                truncation_time(k_max)
            )));
        }
    }
    let grid = *traj.grid();
    let vol = grid.cell_volume();
    let rad = radii(&grid);
    let weights = SeminormWeights::new(&grid, s, f64::INFINITY);
    let levels: Vec<f64> = (0..=k_max).map(truncation_level).collect();

    // per sample and level: (L² mass, seminorm) of the positive part
    let first = starts[0];
    let slices: Vec<Vec<(f64, f64)>> = (first..=end)
        .into_par_iter()
        .map(|i| {
            let a = excess_over_psi(&traj.fields()[i], &rad, s);
            levels
                .iter()
                .map(|&level| {
                    let l2 = a
                        .iter()
                        .map(|&v| {
                            let p = (v - level).max(0.0);
                            p * p
                        })
                        .sum::<f64>()
                        * vol;
                    (l2, weights.seminorm_positive_part(&a, level))
                })
                .collect()
        })
        .collect();

    let mut sup_terms = Vec::with_capacity(k_max + 1);
    let mut seminorm_terms = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let lo = starts[k] - first;
        let hi = end - first;
        let sup = slices[lo..=hi].iter().map(|v| v[k].0).fold(0.0, f64::max);
        // backward accumulation so that shorter windows are prefixes of longer ones
        let mut integral = 0.0;
        for i in (lo..hi).rev() {
            let dt = times[first + i + 1] - times[first + i];
            integral += 0.5 * dt * (slices[i][k].1 + slices[i + 1][k].1);
        }
        sup_terms.push(sup);
        seminorm_terms.push(integral);
    }
    let values = sup_terms.iter().zip(&seminorm_terms).map(|(a, b)| a + b).collect();
    Ok(TruncatedEnergySequence {
        order: s,
        k_max,
        times: (0..=k_max).map(truncation_time).collect(),
        levels,
        sup_terms,
        seminorm_terms,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    /// `1 + s/N`
    pub exponent: f64,
    /// `c_k = (U_k / U_{k-1}^{1+s/N})^{1/k}`; `None` where `U_{k-1} = 0` (and for `k = 0`).
    pub implied: Vec<Option<f64>>,
    pub c_bar: Option<f64>,
    /// `U_{k_max}` below the floor.
    pub below_floor: bool,
    /// Every `U_k` vanishes.
    pub vacuous: bool,
}

/// Implied constants of `U_k <= C^k U_{k-1}^{1+s/N}`.
pub fn check_recurrence(values: &[f64], s: f64, dimension: usize) -> RecurrenceReport {
    let exponent = 1.0 + s / dimension as f64;
    let mut implied = vec![None];
    for k in 1..values.len() {
        let prev = values[k - 1];
        implied.push(if prev > 0.0 {
            Some((values[k] / prev.powf(exponent)).powf(1.0 / k as f64))
        } else {
            None
        });
    }
    let c_bar = implied.iter().flatten().copied().reduce(f64::max);
    RecurrenceReport {
        exponent,
        implied,
        c_bar,
        below_floor: values.last().is_some_and(|&u| u < ENERGY_FLOOR),
        vacuous: values.iter().all(|&u| u == 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub k: usize,
    /// Exponents `1 + 2s/N`, `2(1 + s/N)`, `2s/N` of `2^{k+1}`.
    pub exponents: [f64; 3],
    /// Left sides `∫ u`, `|{u > 0}|`, `∫ u²` at the worst slice.
    pub lhs: [f64; 3],
    /// Matching right sides `(2^{k+1})^p ∫ v^{2(1+s/N)}`.
    pub rhs: [f64; 3],
    /// `min (rhs - lhs)` over all checked slices.
    pub min_slack: [f64; 3],
    pub slices: usize,
    pub passed: bool,
}

/// The three Chebyshev bounds for one field, with `u = (w - ψ_{L_k})_+` and
/// `v = (w - ψ_{L_{k-1}})_+`. Returns `(lhs, rhs)` per inequality.
///
/// Right sides are summed as `v^m (2^{k+1} v)^p`, which equals
/// `(2^{k+1})^p v^{2(1+s/N)}` and is termwise no smaller than the left side.
pub fn chebyshev_field(w: &Field, s: f64, k: usize) -> Result<[(f64, f64); 3]> {
    check_order(s)?;
    if k == 0 {
        return Err(invalid("k", "the chain compares levels k-1 and k, so k >= 1"));
    }
    let grid = *w.grid();
    let n = grid.dimension() as f64;
    let p = [1.0 + 2.0 * s / n, 2.0 * (1.0 + s / n), 2.0 * s / n];
    let scale = 2f64.powi(k as i32 + 1);
    let gap = 0.5f64.powi(k as i32 + 1);
    let level = truncation_level(k);
    let mut lhs = [0.0; 3];
    let mut rhs = [0.0; 3];
    for (i, &v) in w.values().iter().enumerate() {
        let d = v - psi(grid.distance_from_origin(i), s) - level;
        let u = d.max(0.0);
        let big = (d + gap).max(0.0);
        let x = scale * big;
        let l = [u, if u > 0.0 { 1.0 } else { 0.0 }, u * u];
        let r = [big * x.powf(p[0]), x.powf(p[1]), big * big * x.powf(p[2])];
        for m in 0..3 {
            lhs[m] += l[m];
            rhs[m] += r[m];
        }
    }
    let vol = grid.cell_volume();
    Ok([0, 1, 2].map(|m| (lhs[m] * vol, rhs[m] * vol)))
}

/// Checks the chain on every sample of `[T_k, 0]`.
pub fn chebyshev_chain(traj: &Trajectory, s: f64, k: usize) -> Result<InequalityReport> {
    let range = window(traj, truncation_time(k), 0.0)?;
    let fields: Vec<&Field> = traj.fields()[range].iter().collect();
    chebyshev_over(&fields, s, k)
}

pub(crate) fn chebyshev_over(fields: &[&Field], s: f64, k: usize) -> Result<InequalityReport> {
    let n = fields
        .first()
        .map(|f| f.grid().dimension() as f64)
        .unwrap_or(1.0);
    let per: Vec<[(f64, f64); 3]> = fields
        .par_iter()
        .map(|w| chebyshev_field(w, s, k))
        .collect::<Result<_>>()?;
    let mut min_slack = [f64::INFINITY; 3];
    let mut lhs = [0.0; 3];
    let mut rhs = [0.0; 3];
    for pairs in &per {
        for m in 0..3 {
            let slack = pairs[m].1 - pairs[m].0;
            if slack < min_slack[m] {
                min_slack[m] = slack;
                lhs[m] = pairs[m].0;
                rhs[m] = pairs[m].1;
            }
        }
    }
    if per.is_empty() {
        min_slack = [0.0; 3];
    }
    Ok(InequalityReport {
        k,
        exponents: [1.0 + 2.0 * s / n, 2.0 * (1.0 + s / n), 2.0 * s / n],
        lhs,
        rhs,
        min_slack,
        slices: per.len(),
        passed: min_slack.iter().all(|&v| v >= 0.0),
    })
}
