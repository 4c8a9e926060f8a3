//! Oscillation over nested parabolic cylinders and the fitted Hölder exponent.

use serde::{Deserialize, Serialize};

use super::{displacement_from, norm, CYLINDER_TOLERANCE};
use crate::error::{invalid, Error, Result};
use crate::flow::Trajectory;

pub const MIN_CYLINDER_NODES: usize = 8;
pub const MIN_CYLINDER_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub center_time: f64,
    pub center: Vec<f64>,
    pub scale: f64,
    pub order: f64,
    /// `sup - inf` over `(t₀ - K^{ks}, t₀] × B_{K^k}(x₀)`.
    pub osc: Vec<f64>,
    pub nodes: Vec<usize>,
    pub samples: Vec<usize>,
    /// Least-squares slope of `ln osc_k` against `k ln(K^s)`; `+∞` when degenerate.
    pub alpha: f64,
    pub r_squared: f64,
    /// Some `osc_k` vanished, so no exponent can be fitted.
    pub degenerate: bool,
}

/// Node indices of the closed ball `B_r(x₀)`.
pub fn ball_around(grid: &crate::grid::Grid, x0: &[f64], r: f64) -> Vec<usize> {
    let lim = r * (1.0 + CYLINDER_TOLERANCE);
    (0..grid.len())
        .filter(|&i| norm(displacement_from(grid, i, x0)) <= lim)
        .collect()
}

/// Sample indices with `t₀ - duration < t <= t₀`.
pub fn time_slab(traj: &Trajectory, t0: f64, duration: f64) -> Vec<usize> {
    let tol = 1e-12 * (1.0 + t0.abs());
    traj.times()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= t0 + tol && t0 - t < duration * (1.0 - CYLINDER_TOLERANCE))
        .map(|(k, _)| k)
        .collect()
}

pub fn oscillation_decay(
    traj: &Trajectory,
    t0: f64,
    x0: &[f64],
    scale: f64,
    levels: usize,
    s: f64,
) -> Result<OscillationReport> {
    if levels < 3 {
        return Err(invalid("levels", format!("need at least 3, got {levels}")));
    }
    if !(scale > 0.0 && scale < 1.0) {
        return Err(invalid("scale", format!("must lie in (0,1): {scale}")));
    }
    if !(s > 0.0 && s < 2.0) {
        return Err(invalid("s", format!("order out of (0,2): {s}")));
    }
    let grid = *traj.grid();
    if x0.len() != grid.dimension() {
        return Err(invalid("center", "coordinate count differs from the grid dimension"));
    }
    let mut osc = Vec::with_capacity(levels);
    let mut nodes = Vec::with_capacity(levels);
    let mut samples = Vec::with_capacity(levels);
    for k in 0..levels {
        let radius = scale.powi(k as i32);
        let ball = ball_around(&grid, x0, radius);
        let slab = time_slab(traj, t0, radius.powf(s));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &n in &slab {
            let v = traj.fields()[n].values();
            for &i in &ball {
                lo = lo.min(v[i]);
                hi = hi.max(v[i]);
            }
        }
        nodes.push(ball.len());
        samples.push(slab.len());
        osc.push(if ball.is_empty() || slab.is_empty() { 0.0 } else { hi - lo });
    }
    let (n_in, s_in) = (nodes[levels - 1], samples[levels - 1]);
    if n_in < MIN_CYLINDER_NODES || s_in < MIN_CYLINDER_SAMPLES {
        return Err(Error::UnderResolved(format!(
            "innermost cylinder has {n_in} nodes and {s_in} samples (need {MIN_CYLINDER_NODES} and {MIN_CYLINDER_SAMPLES})"
        )));
    }
    let degenerate = osc.iter().any(|&o| o <= 0.0);
    let (alpha, r_squared) = if degenerate {
        (f64::INFINITY, f64::NAN)
    } else {
        let step = scale.powf(s).ln();
        let xs: Vec<f64> = (0..levels).map(|k| k as f64 * step).collect();
        // ratios to osc_0 make the fit exactly invariant under w -> 2^j w
        let ys: Vec<f64> = osc.iter().map(|o| (o / osc[0]).ln()).collect();
        fit_line(&xs, &ys)
    };
    Ok(OscillationReport {
        center_time: t0,
        center: x0.to_vec(),
        scale,
        order: s,
        osc,
        nodes,
        samples,
        alpha,
        r_squared,
        degenerate,
    })
}

/// Least-squares slope and `R²` of `y` against `x`.
fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}
