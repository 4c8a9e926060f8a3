//! Truncated energies, level-set measures and detectors for the boundedness and
//! oscillation lemmas.
//!
//! All barriers are centered at the torus origin and evaluated at the periodic
//! distance from it. Space-time integrals use node counting in space and
//! trapezoidal weights over the sampled times.

pub mod barriers;
pub mod calibration;
pub mod energies;
pub mod lemmas;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::grid::Grid;

pub use barriers::{eval_barrier, BarrierFamily, BarrierKind};
pub use calibration::{CalibrationConstants, Provenance, Tagged};
pub use energies::{
    chebyshev_chain, chebyshev_field, check_recurrence, truncated_energies, truncation_level,
    truncation_time, InequalityReport, RecurrenceReport, TruncatedEnergySequence,
};
pub use lemmas::{
    level_set_measures, verify_corollary1, verify_corollary2, verify_lemma1, verify_lemma2,
    Branch, Corollary1Report, Corollary2Report, DichotomyReport, Lemma1Report, Lemma2Constants,
    MeasureTriple,
};

/// A located violation (or, for measure statements, the offending measure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    /// Empty for measure-valued witnesses.
    pub x: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "verdict")]
pub enum Verdict {
    Pass,
    /// The smallness hypothesis did not hold; nothing to check.
    Vacuous,
    Counterexample(Witness),
    HypothesisViolated(Witness),
}

impl Verdict {
    /// True unless a counterexample was found.
    pub fn is_consistent(&self) -> bool {
        !matches!(self, Verdict::Counterexample(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Vacuous => "vacuous",
            Verdict::Counterexample(_) => "counterexample",
            Verdict::HypothesisViolated(_) => "hypothesis-violated",
        }
    }
}

pub(crate) fn time_tolerance(traj: &Trajectory) -> f64 {
    1e-9 * (1.0 + traj.start().abs().max(traj.end().abs()))
}

/// Index of the sample at time `t`, or a coverage error for `[t, end]`.
pub(crate) fn sample_at(traj: &Trajectory, t: f64, end: f64) -> Result<usize> {
    traj.index_of(t, time_tolerance(traj))
        .ok_or(Error::InsufficientCoverage { start: t, end })
}

/// Sample indices of `[a, b]`; both endpoints must be sampled.
pub(crate) fn window(traj: &Trajectory, a: f64, b: f64) -> Result<Range<usize>> {
    let i = sample_at(traj, a, b)?;
    let j = sample_at(traj, b, b).map_err(|_| Error::InsufficientCoverage { start: a, end: b })?;
    Ok(i..j + 1)
}

/// Trapezoid weights for the samples `range`.
pub(crate) fn trapezoid_weights(times: &[f64], range: Range<usize>) -> Vec<f64> {
    let t = &times[range];
    let mut w = vec![0.0; t.len()];
    for k in 1..t.len() {
        let half = 0.5 * (t[k] - t[k - 1]);
        w[k - 1] += half;
        w[k] += half;
    }
    w
}

/// Periodic distance of every node from the origin.
pub(crate) fn radii(grid: &Grid) -> Vec<f64> {
    (0..grid.len()).map(|i| grid.distance_from_origin(i)).collect()
}

/// Node indices of the closed ball `B_r` around the origin.
pub(crate) fn ball(grid: &Grid, r: f64) -> Vec<usize> {
    let tol = 1e-12 * r.max(1.0);
    (0..grid.len())
        .filter(|&i| grid.distance_from_origin(i) <= r + tol)
        .collect()
}

pub(crate) fn displacement(grid: &Grid, i: usize) -> Vec<f64> {
    grid.displacement_from_origin(i)[..grid.dimension()].to_vec()
}

/// Volume of the unit ball in dimension 1 or 2.
pub fn unit_ball_volume(dimension: usize) -> f64 {
    if dimension == 1 {
        2.0
    } else {
        std::f64::consts::PI
    }
}
