//! Detectors for the boundedness lemma, its two corollaries and the mass-loss dichotomy.

use serde::{Deserialize, Serialize};

use super::barriers::{phi, psi, psi1, psi_lambda};
use super::{ball, displacement, radii, sample_at, time_tolerance, trapezoid_weights, unit_ball_volume, window, Verdict, Witness};
use crate::error::{invalid, Result};
use crate::flow::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `∫_{-2}^0 ∫ (w - ψ)_+²`
    pub hypothesis_integral: f64,
    pub eps0: f64,
    pub max_abs: f64,
    /// `ψ(L/2) >= 2 max|w|`: the torus is wide enough for the barrier to dominate.
    pub torus_valid: bool,
    pub verdict: Verdict,
}

/// Smallness integral and the first violation of `w <= 1/2 + ψ` on `[-1, 0]`,
/// independent of any threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Statistics {
    pub hypothesis_integral: f64,
    pub max_abs: f64,
    pub torus_valid: bool,
    pub violation: Option<Witness>,
}

pub fn lemma1_statistics(traj: &Trajectory, s: f64) -> Result<Lemma1Statistics> {
    let range = window(traj, -2.0, 0.0)?;
    let late = sample_at(traj, -1.0, 0.0)?;
    let grid = *traj.grid();
    let rad = radii(&grid);
    let bar: Vec<f64> = rad.iter().map(|&r| psi(r, s)).collect();
    let weights = trapezoid_weights(traj.times(), range.clone());
    let vol = grid.cell_volume();
    let mut integral = 0.0;
    let mut max_abs = 0.0f64;
    let mut violation = None;
    for (wt, i) in weights.iter().zip(range) {
        let w = traj.fields()[i].values();
        let slice: f64 = w
            .iter()
            .zip(&bar)
            .map(|(&v, &b)| {
                let p = (v - b).max(0.0);
                p * p
            })
            .sum();
        integral += wt * slice * vol;
        max_abs = max_abs.max(traj.fields()[i].sup_norm());
        if i >= late && violation.is_none() {
            if let Some(x) = (0..w.len()).find(|&x| w[x] > 0.5 + bar[x]) {
                violation = Some(Witness {
                    t: traj.times()[i],
                    x: displacement(&grid, x),
                    value: w[x],
                    bound: 0.5 + bar[x],
                });
            }
        }
    }
    Ok(Lemma1Statistics {
        hypothesis_integral: integral,
        max_abs,
        torus_valid: psi(0.5 * grid.side_length(), s) >= 2.0 * max_abs,
        violation,
    })
}

/// If `∫∫ (w - ψ)_+² <= eps0` on `[-2, 0]`, checks `w <= 1/2 + ψ` on `[-1, 0]`.
pub fn verify_lemma1(traj: &Trajectory, s: f64, eps0: f64) -> Result<Lemma1Report> {
    let st = lemma1_statistics(traj, s)?;
    let verdict = if st.hypothesis_integral > eps0 {
        Verdict::Vacuous
    } else {
        match st.violation {
            Some(w) => Verdict::Counterexample(w),
            None => Verdict::Pass,
        }
    };
    Ok(Lemma1Report {
        hypothesis_integral: st.hypothesis_integral,
        eps0,
        max_abs: st.max_abs,
        torus_valid: st.torus_valid,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Report {
    pub initial_l2: f64,
    pub eps0: f64,
    pub t0: Vec<f64>,
    /// `‖w⁰‖₂ / (2 √ε₀ (t₀/2)^{(N/s+1)/2})`
    pub bound: Vec<f64>,
    /// `sup_{t >= t₀, x} |w|`
    pub measured: Vec<f64>,
    /// `sup|w(t₀)| t₀^{(N/s+1)/2} / ‖w⁰‖₂`
    pub ratio: Vec<f64>,
    pub passed: bool,
}

/// Checks the `L² → L^∞` bound at each `t₀` (measured from the trajectory start).
pub fn verify_corollary1(traj: &Trajectory, s: f64, t0s: &[f64], eps0: f64) -> Result<Corollary1Report> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(invalid("eps0", format!("eps0 out of (0,1): {eps0}")));
    }
    let n = traj.grid().dimension() as f64;
    let expo = 0.5 * (n / s + 1.0);
    let l2 = traj.initial().l2_norm();
    let start = traj.start();
    let mut report = Corollary1Report {
        initial_l2: l2,
        eps0,
        t0: t0s.to_vec(),
        bound: Vec::new(),
        measured: Vec::new(),
        ratio: Vec::new(),
        passed: true,
    };
    for &t0 in t0s {
        if !(t0 > 0.0 && t0 < 2.0) {
            return Err(invalid("t0", format!("t0 out of (0,2): {t0}")));
        }
        let i = sample_at(traj, start + t0, traj.end())?;
        let bound = l2 / (2.0 * eps0.sqrt() * (0.5 * t0).powf(expo));
        let measured = traj.fields()[i..].iter().map(|w| w.sup_norm()).fold(0.0, f64::max);
        let at = traj.fields()[i].sup_norm();
        let ratio = if l2 > 0.0 { at * t0.powf(expo) / l2 } else { 0.0 };
        report.passed &= measured <= bound;
        report.bound.push(bound);
        report.measured.push(measured);
        report.ratio.push(ratio);
    }
    Ok(report)
}

/// Smallest `R >= 2` with `1 + ψ₁(R) <= ψ(R)`, i.e. `R = max(2, g^{4/s})`, `g` the golden ratio.
pub fn corollary2_radius(s: f64) -> f64 {
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    golden.powf(4.0 / s).max(2.0)
}

/// `R^{-(N+s)} (1 + ψ₁(2))^{-2} ε₀`
pub fn corollary2_delta(eps0: f64, s: f64, dimension: usize) -> f64 {
    let r = corollary2_radius(s);
    let a = 1.0 + psi1(2.0, s);
    r.powf(-(dimension as f64 + s)) * eps0 / (a * a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary2Report {
    /// `|{w > 0} ∩ ([-2, 0] × B₂)|`
    pub measure: f64,
    pub delta: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary2Statistics {
    pub measure: f64,
    pub envelope_violation: Option<Witness>,
    pub violation: Option<Witness>,
}

pub fn corollary2_statistics(traj: &Trajectory, s: f64) -> Result<Corollary2Statistics> {
    let range = window(traj, -2.0, 0.0)?;
    let late = sample_at(traj, -1.0, 0.0)?;
    let grid = *traj.grid();
    let rad = radii(&grid);
    let env: Vec<f64> = rad.iter().map(|&r| 1.0 + psi1(r, s)).collect();
    let b1 = ball(&grid, 1.0);
    let b2 = ball(&grid, 2.0);
    let weights = trapezoid_weights(traj.times(), range.clone());
    let vol = grid.cell_volume();
    let mut measure = 0.0;
    let mut envelope_violation = None;
    let mut violation = None;
    for (wt, i) in weights.iter().zip(range) {
        let w = traj.fields()[i].values();
        let t = traj.times()[i];
        let count = b2.iter().filter(|&&x| w[x] > 0.0).count();
        measure += wt * count as f64 * vol;
        if envelope_violation.is_none() {
            if let Some(x) = (0..w.len()).find(|&x| w[x] > env[x]) {
                envelope_violation = Some(Witness {
                    t,
                    x: displacement(&grid, x),
                    value: w[x],
                    bound: env[x],
                });
            }
        }
        if i >= late && violation.is_none() {
            if let Some(&x) = b1.iter().find(|&&x| w[x] > 0.5) {
                violation = Some(Witness {
                    t,
                    x: displacement(&grid, x),
                    value: w[x],
                    bound: 0.5,
                });
            }
        }
    }
    Ok(Corollary2Statistics {
        measure,
        envelope_violation,
        violation,
    })
}

/// Under `w <= 1 + ψ₁` and `|{w > 0} ∩ ([-2,0] × B₂)| <= δ`, checks `w <= 1/2` on `[-1,0] × B₁`.
pub fn verify_corollary2(traj: &Trajectory, s: f64, delta: f64) -> Result<Corollary2Report> {
    let st = corollary2_statistics(traj, s)?;
    let verdict = if let Some(w) = st.envelope_violation {
        Verdict::HypothesisViolated(w)
    } else if st.measure > delta {
        Verdict::Vacuous
    } else {
        match st.violation {
            Some(w) => Verdict::Counterexample(w),
            None => Verdict::Pass,
        }
    };
    Ok(Corollary2Report {
        measure: st.measure,
        delta,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureTriple {
    /// `|{w < φ₀} ∩ ((-3,-2) × B₁)|`
    pub below_phi0: f64,
    /// `|{w > φ₂} ∩ ((-2,0) × torus)|`
    pub above_phi2: f64,
    /// `|{φ₀ < w < φ₂} ∩ ((-3,0) × torus)|`
    pub between: f64,
}

pub fn level_set_measures(traj: &Trajectory, s: f64, lambda: f64) -> Result<MeasureTriple> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid("lambda", format!("lambda out of (0,1): {lambda}")));
    }
    let all = window(traj, -3.0, 0.0)?;
    let early = window(traj, -3.0, -2.0)?;
    let late = window(traj, -2.0, 0.0)?;
    let grid = *traj.grid();
    let rad = radii(&grid);
    let p0: Vec<f64> = rad.iter().map(|&r| phi(r, s, lambda, 0)).collect();
    let p2: Vec<f64> = rad.iter().map(|&r| phi(r, s, lambda, 2)).collect();
    let b1 = ball(&grid, 1.0);
    let vol = grid.cell_volume();
    let integrate = |range: std::ops::Range<usize>, count: &dyn Fn(&[f64]) -> usize| -> f64 {
        let weights = trapezoid_weights(traj.times(), range.clone());
        weights
            .iter()
            .zip(range)
            .map(|(wt, i)| wt * count(traj.fields()[i].values()) as f64 * vol)
            .sum()
    };
    Ok(MeasureTriple {
        below_phi0: integrate(early, &|w| b1.iter().filter(|&&x| w[x] < p0[x]).count()),
        above_phi2: integrate(late, &|w| (0..w.len()).filter(|&x| w[x] > p2[x]).count()),
        between: integrate(all, &|w| (0..w.len()).filter(|&x| p0[x] < w[x] && w[x] < p2[x]).count()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Constants {
    pub mu: f64,
    pub delta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `|{w > φ₂}| <= δ`
    Subcritical,
    /// `|{φ₀ < w < φ₂}| >= γ`
    MassLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub measures: MeasureTriple,
    pub constants: Lemma2Constants,
    pub branch: Option<Branch>,
    pub verdict: Verdict,
}

/// First point on `[-3, 0]` where `w > 1 + ψ_λ`.
pub fn lemma2_envelope_violation(traj: &Trajectory, s: f64, lambda: f64) -> Result<Option<Witness>> {
    let range = window(traj, -3.0, 0.0)?;
    let grid = *traj.grid();
    let env: Vec<f64> = radii(&grid).iter().map(|&r| 1.0 + psi_lambda(r, s, lambda)).collect();
    for i in range {
        let w = traj.fields()[i].values();
        if let Some(x) = (0..w.len()).find(|&x| w[x] > env[x]) {
            return Ok(Some(Witness {
                t: traj.times()[i],
                x: displacement(&grid, x),
                value: w[x],
                bound: env[x],
            }));
        }
    }
    Ok(None)
}

/// Checks the dichotomy: `|{w > φ₂}| <= δ` or `|{φ₀ < w < φ₂}| >= γ`.
pub fn verify_lemma2(traj: &Trajectory, s: f64, constants: Lemma2Constants) -> Result<DichotomyReport> {
    let measures = level_set_measures(traj, s, constants.lambda)?;
    let mut report = DichotomyReport {
        measures,
        constants,
        branch: None,
        verdict: Verdict::Pass,
    };
    if let Some(w) = lemma2_envelope_violation(traj, s, constants.lambda)? {
        report.verdict = Verdict::HypothesisViolated(w);
        return Ok(report);
    }
    if measures.below_phi0 < constants.mu {
        report.verdict = Verdict::HypothesisViolated(Witness {
            t: -3.0,
            x: Vec::new(),
            value: measures.below_phi0,
            bound: constants.mu,
        });
        return Ok(report);
    }
    if measures.above_phi2 <= constants.delta {
        report.branch = Some(Branch::Subcritical);
    } else if measures.between >= constants.gamma {
        report.branch = Some(Branch::MassLoss);
    } else {
        report.verdict = Verdict::Counterexample(Witness {
            t: -3.0,
            x: Vec::new(),
            value: measures.between,
            bound: constants.gamma,
        });
    }
    Ok(report)
}

/// The one explicit smallness condition on `λ`: `λ <= (μ / (4|B₁|))^8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaConstraint {
    pub lambda: f64,
    pub bound: f64,
    pub satisfied: bool,
}

pub fn lambda_constraint(lambda: f64, mu: f64, dimension: usize) -> LambdaConstraint {
    let bound = (mu / (4.0 * unit_ball_volume(dimension))).powi(8);
    LambdaConstraint {
        lambda,
        bound,
        satisfied: lambda <= bound,
    }
}

/// Tolerance-free sample lookup exposed for callers assembling custom windows.
pub fn has_sample(traj: &Trajectory, t: f64) -> bool {
    traj.index_of(t, time_tolerance(traj)).is_some()
}
