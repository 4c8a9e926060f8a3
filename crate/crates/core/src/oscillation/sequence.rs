//! The normalized rescaling sequence and the oscillation-reduction lemma.

use serde::{Deserialize, Serialize};

use super::decay::{ball_around, time_slab};
use super::rescale::parabolic_rescale;
use crate::degiorgi::barriers::psi_eps_lambda;
use crate::degiorgi::{unit_ball_volume, Verdict, Witness};
use crate::degiorgi::{ball, displacement, radii, window};
use crate::error::{invalid, Result};
use crate::flow::Trajectory;

/// Lower floor on the Lemma 3 exponent `ε`.
pub const EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Constants {
    /// `⌈|(-3,0) × B₃| / γ⌉`
    pub k0: u32,
    /// `(s/4) λ^{2k₀}`, floored at [`EPS_FLOOR`].
    pub eps: f64,
    pub eps_floor_binds: bool,
    /// `λ^{2k₀} / 2`, usually far below what a run exhibits.
    pub lambda_star: f64,
}

pub fn lemma3_constants(s: f64, lambda: f64, gamma: f64, dimension: usize) -> Result<Lemma3Constants> {
    for (name, v) in [("lambda", lambda), ("gamma", gamma)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(name, format!("must lie in (0,1): {v}")));
        }
    }
    let ball3 = unit_ball_volume(dimension) * 3f64.powi(dimension as i32);
    let k0 = (3.0 * ball3 / gamma).ceil() as u32;
    let pow = lambda.powf(2.0 * k0 as f64);
    let raw = 0.25 * s * pow;
    Ok(Lemma3Constants {
        k0,
        eps: raw.max(EPS_FLOOR),
        eps_floor_binds: raw < EPS_FLOOR,
        lambda_star: 0.5 * pow,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub eps: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    /// `sup - inf` over `[-1, 0] × B₁`.
    pub oscillation: f64,
    pub bound: f64,
    pub verdict: Verdict,
}

/// First point where `|w| > 1 + ψ_{ε,λ}` on `[-3, 0]`.
fn envelope_violation(traj: &Trajectory, s: f64, lambda: f64, eps: f64) -> Result<Option<Witness>> {
    let range = window(traj, -3.0, 0.0)?;
    let grid = *traj.grid();
    let bar: Vec<f64> = radii(&grid)
        .iter()
        .map(|&r| 1.0 + psi_eps_lambda(r, s, lambda, eps))
        .collect();
    for k in range {
        let w = traj.fields()[k].values();
        if let Some(i) = (0..w.len()).find(|&i| w[i].abs() > bar[i]) {
            return Ok(Some(Witness {
                t: traj.times()[k],
                x: displacement(&grid, i),
                value: w[i],
                bound: bar[i],
            }));
        }
    }
    Ok(None)
}

/// `(t, node, value)`.
type Extreme = (f64, usize, f64);

/// Minimum and maximum over `[-1, 0] × B₁`.
fn core_extremes(traj: &Trajectory) -> Result<(Extreme, Extreme)> {
    let nodes = ball(traj.grid(), 1.0);
    let (mut lo, mut hi) = ((0.0, 0usize, f64::INFINITY), (0.0, 0usize, f64::NEG_INFINITY));
    for k in window(traj, -1.0, 0.0)? {
        let w = traj.fields()[k].values();
        for &i in &nodes {
            if w[i] < lo.2 {
                lo = (traj.times()[k], i, w[i]);
            }
            if w[i] > hi.2 {
                hi = (traj.times()[k], i, w[i]);
            }
        }
    }
    Ok((lo, hi))
}

/// `sup - inf` of `w` over `[-1, 0] × B₁`.
pub fn lemma3_oscillation(traj: &Trajectory) -> Result<f64> {
    let (lo, hi) = core_extremes(traj)?;
    Ok(hi.2 - lo.2)
}

/// Checks `osc_{[-1,0]×B₁} w <= 2 - λ*` for `w` inside the Lemma 3 envelope on `[-3, 0]`.
pub fn verify_lemma3(traj: &Trajectory, s: f64, eps: f64, lambda: f64, lambda_star: f64) -> Result<Lemma3Report> {
    for (name, v) in [("eps", eps), ("lambda", lambda), ("lambda_star", lambda_star)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(name, format!("must lie in (0,1): {v}")));
        }
    }
    let bound = 2.0 - lambda_star;
    let grid = *traj.grid();
    let (lo, hi) = core_extremes(traj)?;
    let oscillation = hi.2 - lo.2;
    let verdict = if let Some(w) = envelope_violation(traj, s, lambda, eps)? {
        Verdict::HypothesisViolated(w)
    } else if oscillation > bound {
        Verdict::Counterexample(Witness {
            t: hi.0,
            x: displacement(&grid, hi.1),
            value: oscillation,
            bound,
        })
    } else {
        Verdict::Pass
    };
    Ok(Lemma3Report {
        eps,
        lambda,
        lambda_star,
        oscillation,
        bound,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub scale: f64,
    pub lambda_star: f64,
    /// `w̄_k`, node/time mean over `(-1, 0] × B₁` of the k-th term.
    pub means: Vec<f64>,
    /// `sup |w_k|` over `(-3, 0] ×` torus of the view.
    pub sup_norms: Vec<f64>,
    /// First term leaving `[-1 - ψ_{ε,λ}, 1 + ψ_{ε,λ}]`.
    pub envelope_violation: Option<usize>,
    /// Number of terms that could be formed before the run or the lattice ran out.
    pub terms: usize,
}

/// `w_1 = w / sup|w|`, `w_{k+1}(τ, ξ) = (w_k(K^s τ, K ξ) - w̄_k) / (1 - λ*/4)` for a run
/// centred at `(0, 0)` and covering `[-3, 0]`.
///
/// Term `k` is an affine image of the parabolic view at scale `K^k`, so no resampling
/// error accumulates. Terms stop when the window leaves the run or `B₁` of the view
/// holds fewer than two nodes.
#[allow(clippy::too_many_arguments)]
pub fn rescaling_sequence(
    traj: &Trajectory,
    s: f64,
    eps: f64,
    lambda: f64,
    lambda_star: f64,
    scale: f64,
    max_terms: usize,
) -> Result<SequenceReport> {
    for (name, v) in [
        ("eps", eps),
        ("lambda", lambda),
        ("lambda_star", lambda_star),
        ("scale", scale),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(name, format!("must lie in (0,1): {v}")));
        }
    }
    let x0 = vec![0.0; traj.grid().dimension()];
    let shrink = 1.0 / (1.0 - 0.25 * lambda_star);
    let (mut a, mut b) = (1.0, 0.0);
    let mut means = Vec::new();
    let mut sup_norms = Vec::new();
    let mut envelope_violation = None;
    for k in 0..max_terms {
        let view = match parabolic_rescale(traj, 0.0, &x0, scale.powi(k as i32), s, (-3.0, 0.0)) {
            Ok(v) => v,
            Err(crate::Error::WindowOutOfRange(_)) => break,
            Err(e) => return Err(e),
        };
        let vt = &view.trajectory;
        let grid = *vt.grid();
        let core = ball_around(&grid, &x0, 1.0);
        if core.len() < 2 {
            break;
        }
        if k == 0 {
            let sup = vt.fields().iter().map(|f| f.sup_norm()).fold(0.0, f64::max);
            a = if sup > 0.0 { 1.0 / sup } else { 1.0 };
        }
        let bar: Vec<f64> = (0..grid.len())
            .map(|i| 1.0 + psi_eps_lambda(super::norm(super::displacement_from(&grid, i, &x0)), s, lambda, eps))
            .collect();
        let mut sup = 0.0f64;
        for f in vt.fields() {
            for (i, &v) in f.values().iter().enumerate() {
                let u = a * v + b;
                sup = sup.max(u.abs());
                if envelope_violation.is_none() && u.abs() > bar[i] {
                    envelope_violation = Some(k);
                }
            }
        }
        let slab = time_slab(vt, 0.0, 1.0);
        let mut total = 0.0;
        for &n in &slab {
            let v = vt.fields()[n].values();
            total += core.iter().map(|&i| v[i]).sum::<f64>();
        }
        let mean = a * total / (slab.len() * core.len()).max(1) as f64 + b;
        means.push(mean);
        sup_norms.push(sup);
        a *= shrink;
        b = (b - mean) * shrink;
    }
    Ok(SequenceReport {
        scale,
        lambda_star,
        terms: means.len(),
        means,
        sup_norms,
        envelope_violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierScalingReport {
    pub holds: bool,
    /// Largest `ψ(K r)/(1 - λ*/2) - ψ(r)` over the scanned radii.
    pub worst_excess: f64,
    pub worst_radius: f64,
}

/// Scans `ψ_{ε,λ}(K r) / (1 - λ*/2) <= ψ_{ε,λ}(r)` for `r ∈ [1/K, r_max]`.
pub fn barrier_scaling_check(
    s: f64,
    eps: f64,
    lambda: f64,
    lambda_star: f64,
    scale: f64,
    r_max: f64,
    points: usize,
) -> BarrierScalingReport {
    let r_min = 1.0 / scale;
    let factor = 1.0 / (1.0 - 0.5 * lambda_star);
    let mut worst = (f64::NEG_INFINITY, r_min);
    let n = points.max(2);
    for j in 0..n {
        // geometric spacing covers the logarithmic growth of ψ
        let r = r_min * (r_max / r_min).powf(j as f64 / (n - 1) as f64);
        let excess = factor * psi_eps_lambda(scale * r, s, lambda, eps) - psi_eps_lambda(r, s, lambda, eps);
        if excess > worst.0 {
            worst = (excess, r);
        }
    }
    BarrierScalingReport {
        holds: worst.0 <= 0.0,
        worst_excess: worst.0,
        worst_radius: worst.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid};

    fn traj_of(f: impl Fn(f64, f64) -> f64) -> Trajectory {
        let g = Grid::new(1, 16.0, 128).unwrap();
        let times: Vec<f64> = (0..=96).map(|k| -3.0 + k as f64 / 32.0).collect();
        let fields = times
            .iter()
            .map(|&t| Field::from_fn(g, |x| f(t, if x[0] >= 8.0 { x[0] - 16.0 } else { x[0] })))
            .collect();
        Trajectory::from_samples(times, fields).unwrap()
    }

    #[test]
    fn zero_field_passes_lemma3() {
        let r = verify_lemma3(&traj_of(|_, _| 0.0), 1.0, 1e-3, 0.25, 0.1).unwrap();
        assert_eq!(r.oscillation, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn alternating_envelope_is_flagged() {
        let (s, lam, eps) = (1.0, 0.25, 1e-3);
        let tr = traj_of(|t, x| {
            let sign = if ((t * 32.0).round() as i64) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + psi_eps_lambda(x.abs(), s, lam, eps))
        });
        let r = verify_lemma3(&tr, s, eps, lam, 0.1).unwrap();
        assert_eq!(r.oscillation, 2.0);
        assert!(matches!(r.verdict, Verdict::Counterexample(_)));
    }

    #[test]
    fn hypothesis_is_checked_first() {
        let r = verify_lemma3(&traj_of(|_, _| 1.5), 1.0, 1e-3, 0.25, 0.1).unwrap();
        assert!(matches!(r.verdict, Verdict::HypothesisViolated(_)));
    }

    #[test]
    fn sequence_of_zero_and_one() {
        let z = rescaling_sequence(&traj_of(|_, _| 0.0), 1.0, 1e-3, 0.25, 0.2, 0.7, 4).unwrap();
        assert!(z.means.iter().all(|&m| m == 0.0) && z.envelope_violation.is_none());
        let one = rescaling_sequence(&traj_of(|_, _| 1.0), 1.0, 1e-3, 0.25, 0.2, 0.7, 4).unwrap();
        assert_eq!(one.means[0], 1.0);
        assert!(one.means[1..].iter().all(|&m| m == 0.0));
        assert!(one.sup_norms[1..].iter().all(|&m| m == 0.0));
        assert_eq!(one.terms, 4);
    }

    #[test]
    fn sequence_stops_when_the_lattice_runs_out() {
        let r = rescaling_sequence(&traj_of(|t, x| (x + t).sin()), 1.0, 1e-3, 0.25, 0.2, 0.5, 20).unwrap();
        assert!(r.terms < 20 && r.terms >= 3);
    }

    #[test]
    fn lemma3_constants_floor_eps() {
        let c = lemma3_constants(1.0, 0.25, 0.05, 1).unwrap();
        assert_eq!(c.k0, 360);
        assert!(c.eps_floor_binds && c.eps == EPS_FLOOR);
        let c = lemma3_constants(1.0, 0.9, 0.9, 1).unwrap();
        assert_eq!(c.k0, 20);
        assert!(!c.eps_floor_binds);
        assert!((c.eps - 0.25 * 0.9f64.powi(40)).abs() < 1e-15);
    }

    #[test]
    fn barrier_scaling_is_reported() {
        let r = barrier_scaling_check(1.0, 1e-3, 0.25, 0.1, 0.7, 1e4, 400);
        assert!(r.worst_excess.is_finite());
        let tight = barrier_scaling_check(1.0, 1e-3, 0.25, 1e-9, 0.7, 300.0, 50);
        assert!(tight.holds);
    }
}
