//! Linearization by difference quotients: `w = D_e^h θ` of a nonlinear flow solves a
//! linear flow whose kernel `K^h` is built from `θ` itself.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{advance, run_flow, FlowProblem, Sampling, Stepper, Trajectory};
use crate::grid::{Field, Grid};
use crate::kernels::Kernel;
use crate::operator::{DiscreteOperator, Strategy};
use crate::potentials::Potential;
use crate::quadrature::GaussLegendre;

/// Eight nodes leave errors near 1e-3 for unit-size jumps, since `φ''` has poles close
/// to the real axis; 32 nodes reach 1e-13.
pub const DEFAULT_SIGMA_NODES: usize = 32;

/// Integer lattice shift `m` with `h = m h_x` (`m` may be negative, never zero).
pub fn lattice_shift(grid: &Grid, h: f64) -> Result<i64> {
    let hx = grid.spacing();
    let m = (h / hx).round();
    if !h.is_finite() || m == 0.0 || (m * hx - h).abs() > 1e-9 * hx {
        return Err(Error::NonLatticeStep { h, spacing: hx });
    }
    Ok(m as i64)
}

fn axis_offset(grid: &Grid, axis: usize, m: i64) -> Result<[i64; 2]> {
    if axis >= grid.dimension() {
        return Err(invalid(
            "axis",
            format!("axis {axis} out of range for dimension {}", grid.dimension()),
        ));
    }
    let mut off = [0; 2];
    off[axis] = m;
    Ok(off)
}

/// `(θ(· + h e) - θ(·)) / h` along lattice axis `axis`.
pub fn difference_quotient(theta: &Field, axis: usize, h: f64) -> Result<Field> {
    let grid = *theta.grid();
    let m = lattice_shift(&grid, h)?;
    let off = axis_offset(&grid, axis, m)?;
    let v = theta.values();
    let out = (0..grid.len())
        .map(|i| (v[grid.shifted(i, off)] - v[i]) / h)
        .collect();
    Field::new(grid, out)
}

/// `K^h(t, x, y) = K(x, y) ∫₀¹ φ''((1-σ)[θ(y)-θ(x)] + σ[θ(y+he)-θ(x+he)]) dσ`.
///
/// Positions are snapped to grid nodes; `θ` is the latest stored sample at or before `t`.
pub struct DerivedKernel {
    base: Arc<dyn Kernel>,
    potential: Arc<dyn Potential>,
    grid: Grid,
    times: Vec<f64>,
    fields: Vec<Field>,
    offset: [i64; 2],
    h: f64,
    quadrature: GaussLegendre,
}

impl std::fmt::Debug for DerivedKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DerivedKernel")
            .field("grid", &self.grid)
            .field("samples", &self.times.len())
            .field("offset", &self.offset)
            .field("h", &self.h)
            .field("sigma_nodes", &self.quadrature.len())
            .finish()
    }
}

pub fn derived_kernel(
    base: Arc<dyn Kernel>,
    potential: Arc<dyn Potential>,
    theta: &Trajectory,
    axis: usize,
    h: f64,
) -> Result<DerivedKernel> {
    let grid = *theta.grid();
    grid.check_kernel(base.as_ref())?;
    let m = lattice_shift(&grid, h)?;
    let offset = axis_offset(&grid, axis, m)?;
    Ok(DerivedKernel {
        base,
        potential,
        grid,
        times: theta.times().to_vec(),
        fields: theta.fields().to_vec(),
        offset,
        h,
        quadrature: GaussLegendre::new(DEFAULT_SIGMA_NODES),
    })
}

impl DerivedKernel {
    pub fn with_sigma_nodes(mut self, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(invalid("sigma_nodes", "need at least one node"));
        }
        self.quadrature = GaussLegendre::new(nodes);
        Ok(self)
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `∫₀¹ φ''((1-σ) a + σ b) dσ`.
    pub fn sigma_integral(&self, a: f64, b: f64) -> f64 {
        if let Some(c) = self.potential.constant_second() {
            return c;
        }
        self.quadrature
            .integrate(0.0, 1.0, |s| self.potential.second((1.0 - s) * a + s * b))
    }

    fn node_of(&self, x: &[f64]) -> usize {
        let hx = self.grid.spacing();
        let m = self.grid.points_per_axis() as i64;
        let mut mi = [0usize; 2];
        for (a, &xa) in x.iter().enumerate().take(self.grid.dimension()) {
            mi[a] = ((xa / hx).round() as i64).rem_euclid(m) as usize;
        }
        self.grid.flat_index(mi)
    }

    fn sample_index(&self, t: f64) -> usize {
        let tol = 1e-9 * (1.0 + t.abs());
        self.times.partition_point(|&s| s <= t + tol).saturating_sub(1)
    }
}

impl Kernel for DerivedKernel {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }
    fn order(&self) -> f64 {
        self.base.order()
    }
    fn ellipticity(&self) -> f64 {
        self.base.ellipticity()
    }
    fn truncation_radius(&self) -> f64 {
        self.base.truncation_radius()
    }
    fn time_key(&self, t: f64) -> i64 {
        self.sample_index(t) as i64
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
        let k = self.base.eval(t, x, y, r);
        if k == 0.0 {
            return 0.0;
        }
        if let Some(c) = self.potential.constant_second() {
            return if c == 1.0 { k } else { k * c };
        }
        let theta = self.fields[self.sample_index(t)].values();
        let (i, j) = (self.node_of(x), self.node_of(y));
        let a = theta[j] - theta[i];
        let b = theta[self.grid.shifted(j, self.offset)] - theta[self.grid.shifted(i, self.offset)];
        k * self.sigma_integral(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub axis: usize,
    pub h: f64,
    pub substeps: usize,
    pub steps: usize,
    /// `max_n ‖D_e^h θ(t_n) - w(t_n)‖_∞`.
    pub max_defect: f64,
    pub final_defect: f64,
    pub bitwise_equal: bool,
}

/// Runs the linear flow with `K^h` frozen at each stored `θ` sample, starting from
/// `D_e^h θ(t_0)`, and compares it with `D_e^h θ` at every later sample.
///
/// With `substeps = 1` the linear update reproduces the nonlinear one up to rounding;
/// `substeps > 1` measures the consistency of the frozen-kernel scheme.
pub fn verify_linearization(
    theta: &Trajectory,
    potential: Arc<dyn Potential>,
    base: Arc<dyn Kernel>,
    axis: usize,
    h: f64,
    substeps: usize,
) -> Result<TransferReport> {
    if theta.len() < 2 {
        return Err(Error::TrajectoryMismatch(
            "linearization needs at least two stored states".into(),
        ));
    }
    if substeps == 0 {
        return Err(invalid("substeps", "must be at least 1"));
    }
    let kernel = derived_kernel(base, potential, theta, axis, h)?;
    let grid = *theta.grid();
    let times = theta.times();
    let mut w = difference_quotient(theta.initial(), axis, h)?;
    let (mut max_defect, mut final_defect, mut bitwise) = (0.0f64, 0.0, true);
    for n in 0..times.len() - 1 {
        let op = DiscreteOperator::assemble(&kernel, &grid, times[n], Strategy::Banded)?;
        let dt = (times[n + 1] - times[n]) / substeps as f64;
        for _ in 0..substeps {
            w = advance(&op, None, &w, dt, Stepper::Euler)?;
        }
        let target = difference_quotient(&theta.fields()[n + 1], axis, h)?;
        let mut defect = 0.0f64;
        for (a, b) in target.values().iter().zip(w.values()) {
            defect = defect.max((a - b).abs());
            bitwise &= a.to_bits() == b.to_bits();
        }
        if !defect.is_finite() {
            return Err(Error::NonFiniteState { step: n + 1 });
        }
        max_defect = max_defect.max(defect);
        final_defect = defect;
    }
    Ok(TransferReport {
        axis,
        h,
        substeps,
        steps: times.len() - 1,
        max_defect,
        final_defect,
        bitwise_equal: bitwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub dts: Vec<f64>,
    pub defects: Vec<f64>,
    /// `log2(defect_j / defect_{j+1})` for successive halvings.
    pub orders: Vec<f64>,
}

impl RefinementReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Repeats [`verify_linearization`] on nonlinear Euler runs with `dt0, dt0/2, ...`.
#[allow(clippy::too_many_arguments)]
pub fn transfer_refinement(
    potential: Arc<dyn Potential>,
    base: Arc<dyn Kernel>,
    initial: &Field,
    t_end: f64,
    dt0: f64,
    levels: usize,
    axis: usize,
    h: f64,
    substeps: usize,
) -> Result<RefinementReport> {
    if levels < 2 {
        return Err(invalid("levels", "need at least two refinement levels"));
    }
    let mut dts = Vec::with_capacity(levels);
    let mut defects = Vec::with_capacity(levels);
    for j in 0..levels {
        let dt = dt0 / (1u64 << j) as f64;
        let problem = FlowProblem::nonlinear(potential.clone(), base.clone(), initial.clone(), 0.0, t_end)
            .with_dt(dt)
            .without_energy();
        let theta = run_flow(&problem, Sampling::EverySteps(1))?;
        let report = verify_linearization(&theta, potential.clone(), base.clone(), axis, h, substeps)?;
        dts.push(dt);
        defects.push(report.max_defect);
    }
    let orders = defects.windows(2).map(|p| (p[0] / p[1]).log2()).collect();
    Ok(RefinementReport { dts, defects, orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_kernel, KernelSpec};
    use crate::potentials::PotentialSpec;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn grid() -> Grid {
        Grid::new(1, 16.0, 128).unwrap()
    }

    #[test]
    fn quotient_of_constant_and_linear_fields() {
        let g = grid();
        let c = Field::constant(g, 3.5);
        assert!(difference_quotient(&c, 0, g.spacing()).unwrap().values().iter().all(|&v| v == 0.0));
        let lin = Field::from_fn(g, |x| 2.0 * x[0]);
        let h = 2.0 * g.spacing();
        let d = difference_quotient(&lin, 0, h).unwrap();
        // away from the seam the slope is recovered
        for i in 0..g.len() - 2 {
            assert!((d.values()[i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_off_lattice_steps_and_bad_axes() {
        let g = grid();
        let f = Field::zeros(g);
        assert!(matches!(
            difference_quotient(&f, 0, 0.3 * g.spacing()),
            Err(Error::NonLatticeStep { .. })
        ));
        assert!(difference_quotient(&f, 1, g.spacing()).is_err());
    }

    #[test]
    fn summation_by_parts_on_the_torus() {
        let g = Grid::new(2, 8.0, 16).unwrap();
        let mut rng = seeded_rng(5);
        let h = 3.0 * g.spacing();
        for _ in 0..100 {
            let f = Field::from_fn(g, |_| rng.gen_range(-1.0..1.0));
            let gg = Field::from_fn(g, |_| rng.gen_range(-1.0..1.0));
            for axis in 0..2 {
                let lhs = f.inner(&difference_quotient(&gg, axis, -h).unwrap()).unwrap();
                let rhs = -difference_quotient(&f, axis, h).unwrap().inner(&gg).unwrap();
                assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "{lhs} {rhs}");
            }
        }
    }

    fn theta_traj(potential: Arc<dyn Potential>, base: Arc<dyn Kernel>) -> Trajectory {
        let g = grid();
        let init = Field::from_fn(g, |x| (x[0] - 8.0).tanh() + 0.3 * (0.4 * x[0]).sin());
        let p = FlowProblem::nonlinear(potential, base, init, 0.0, 0.2).without_energy();
        run_flow(&p, Sampling::EverySteps(1)).unwrap()
    }

    #[test]
    fn quadratic_potential_reproduces_the_base_kernel_exactly() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(PotentialSpec::quadratic(4.0).unwrap());
        let traj = theta_traj(pot.clone(), base.clone());
        let k = derived_kernel(base.clone(), pot, &traj, 0, grid().spacing()).unwrap();
        let g = grid();
        for j in 1..40 {
            let (x, y) = (g.position(3), g.position(3 + j));
            let r = g.periodic_distance(3, 3 + j);
            assert_eq!(k.eval(0.1, &x[..1], &y[..1], r).to_bits(), base.eval(0.1, &x[..1], &y[..1], r).to_bits());
        }
    }

    #[test]
    fn sigma_quadrature_matches_riemann_oracle() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(PotentialSpec::smoothed_huber(4.0).unwrap());
        let traj = theta_traj(pot.clone(), base.clone());
        let k = derived_kernel(base, pot.clone(), &traj, 0, grid().spacing()).unwrap();
        let mut rng = seeded_rng(11);
        let n = 200_000;
        for _ in 0..10 {
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let riemann: f64 = (0..n)
                .map(|i| pot.second((1.0 - (i as f64 + 0.5) / n as f64) * a + (i as f64 + 0.5) / n as f64 * b))
                .sum::<f64>()
                / n as f64;
            assert!((k.sigma_integral(a, b) - riemann).abs() < 1e-10);
        }
    }

    #[test]
    fn derived_kernel_stays_inside_the_envelope_for_every_step() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(PotentialSpec::smoothed_huber(4.0).unwrap());
        let traj = theta_traj(pot.clone(), base.clone());
        for m in [1.0, 2.0, 4.0] {
            let k = derived_kernel(base.clone(), pot.clone(), &traj, 0, m * grid().spacing()).unwrap();
            let v = crate::grid::validate_kernel_on_grid(&k, &grid(), traj.times(), 2000, 3);
            assert!(v.passed(), "{v:?}");
        }
    }

    #[test]
    fn single_substep_transfer_is_exact_up_to_rounding() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(PotentialSpec::smoothed_huber(4.0).unwrap());
        let traj = theta_traj(pot.clone(), base.clone());
        let r = verify_linearization(&traj, pot, base, 0, grid().spacing(), 1).unwrap();
        assert!(r.max_defect < 1e-9, "{r:?}");
    }

    #[test]
    fn too_short_trajectory_is_rejected() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(PotentialSpec::quadratic(4.0).unwrap());
        let one = Trajectory::from_samples(vec![0.0], vec![Field::zeros(grid())]).unwrap();
        assert!(matches!(
            verify_linearization(&one, pot, base, 0, grid().spacing(), 1),
            Err(Error::TrajectoryMismatch(_))
        ));
    }
}
