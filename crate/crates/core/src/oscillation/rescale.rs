//! Parabolic rescaling `v(τ, ξ) = w(t₀ + ρ^s τ, x₀ + ρ ξ)` and the kernel it solves with.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::flow::Trajectory;
use crate::grid::{Field, Grid};
use crate::kernels::Kernel;

/// A rescaled trajectory on the grid of side `L/ρ` with the same node count.
#[derive(Debug, Clone)]
pub struct RescaledView {
    pub trajectory: Trajectory,
    pub center_time: f64,
    pub center: Vec<f64>,
    pub rho: f64,
    pub order: f64,
    /// True when `x₀` is off the lattice and values were linearly interpolated.
    pub interpolated: bool,
}

/// Samples of `traj` whose rescaled time lies in `[window.0, window.1]`, mapped onto the
/// view grid. Node `i` of the view sits at physical `x₀ + i h_x`, so the view is exact
/// whenever `x₀` is a lattice node.
pub fn parabolic_rescale(
    traj: &Trajectory,
    t0: f64,
    x0: &[f64],
    rho: f64,
    s: f64,
    window: (f64, f64),
) -> Result<RescaledView> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rho", format!("must be positive: {rho}")));
    }
    if !(s > 0.0 && s < 2.0) {
        return Err(invalid("s", format!("order out of (0,2): {s}")));
    }
    let grid = *traj.grid();
    let n = grid.dimension();
    if x0.len() != n {
        return Err(invalid("center", format!("expected {n} coordinates, got {}", x0.len())));
    }
    let (a, b) = window;
    if !(a <= b) {
        return Err(invalid("window", format!("empty window [{a}, {b}]")));
    }
    let dil = rho.powf(s);
    let (ta, tb) = (t0 + dil * a, t0 + dil * b);
    let tol = 1e-9 * (1.0 + ta.abs().max(tb.abs()));
    if ta < traj.start() - tol || tb > traj.end() + tol {
        return Err(Error::WindowOutOfRange(format!(
            "[{ta}, {tb}] not inside [{}, {}]",
            traj.start(),
            traj.end()
        )));
    }
    let view_grid = Grid::new(n, grid.side_length() / rho, grid.points_per_axis())?;
    let stencil = Interpolation::new(&grid, x0);
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for (t, w) in traj.window(ta, tb) {
        times.push((t - t0) / dil);
        let v = (0..view_grid.len())
            .map(|i| stencil.eval(&grid, w, view_grid.multi_index(i)))
            .collect();
        fields.push(Field::new(view_grid, v)?);
    }
    if times.is_empty() {
        return Err(Error::WindowOutOfRange(format!("no samples in [{ta}, {tb}]")));
    }
    Ok(RescaledView {
        trajectory: Trajectory::from_samples(times, fields)?,
        center_time: t0,
        center: x0.to_vec(),
        rho,
        order: s,
        interpolated: !stencil.on_lattice,
    })
}

/// Multilinear weights for the physical point `x₀` relative to the lattice.
struct Interpolation {
    base: [i64; 2],
    frac: [f64; 2],
    on_lattice: bool,
}

impl Interpolation {
    fn new(grid: &Grid, x0: &[f64]) -> Self {
        let h = grid.spacing();
        let mut base = [0i64; 2];
        let mut frac = [0.0; 2];
        for (a, &x) in x0.iter().enumerate() {
            let u = x / h;
            let r = u.round();
            if (u - r).abs() <= 1e-9 {
                base[a] = r as i64;
            } else {
                base[a] = u.floor() as i64;
                frac[a] = u - u.floor();
            }
        }
        let on_lattice = frac.iter().all(|&f| f == 0.0);
        Self {
            base,
            frac,
            on_lattice,
        }
    }

    fn eval(&self, grid: &Grid, w: &Field, mi: [usize; 2]) -> f64 {
        let v = w.values();
        let anchor = grid.shifted(0, [self.base[0] + mi[0] as i64, self.base[1] + mi[1] as i64]);
        if self.on_lattice {
            return v[anchor];
        }
        let corners: &[[i64; 2]] = if grid.dimension() == 1 {
            &[[0, 0], [1, 0]]
        } else {
            &[[0, 0], [1, 0], [0, 1], [1, 1]]
        };
        let mut acc = 0.0;
        for c in corners {
            let mut weight = 1.0;
            for (&corner, &frac) in c.iter().zip(&self.frac).take(grid.dimension()) {
                weight *= if corner == 1 { frac } else { 1.0 - frac };
            }
            if weight != 0.0 {
                acc += weight * v[grid.shifted(anchor, *c)];
            }
        }
        acc
    }
}

/// `K_ρ(τ, ξ, η) = ρ^{N+s} K(t₀ + ρ^s τ, x₀ + ρ ξ, x₀ + ρ η)`: the kernel a parabolic
/// view solves with. It lies in the same ellipticity class as `K`.
pub struct RescaledKernel {
    base: Arc<dyn Kernel>,
    t0: f64,
    x0: [f64; 2],
    rho: f64,
    side_length: f64,
}

impl RescaledKernel {
    /// `side_length` is the physical torus side used to wrap positions (infinite for free space).
    pub fn new(base: Arc<dyn Kernel>, t0: f64, x0: &[f64], rho: f64, side_length: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("rho", format!("must be positive: {rho}")));
        }
        let mut c = [0.0; 2];
        c[..x0.len().min(2)].copy_from_slice(&x0[..x0.len().min(2)]);
        Ok(Self {
            base,
            t0,
            x0: c,
            rho,
            side_length,
        })
    }

    fn physical(&self, x: &[f64]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (a, &xa) in x.iter().enumerate() {
            let y = self.x0[a] + self.rho * xa;
            p[a] = if self.side_length.is_finite() {
                y.rem_euclid(self.side_length)
            } else {
                y
            };
        }
        p
    }

    fn time(&self, t: f64) -> f64 {
        self.t0 + self.rho.powf(self.base.order()) * t
    }
}

impl Kernel for RescaledKernel {
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
        self.base.truncation_radius() / self.rho
    }
    fn envelope(&self) -> (f64, f64) {
        self.base.envelope()
    }
    fn is_translation_invariant(&self) -> bool {
        self.base.is_translation_invariant()
    }
    fn time_key(&self, t: f64) -> i64 {
        self.base.time_key(self.time(t))
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
        let n = x.len();
        let (px, py) = (self.physical(x), self.physical(y));
        let scale = self.rho.powf(n as f64 + self.base.order());
        scale * self.base.eval(self.time(t), &px[..n], &py[..n], self.rho * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_flow, FlowProblem, Sampling};
    use crate::kernels::{make_kernel, validate_kernel, KernelSpec};

    fn traj() -> Trajectory {
        let g = Grid::new(1, 16.0, 128).unwrap();
        let times: Vec<f64> = (0..=8).map(|k| -1.0 + k as f64 / 8.0).collect();
        let fields = times
            .iter()
            .map(|&t| Field::from_fn(g, |x| (x[0] * 0.3).sin() + t))
            .collect();
        Trajectory::from_samples(times, fields).unwrap()
    }

    #[test]
    fn unit_scale_at_the_origin_is_the_identity() {
        let tr = traj();
        let v = parabolic_rescale(&tr, 0.0, &[0.0], 1.0, 1.0, (-1.0, 0.0)).unwrap();
        assert!(!v.interpolated);
        assert_eq!(v.trajectory.times(), tr.times());
        for (a, b) in v.trajectory.fields().iter().zip(tr.fields()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_fields_stay_constant_even_when_interpolated() {
        let g = Grid::new(2, 8.0, 16).unwrap();
        let tr = Trajectory::from_samples(vec![0.0, 1.0], vec![Field::constant(g, 0.7); 2]).unwrap();
        let v = parabolic_rescale(&tr, 1.0, &[0.13, 2.2], 0.5, 1.5, (-2.0, 0.0)).unwrap();
        assert!(v.interpolated);
        for f in v.trajectory.fields() {
            assert!(f.values().iter().all(|&x| (x - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn window_outside_the_run_is_rejected() {
        let tr = traj();
        assert!(matches!(
            parabolic_rescale(&tr, 0.0, &[0.0], 2.0, 1.0, (-1.0, 0.0)),
            Err(Error::WindowOutOfRange(_))
        ));
    }

    #[test]
    fn shifted_center_reads_shifted_nodes() {
        let tr = traj();
        let h = tr.grid().spacing();
        let v = parabolic_rescale(&tr, 0.0, &[5.0 * h], 0.5, 1.0, (-1.0, 0.0)).unwrap();
        let last = v.trajectory.last();
        assert_eq!(last.values()[0], tr.last().values()[5]);
        assert_eq!(v.trajectory.grid().side_length(), 32.0);
    }

    #[test]
    fn rescaled_power_law_keeps_its_class() {
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 0.8, 4.0, 1.0)).unwrap();
        for rho in [0.25, 0.5, 2.0] {
            let k = RescaledKernel::new(base.clone(), 0.0, &[0.0], rho, f64::INFINITY).unwrap();
            let v = validate_kernel(&k, 2000, 9);
            assert!(v.passed(), "{v:?}");
            let r = 0.37;
            let direct = base.eval(0.0, &[0.0], &[r], r);
            assert!((k.eval(0.0, &[0.0], &[r], r) - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn view_of_a_run_matches_resimulation_with_the_rescaled_kernel() {
        let g = Grid::new(1, 16.0, 128).unwrap();
        let base: Arc<dyn Kernel> = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let init = Field::from_fn(g, |x| (-(x[0] - 8.0).powi(2)).exp());
        let dt = 1.0 / 512.0;
        let run = run_flow(
            &FlowProblem::linear(base.clone(), init, 0.0, 0.25).with_dt(dt).without_energy(),
            Sampling::EverySteps(1),
        )
        .unwrap();
        let rho = 2.0;
        let view = parabolic_rescale(&run, 0.0, &[0.0], rho, 1.0, (0.0, 0.125)).unwrap();
        let kr: Arc<dyn Kernel> = Arc::new(RescaledKernel::new(base, 0.0, &[0.0], rho, 16.0).unwrap());
        let again = run_flow(
            &FlowProblem::linear(kr, view.trajectory.initial().clone(), 0.0, 0.125)
                .with_dt(dt / rho)
                .without_energy(),
            Sampling::EverySteps(1),
        )
        .unwrap();
        let diff = crate::operator::relative_sup_distance(again.last(), view.trajectory.last());
        assert!(diff < 1e-10, "{diff}");
    }
}
