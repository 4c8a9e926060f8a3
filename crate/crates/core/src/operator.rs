//! The discrete nonlocal operator
//!
//! ```text
//! (Lw)(x) = Σ_{y≠x} [w(y) - w(x)] K(t,x,y) h^N
//! ```
//!
//! on a periodic grid, with three interchangeable evaluation strategies. Dense and
//! banded rows are summed in lexicographic order of `y`, so the two agree bitwise;
//! the spectral strategy diagonalizes translation-invariant kernels with an FFT.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::kernels::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Dense,
    Banded,
    Spectral,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dense => "dense",
            Strategy::Banded => "banded",
            Strategy::Spectral => "spectral",
        }
    }
}

/// Kernel weights `W_xy = K(t,x,y) h^N` assembled for one kernel time slice.
#[derive(Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    strategy: Strategy,
    time_key: i64,
    row_sums: Vec<f64>,
    storage: Storage,
}

#[derive(Clone)]
enum Storage {
    Dense {
        weights: Vec<f64>,
    },
    Banded {
        starts: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    },
    Spectral(Arc<SpectralPlan>),
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("grid", &self.grid)
            .field("strategy", &self.strategy)
            .field("time_key", &self.time_key)
            .finish()
    }
}

struct SpectralPlan {
    m: usize,
    dimension: usize,
    /// Eigenvalue of `L` for every Fourier mode, lexicographic.
    symbol: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralPlan {
    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        if self.dimension == 1 {
            fft.process(data);
            return;
        }
        for row in data.chunks_mut(m) {
            fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..m {
            for r in 0..m {
                column[r] = data[r * m + c];
            }
            fft.process(&mut column);
            for r in 0..m {
                data[r * m + c] = column[r];
            }
        }
    }
}

fn row_positions(grid: &Grid, i: usize) -> [f64; 2] {
    grid.position(i)
}

impl DiscreteOperator {
    /// Assembles the operator of `kernel` at time `t`.
    pub fn assemble<K: Kernel + ?Sized>(kernel: &K, grid: &Grid, t: f64, strategy: Strategy) -> Result<Self> {
        grid.check_kernel(kernel)?;
        let n = grid.len();
        let dim = grid.dimension();
        let vol = grid.cell_volume();
        let time_key = kernel.time_key(t);
        let reach = kernel.truncation_radius();
        match strategy {
            Strategy::Dense => {
                let mut weights = vec![0.0; n * n];
                weights.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                    let x = row_positions(grid, i);
                    for (j, w) in row.iter_mut().enumerate() {
                        if j == i {
                            continue;
                        }
                        let r = grid.periodic_distance(i, j);
                        if r <= reach {
                            let y = row_positions(grid, j);
                            *w = kernel.eval(t, &x[..dim], &y[..dim], r) * vol;
                        }
                    }
                });
                let row_sums = weights.par_chunks(n).map(|row| row.iter().sum()).collect();
                Ok(Self {
                    grid: *grid,
                    strategy,
                    time_key,
                    row_sums,
                    storage: Storage::Dense { weights },
                })
            }
            Strategy::Banded => {
                let stencil = grid.stencil(reach);
                let rows: Vec<Vec<(u32, f64)>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let x = row_positions(grid, i);
                        let mut row: Vec<(u32, f64)> = stencil
                            .iter()
                            .map(|o| {
                                let j = grid.shifted(i, o.offset);
                                let y = row_positions(grid, j);
                                (j as u32, kernel.eval(t, &x[..dim], &y[..dim], o.r) * vol)
                            })
                            .collect();
                        row.sort_unstable_by_key(|&(j, _)| j);
                        row
                    })
                    .collect();
                let mut starts = Vec::with_capacity(n + 1);
                let mut cols = Vec::with_capacity(n * stencil.len());
                let mut vals = Vec::with_capacity(n * stencil.len());
                starts.push(0);
                let mut row_sums = Vec::with_capacity(n);
                for row in rows {
                    let mut sum = 0.0;
                    for (j, v) in row {
                        cols.push(j);
                        vals.push(v);
                        sum += v;
                    }
                    row_sums.push(sum);
                    starts.push(cols.len());
                }
                Ok(Self {
                    grid: *grid,
                    strategy,
                    time_key,
                    row_sums,
                    storage: Storage::Banded { starts, cols, vals },
                })
            }
            Strategy::Spectral => {
                if !kernel.is_translation_invariant() {
                    return Err(Error::StrategyMismatch);
                }
                let m = grid.points_per_axis();
                let origin = [0.0; 2];
                let mut column = vec![Complex64::new(0.0, 0.0); n];
                let mut total = 0.0;
                for (j, c) in column.iter_mut().enumerate().skip(1) {
                    let r = grid.distance_from_origin(j);
                    if r <= reach {
                        let y = row_positions(grid, j);
                        let w = kernel.eval(t, &origin[..dim], &y[..dim], r) * vol;
                        *c = Complex64::new(w, 0.0);
                        total += w;
                    }
                }
                let mut planner = FftPlanner::new();
                let forward = planner.plan_fft_forward(m);
                let inverse = planner.plan_fft_inverse(m);
                let mut plan = SpectralPlan {
                    m,
                    dimension: dim,
                    symbol: Vec::new(),
                    forward,
                    inverse,
                };
                let fwd = plan.forward.clone();
                plan.transform(&mut column, &fwd);
                // the column is even, so its transform is real: Σ W(d) cos(k·d)
                plan.symbol = column.iter().map(|c| c.re - total).collect();
                Ok(Self {
                    grid: *grid,
                    strategy,
                    time_key,
                    row_sums: vec![total; n],
                    storage: Storage::Spectral(Arc::new(plan)),
                })
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn time_key(&self) -> i64 {
        self.time_key
    }

    /// `Σ_y W_xy` per row.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn max_row_sum(&self) -> f64 {
        self.row_sums.iter().copied().fold(0.0, f64::max)
    }

    /// Fourier eigenvalues (spectral strategy only).
    pub fn symbol(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Spectral(plan) => Some(&plan.symbol),
            _ => None,
        }
    }

    /// `(Lw)(x) = Σ_y [w(y) - w(x)] W_xy`.
    pub fn apply(&self, w: &Field) -> Result<Field> {
        self.check(w)?;
        match &self.storage {
            Storage::Spectral(plan) => {
                let n = self.grid.len();
                let mut data: Vec<Complex64> =
                    w.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
                plan.transform(&mut data, &plan.forward);
                for (d, &mu) in data.iter_mut().zip(&plan.symbol) {
                    *d *= mu;
                }
                plan.transform(&mut data, &plan.inverse);
                let scale = 1.0 / n as f64;
                Ok(Field::from_raw(
                    self.grid,
                    data.iter().map(|c| c.re * scale).collect(),
                ))
            }
            _ => self.apply_flux(w, |d| d),
        }
    }

    /// `Σ_y f(w(y) - w(x)) W_xy` for an arbitrary flux `f` (dense and banded only).
    pub fn apply_flux<F>(&self, w: &Field, flux: F) -> Result<Field>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        self.check(w)?;
        let vals = w.values();
        let n = self.grid.len();
        let out: Vec<f64> = match &self.storage {
            Storage::Dense { weights } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let wi = vals[i];
                    let row = &weights[i * n..(i + 1) * n];
                    let mut acc = 0.0;
                    for (j, &kij) in row.iter().enumerate() {
                        if kij != 0.0 {
                            acc += flux(vals[j] - wi) * kij;
                        }
                    }
                    acc
                })
                .collect(),
            Storage::Banded { starts, cols, vals: kv } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let wi = vals[i];
                    let mut acc = 0.0;
                    for k in starts[i]..starts[i + 1] {
                        acc += flux(vals[cols[k] as usize] - wi) * kv[k];
                    }
                    acc
                })
                .collect(),
            Storage::Spectral(_) => return Err(Error::StrategyMismatch),
        };
        Ok(Field::from_raw(self.grid, out))
    }

    /// Visits every nonzero weight of row `i` in lexicographic order of `j`.
    pub fn for_each_in_row<F: FnMut(usize, f64)>(&self, i: usize, mut f: F) -> Result<()> {
        let n = self.grid.len();
        match &self.storage {
            Storage::Dense { weights } => {
                for (j, &v) in weights[i * n..(i + 1) * n].iter().enumerate() {
                    if v != 0.0 {
                        f(j, v);
                    }
                }
            }
            Storage::Banded { starts, cols, vals } => {
                for k in starts[i]..starts[i + 1] {
                    f(cols[k] as usize, vals[k]);
                }
            }
            Storage::Spectral(_) => return Err(Error::StrategyMismatch),
        }
        Ok(())
    }

    /// `Σ_x Σ_y W_xy g(x, y) h^N`, each row summed sequentially.
    fn pair_sum<G>(&self, g: G) -> Result<f64>
    where
        G: Fn(usize, usize) -> f64 + Sync,
    {
        let n = self.grid.len();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                let _ = self.for_each_in_row(i, |j, w| acc += w * g(i, j));
                acc
            })
            .collect();
        if matches!(self.storage, Storage::Spectral(_)) {
            return Err(Error::StrategyMismatch);
        }
        Ok(rows.iter().sum::<f64>() * self.grid.cell_volume())
    }

    /// `B[u, v] = Σ_x Σ_{y≠x} K [u(x) - u(y)][v(x) - v(y)] h^{2N}`.
    pub fn bilinear(&self, u: &Field, v: &Field) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        if matches!(self.storage, Storage::Spectral(_)) {
            // B[u, v] = -2 <Lu, v>
            let lu = self.apply(u)?;
            return Ok(-2.0 * lu.inner(v)?);
        }
        let (a, b) = (u.values(), v.values());
        self.pair_sum(|i, j| (a[i] - a[j]) * (b[i] - b[j]))
    }

    /// `V(θ) = Σ_x Σ_y φ(θ(y) - θ(x)) K h^{2N}`.
    pub fn variational_energy<P>(&self, theta: &Field, potential: &P) -> Result<f64>
    where
        P: crate::potentials::Potential + ?Sized,
    {
        self.check(theta)?;
        let a = theta.values();
        self.pair_sum(|i, j| potential.value(a[j] - a[i]))
    }

    fn check(&self, w: &Field) -> Result<()> {
        if *w.grid() != self.grid {
            return Err(Error::GridMismatch(format!(
                "field grid {:?} vs operator grid {:?}",
                w.grid(),
                self.grid
            )));
        }
        Ok(())
    }
}

/// Assembles and applies in one call.
pub fn apply_operator<K: Kernel + ?Sized>(kernel: &K, w: &Field, t: f64, strategy: Strategy) -> Result<Field> {
    DiscreteOperator::assemble(kernel, w.grid(), t, strategy)?.apply(w)
}

/// `B[u, v]` for `kernel` at time `t` (banded evaluation).
pub fn bilinear_form<K: Kernel + ?Sized>(kernel: &K, u: &Field, v: &Field, t: f64) -> Result<f64> {
    u.same_grid(v)?;
    DiscreteOperator::assemble(kernel, u.grid(), t, Strategy::Banded)?.bilinear(u, v)
}

/// Reassembles the operator only when the kernel's time key changes.
#[derive(Debug, Default, Clone)]
pub struct OperatorCache {
    current: Option<DiscreteOperator>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self { current: None }
    }

    pub fn get<K: Kernel + ?Sized>(
        &mut self,
        kernel: &K,
        grid: &Grid,
        t: f64,
        strategy: Strategy,
    ) -> Result<&DiscreteOperator> {
        let key = kernel.time_key(t);
        let stale = match &self.current {
            Some(op) => op.time_key != key || op.grid != *grid || op.strategy != strategy,
            None => true,
        };
        if stale {
            self.current = Some(DiscreteOperator::assemble(kernel, grid, t, strategy)?);
        }
        Ok(self.current.as_ref().expect("operator assembled above"))
    }
}

/// Relative sup-norm distance `‖a - b‖∞ / ‖b‖∞` (absolute when `b = 0`).
pub fn relative_sup_distance(a: &Field, b: &Field) -> f64 {
    let num = a
        .values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.sup_norm();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_kernel, KernelSpec};
    use rand::Rng;

    fn grid1(m: usize) -> Grid {
        Grid::new(1, 16.0, m).unwrap()
    }

    fn random_field(grid: Grid, seed: u64) -> Field {
        let mut rng = crate::rng::seeded_rng(seed);
        Field::from_fn(grid, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_field_is_annihilated_exactly() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 3)).unwrap();
        let g = grid1(64);
        for strategy in [Strategy::Dense, Strategy::Banded] {
            let lw = apply_operator(k.as_ref(), &Field::constant(g, 2.5), 0.0, strategy).unwrap();
            assert!(lw.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn spike_matches_hand_rolled_double_loop() {
        let k = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let g = grid1(32);
        let j0 = 5;
        let mut w = Field::zeros(g);
        w.values_mut()[j0] = 1.0;
        let lw = apply_operator(k.as_ref(), &w, 0.0, Strategy::Dense).unwrap();
        let h = g.spacing();
        for x in 0..32 {
            let mut want = 0.0;
            for y in 0..32 {
                if y == x {
                    continue;
                }
                let r = g.periodic_distance(x, y);
                let kxy = if r <= 3.0 { 0.5 * r.powi(-2) } else { 0.0 };
                if kxy != 0.0 {
                    want += (w.values()[y] - w.values()[x]) * (kxy * h);
                }
            }
            assert_eq!(lw.values()[x], want, "x={x}");
        }
    }

    #[test]
    fn spectral_rejects_rough_kernels() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 3)).unwrap();
        let g = grid1(32);
        let err = DiscreteOperator::assemble(k.as_ref(), &g, 0.0, Strategy::Spectral).unwrap_err();
        assert_eq!(err, Error::StrategyMismatch);
    }

    #[test]
    fn summation_by_parts_identity() {
        let k = make_kernel(&KernelSpec::rough_static(1, 0.8, 4.0, 9)).unwrap();
        let g = grid1(64);
        let op = DiscreteOperator::assemble(k.as_ref(), &g, 0.0, Strategy::Banded).unwrap();
        for seed in 0..20 {
            let u = random_field(g, seed);
            let v = random_field(g, seed + 100);
            let lhs = op.apply(&u).unwrap().inner(&v).unwrap();
            let rhs = -0.5 * op.bilinear(&u, &v).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn bilinear_form_is_symmetric_nonnegative_and_kills_constants() {
        let k = make_kernel(&KernelSpec::rough_static(2, 1.0, 4.0, 2)).unwrap();
        let g = Grid::new(2, 8.0, 16).unwrap();
        let one = Field::constant(g, 1.0);
        for seed in 0..100 {
            let u = random_field(g, seed);
            let v = random_field(g, seed + 1000);
            assert!(bilinear_form(k.as_ref(), &u, &u, 0.0).unwrap() >= 0.0);
            assert_eq!(bilinear_form(k.as_ref(), &one, &v, 0.0).unwrap(), 0.0);
            if seed < 10 {
                let a = bilinear_form(k.as_ref(), &u, &v, 0.0).unwrap();
                let b = bilinear_form(k.as_ref(), &v, &u, 0.0).unwrap();
                assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dense_matrix_is_symmetric_for_static_rough_kernels() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.2, 4.0, 17)).unwrap();
        let g = grid1(48);
        let op = DiscreteOperator::assemble(k.as_ref(), &g, 0.0, Strategy::Dense).unwrap();
        let n = g.len();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            op.for_each_in_row(i, |j, w| dense[i * n + j] = w).unwrap();
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense[i * n + j], dense[j * n + i]);
            }
        }
    }

    #[test]
    fn mass_conservation_and_dissipativity() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 21)).unwrap();
        let g = grid1(128);
        let op = DiscreteOperator::assemble(k.as_ref(), &g, 0.0, Strategy::Banded).unwrap();
        for seed in 0..10 {
            let w = random_field(g, seed);
            let lw = op.apply(&w).unwrap();
            let scale = lw.sup_norm() * g.cell_volume() * g.len() as f64;
            assert!(lw.mass().abs() <= 1e-13 * scale);
            assert!(lw.inner(&w).unwrap() <= 0.0);
        }
    }

    #[test]
    fn cache_reassembles_on_epoch_change_only() {
        let k = make_kernel(&KernelSpec::rough_time_dependent(1, 1.0, 4.0, 5)).unwrap();
        let g = grid1(32);
        let mut cache = OperatorCache::new();
        let a = cache.get(k.as_ref(), &g, 0.01, Strategy::Banded).unwrap().row_sums().to_vec();
        let b = cache.get(k.as_ref(), &g, 0.02, Strategy::Banded).unwrap().row_sums().to_vec();
        assert_eq!(a, b);
        let c = cache.get(k.as_ref(), &g, 0.15, Strategy::Banded).unwrap().row_sums().to_vec();
        assert_ne!(a, c);
    }

    #[test]
    fn repeated_application_is_bitwise_identical() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 8)).unwrap();
        let g = grid1(256);
        let w = random_field(g, 4);
        let a = apply_operator(k.as_ref(), &w, 0.0, Strategy::Banded).unwrap();
        let b = apply_operator(k.as_ref(), &w, 0.0, Strategy::Banded).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
