//! Periodic uniform lattices and fields on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{Kernel, KernelValidation, ValidationAccumulator};
use crate::rng::seeded_rng;

pub const DEFAULT_SIDE_LENGTH: f64 = 16.0;
pub const MIN_POINTS_PER_AXIS: usize = 8;

/// Torus `[0, L)^N` sampled at `M` points per axis, lexicographic layout
/// (last axis fastest).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dimension: usize,
    side_length: f64,
    points_per_axis: usize,
}

impl Grid {
    pub fn new(dimension: usize, side_length: f64, points_per_axis: usize) -> Result<Self> {
        if !(dimension == 1 || dimension == 2) {
            return Err(Error::UnsupportedDimension(dimension));
        }
        if !(side_length > 0.0 && side_length.is_finite()) {
            return Err(invalid("side_length", format!("must be positive: {side_length}")));
        }
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(invalid(
                "points_per_axis",
                format!("need at least {MIN_POINTS_PER_AXIS}, got {points_per_axis}"),
            ));
        }
        Ok(Self {
            dimension,
            side_length,
            points_per_axis,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.points_per_axis as f64
    }

    /// Quadrature weight `h^N` of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let m = self.points_per_axis;
        if self.dimension == 1 {
            [idx, 0]
        } else {
            [idx / m, idx % m]
        }
    }

    pub fn flat_index(&self, multi: [usize; 2]) -> usize {
        if self.dimension == 1 {
            multi[0]
        } else {
            multi[0] * self.points_per_axis + multi[1]
        }
    }

    /// Canonical position in `[0, L)^N`; unused axes are zero.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        let mi = self.multi_index(idx);
        [mi[0] as f64 * h, mi[1] as f64 * h]
    }

    /// Node reached from `idx` by an integer lattice offset, periodically wrapped.
    pub fn shifted(&self, idx: usize, offset: [i64; 2]) -> usize {
        let m = self.points_per_axis as i64;
        let mi = self.multi_index(idx);
        let a = (mi[0] as i64 + offset[0]).rem_euclid(m) as usize;
        if self.dimension == 1 {
            a
        } else {
            let b = (mi[1] as i64 + offset[1]).rem_euclid(m) as usize;
            a * self.points_per_axis + b
        }
    }

    fn wrap_offset(&self, d: i64) -> i64 {
        let m = self.points_per_axis as i64;
        let d = d.rem_euclid(m);
        if d > m / 2 {
            d - m
        } else {
            d
        }
    }

    /// Minimum-image lattice offset from `i` to `j`, each axis in `(-M/2, M/2]`.
    pub fn min_image(&self, i: usize, j: usize) -> [i64; 2] {
        let a = self.multi_index(i);
        let b = self.multi_index(j);
        [
            self.wrap_offset(b[0] as i64 - a[0] as i64),
            if self.dimension == 2 {
                self.wrap_offset(b[1] as i64 - a[1] as i64)
            } else {
                0
            },
        ]
    }

    pub fn offset_length(&self, offset: [i64; 2]) -> f64 {
        let h = self.spacing();
        let (a, b) = (offset[0] as f64, offset[1] as f64);
        h * (a * a + b * b).sqrt()
    }

    pub fn periodic_distance(&self, i: usize, j: usize) -> f64 {
        self.offset_length(self.min_image(i, j))
    }

    /// Periodic distance from the torus origin (node 0).
    pub fn distance_from_origin(&self, idx: usize) -> f64 {
        self.periodic_distance(0, idx)
    }

    /// Minimum-image displacement vector from the origin.
    pub fn displacement_from_origin(&self, idx: usize) -> [f64; 2] {
        let off = self.min_image(0, idx);
        let h = self.spacing();
        [off[0] as f64 * h, off[1] as f64 * h]
    }

    /// Checks that the kernel's truncation fits the torus unambiguously.
    ///
    /// Untruncated kernels are accepted; they interact through the minimum image only.
    pub fn check_kernel<K: Kernel + ?Sized>(&self, kernel: &K) -> Result<()> {
        if kernel.dimension() != self.dimension {
            return Err(Error::GridMismatch(format!(
                "kernel dimension {} vs grid dimension {}",
                kernel.dimension(),
                self.dimension
            )));
        }
        let r = kernel.truncation_radius();
        if r.is_finite() && self.side_length <= 2.0 * r {
            return Err(Error::GridMismatch(format!(
                "side length {} must exceed twice the truncation radius {r}",
                self.side_length
            )));
        }
        Ok(())
    }

    /// All nonzero minimum-image offsets with length `<= cutoff`, ordered
    /// lexicographically by the target node they reach from node 0.
    pub fn stencil(&self, cutoff: f64) -> Vec<Offset> {
        let mut out = Vec::new();
        for j in 1..self.len() {
            let off = self.min_image(0, j);
            let r = self.offset_length(off);
            if r <= cutoff {
                out.push(Offset { offset: off, r });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offset {
    pub offset: [i64; 2],
    pub r: f64,
}

/// Real values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len().to_string(),
                found: values.len().to_string(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at node positions.
    pub fn from_fn<F: FnMut([f64; 2]) -> f64>(grid: Grid, mut f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ w h^N`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `(Σ w² h^N)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `Σ u v h^N`.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid (grids are not checked).
    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Discrete `H^{s/2}` seminorm (squared):
/// `Σ_x Σ_{0 < |x-y| <= cutoff} [u(x) - u(y)]² |x-y|^{-(N+s)} h^{2N}`.
pub fn sobolev_seminorm(u: &Field, s: f64, cutoff: f64) -> Result<f64> {
    if !(s > 0.0 && s < 2.0) {
        return Err(invalid("order", format!("order out of (0,2): {s}")));
    }
    let grid = *u.grid();
    let weights = SeminormWeights::new(&grid, s, cutoff);
    Ok(weights.seminorm(u.values()))
}

/// Precomputed `|d|^{-(N+s)} h^{2N}` for every stencil offset.
#[derive(Debug, Clone)]
pub struct SeminormWeights {
    grid: Grid,
    offsets: Vec<[i64; 2]>,
    weights: Vec<f64>,
    /// weight indexed by flattened min-image offset of (i -> j) for the full stencil
    table: Vec<f64>,
}

impl SeminormWeights {
    pub fn new(grid: &Grid, s: f64, cutoff: f64) -> Self {
        let n = grid.dimension() as f64;
        let vol2 = grid.cell_volume() * grid.cell_volume();
        let stencil = grid.stencil(cutoff);
        let mut table = vec![0.0; grid.len()];
        let mut offsets = Vec::with_capacity(stencil.len());
        let mut weights = Vec::with_capacity(stencil.len());
        for o in &stencil {
            let w = o.r.powf(-(n + s)) * vol2;
            let j = grid.shifted(0, o.offset);
            table[j] = w;
            offsets.push(o.offset);
            weights.push(w);
        }
        Self {
            grid: *grid,
            offsets,
            weights,
            table,
        }
    }

    /// Weight of the pair `(i, j)`, zero on the diagonal and beyond the cutoff.
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let m = self.grid.points_per_axis();
        if self.grid.dimension() == 1 {
            self.table[if j >= i { j - i } else { j + m - i }]
        } else {
            let (i0, i1) = (i / m, i % m);
            let (j0, j1) = (j / m, j % m);
            let a = if j0 >= i0 { j0 - i0 } else { j0 + m - i0 };
            let b = if j1 >= i1 { j1 - i1 } else { j1 + m - i1 };
            self.table[a * m + b]
        }
    }

    /// Lexicographic double sum over `(x, y)`.
    pub fn seminorm(&self, u: &[f64]) -> f64 {
        let n = self.grid.len();
        let mut total = 0.0;
        for i in 0..n {
            let ui = u[i];
            let mut row = 0.0;
            for (j, &uj) in u.iter().enumerate() {
                let w = self.pair(i, j);
                if w != 0.0 {
                    let d = ui - uj;
                    row += d * d * w;
                }
            }
            total += row;
        }
        total
    }

    /// Seminorm of the positive part `(a - level)_+` computed so that the result is
    /// exactly nonincreasing in `level`.
    ///
    /// Pairs where both positive parts vanish contribute exact zeros and are skipped.
    pub fn seminorm_positive_part(&self, a: &[f64], level: f64) -> f64 {
        let n = self.grid.len();
        let active: Vec<usize> = (0..n).filter(|&i| a[i] > level).collect();
        if active.is_empty() {
            return 0.0;
        }
        let mut is_active = vec![false; n];
        for &i in &active {
            is_active[i] = true;
        }
        let diff = |ai: f64, aj: f64| -> f64 {
            let (hi, lo) = if ai >= aj { (ai, aj) } else { (aj, ai) };
            if lo >= level {
                hi - lo
            } else if hi > level {
                hi - level
            } else {
                0.0
            }
        };
        let mut total = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            if is_active[i] {
                for j in 0..n {
                    let w = self.pair(i, j);
                    if w != 0.0 {
                        let d = diff(a[i], a[j]);
                        row += d * d * w;
                    }
                }
            } else {
                for &j in &active {
                    let w = self.pair(i, j);
                    if w != 0.0 {
                        let d = diff(a[i], a[j]);
                        row += d * d * w;
                    }
                }
            }
            total += row;
        }
        total
    }

    pub fn offsets(&self) -> &[[i64; 2]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Envelope/symmetry scan over random node pairs of a torus, using periodic distances.
pub fn validate_kernel_on_grid<K: Kernel + ?Sized>(
    kernel: &K,
    grid: &Grid,
    times: &[f64],
    sample_count: usize,
    seed: u64,
) -> KernelValidation {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let mut acc = ValidationAccumulator::new(kernel.envelope());
    let n = grid.len();
    let dim = grid.dimension();
    for _ in 0..sample_count.max(1) {
        let t = if times.is_empty() {
            0.0
        } else {
            times[rng.gen_range(0..times.len())]
        };
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        if j == i {
            j = (i + 1) % n;
        }
        let r = grid.periodic_distance(i, j);
        let x = grid.position(i);
        let y = grid.position(j);
        acc.push(kernel, t, &x[..dim], &y[..dim], r);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_wraps_periodically() {
        let g = Grid::new(1, 16.0, 16).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.min_image(0, 15), [-1, 0]);
        assert_eq!(g.min_image(15, 0), [1, 0]);
        assert_eq!(g.min_image(0, 8), [8, 0]);
        assert_eq!(g.periodic_distance(1, 14), 3.0);
        assert_eq!(g.shifted(15, [2, 0]), 1);
        let g2 = Grid::new(2, 8.0, 8).unwrap();
        let i = g2.flat_index([7, 0]);
        assert_eq!(g2.shifted(i, [1, -1]), g2.flat_index([0, 7]));
        assert_eq!(g2.distance_from_origin(g2.flat_index([7, 7])), 2f64.sqrt());
    }

    #[test]
    fn rejects_small_or_unsupported_grids() {
        assert!(Grid::new(3, 16.0, 16).is_err());
        assert!(Grid::new(1, 16.0, 4).is_err());
        assert!(Grid::new(1, -1.0, 16).is_err());
    }

    #[test]
    fn seminorm_of_constant_vanishes_and_is_quadratic() {
        let g = Grid::new(1, 16.0, 64).unwrap();
        assert_eq!(sobolev_seminorm(&Field::constant(g, 3.0), 1.0, 2.0).unwrap(), 0.0);
        let u = Field::from_fn(g, |p| (p[0] * 0.7).sin() + 0.1 * p[0]);
        let a = sobolev_seminorm(&u, 1.0, 2.0).unwrap();
        let b = sobolev_seminorm(&u.map(|v| 3.0 * v), 1.0, 2.0).unwrap();
        assert!((b - 9.0 * a).abs() <= 1e-12 * b);
        assert!(sobolev_seminorm(&u, 2.0, 2.0).is_err());
    }

    #[test]
    fn positive_part_seminorm_matches_plain_seminorm() {
        let g = Grid::new(1, 16.0, 64).unwrap();
        let a: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.37).sin()).collect();
        let weights = SeminormWeights::new(&g, 1.0, f64::INFINITY);
        for level in [-2.0, -0.3, 0.0, 0.4, 1.5] {
            let clipped: Vec<f64> = a.iter().map(|v| (v - level).max(0.0)).collect();
            let direct = weights.seminorm(&clipped);
            let fast = weights.seminorm_positive_part(&a, level);
            assert!((direct - fast).abs() <= 1e-12 * direct.max(1e-300), "{level}");
        }
    }

    #[test]
    fn field_norms() {
        let g = Grid::new(1, 16.0, 16).unwrap();
        let f = Field::constant(g, 2.0);
        assert_eq!(f.mass(), 32.0);
        assert_eq!(f.l2_norm(), (4.0f64 * 16.0).sqrt());
        assert!(Field::new(g, vec![f64::NAN; 16]).is_err());
        assert!(Field::new(g, vec![0.0; 15]).is_err());
    }
}
