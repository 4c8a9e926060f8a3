//! Difference-quotient linearization, parabolic rescaling and oscillation decay.

mod decay;
mod rescale;
mod sequence;
mod transfer;

pub use decay::*;
pub use rescale::*;
pub use sequence::*;
pub use transfer::*;

use crate::grid::Grid;

/// Minimum-image displacement of node `idx` from an arbitrary point `x0`.
pub(crate) fn displacement_from(grid: &Grid, idx: usize, x0: &[f64]) -> [f64; 2] {
    let l = grid.side_length();
    let p = grid.position(idx);
    let mut d = [0.0; 2];
    for a in 0..grid.dimension() {
        d[a] = (p[a] - x0[a] + 0.5 * l).rem_euclid(l) - 0.5 * l;
    }
    d
}

pub(crate) fn norm(d: [f64; 2]) -> f64 {
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Relative tolerance for cylinder membership; keeps nested scales consistent under rescaling.
pub(crate) const CYLINDER_TOLERANCE: f64 = 1e-9;
