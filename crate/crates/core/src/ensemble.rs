//! Seeded rough-kernel ensembles and the calibration of the regularity constants.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degiorgi::calibration::{bisect_lower_envelope, bisect_threshold};
use crate::degiorgi::lemmas::{
    corollary2_delta, corollary2_statistics, lemma1_statistics, lemma2_envelope_violation, lambda_constraint,
    Corollary2Statistics, Lemma1Statistics, LambdaConstraint,
};
use crate::degiorgi::{
    check_recurrence, level_set_measures, truncated_energies, CalibrationConstants, MeasureTriple, RecurrenceReport,
    Tagged,
};
use crate::error::{invalid, Result};
use crate::flow::{run_flow, FlowProblem, Sampling, Trajectory};
use crate::grid::{Field, Grid};
use crate::kernels::{make_kernel, KernelSpec, StandardKernel};
use crate::oscillation::{lemma3_constants, lemma3_oscillation, oscillation_decay, Lemma3Constants, OscillationReport};
use crate::rng::{mix64, seeded_rng};

/// Upper cap for calibrated constants, which must stay in `(0, 1)`.
pub const CALIBRATION_CAP: f64 = 0.999;
pub const CALIBRATION_FLOOR: f64 = 1e-9;
pub const DEFAULT_MU: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub dimension: usize,
    pub order: f64,
    pub ellipticity: f64,
    pub side_length: f64,
    pub points: usize,
    pub sample_interval: f64,
    pub time_dependent: bool,
}

impl Default for EnsembleSettings {
    /// `L = 64` keeps `ψ(L/2) >= 2 sup|w|` for the bump amplitudes drawn below.
    fn default() -> Self {
        Self {
            dimension: 1,
            order: 1.0,
            ellipticity: 4.0,
            side_length: 64.0,
            points: 512,
            sample_interval: 1.0 / 128.0,
            time_dependent: true,
        }
    }
}

impl EnsembleSettings {
    /// Finer lattice (`h = 1/16`) so that nested cylinders down to radius `0.7³` stay resolved.
    pub fn oscillation() -> Self {
        Self {
            side_length: 16.0,
            points: 256,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dimension, self.side_length, self.points)
    }

    pub fn kernel_spec(&self, seed: u64) -> KernelSpec {
        if self.time_dependent {
            KernelSpec::rough_time_dependent(self.dimension, self.order, self.ellipticity, seed)
        } else {
            KernelSpec::rough_static(self.dimension, self.order, self.ellipticity, seed)
        }
    }

    pub fn kernel(&self, seed: u64) -> Result<Arc<StandardKernel>> {
        make_kernel(&self.kernel_spec(seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialShape {
    /// `A exp(-|x - c|²/(2σ²)) - b`, amplitude log-uniform in `[0.1, 2.2]`.
    Bump,
    /// `-a` on the slab `|x₁ - c| < ℓ`, `+a` elsewhere; `a ∈ [0.8, 1]`, `c ∈ [-1, 1]`,
    /// `ℓ ∈ [0.25, 2]`.
    Step,
}

impl InitialShape {
    fn salt(self) -> u64 {
        match self {
            InitialShape::Bump => 0x6275_6d70,
            InitialShape::Step => 0x7374_6570,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDraw {
    pub shape: InitialShape,
    pub amplitude: f64,
    /// Bump width `σ` or slab half-width `ℓ`.
    pub width: f64,
    pub offset: f64,
    /// Bump or slab centre along the first axis.
    pub location: f64,
}

pub fn draw_initial(shape: InitialShape, seed: u64) -> InitialDraw {
    let mut rng = seeded_rng(mix64(seed ^ shape.salt()));
    match shape {
        InitialShape::Bump => InitialDraw {
            shape,
            amplitude: (rng.gen_range(0.1f64.ln()..2.2f64.ln())).exp(),
            width: rng.gen_range(0.3..2.0),
            offset: rng.gen_range(0.0..0.5),
            location: rng.gen_range(-0.25..0.25),
        },
        InitialShape::Step => InitialDraw {
            shape,
            amplitude: rng.gen_range(0.8..1.0),
            width: rng.gen_range(0.25..2.0),
            offset: 0.0,
            location: rng.gen_range(-1.0..1.0),
        },
    }
}

pub fn initial_field(grid: &Grid, draw: &InitialDraw) -> Field {
    let values = (0..grid.len())
        .map(|i| {
            let d = grid.displacement_from_origin(i);
            match draw.shape {
                InitialShape::Bump => {
                    let r2 = (d[0] - draw.location).powi(2) + d[1] * d[1];
                    draw.amplitude * (-r2 / (2.0 * draw.width * draw.width)).exp() - draw.offset
                }
                InitialShape::Step => {
                    if (d[0] - draw.location).abs() < draw.width {
                        -draw.amplitude
                    } else {
                        draw.amplitude
                    }
                }
            }
        })
        .collect();
    Field::new(*grid, values).expect("values match the grid")
}

/// Linear run on `[-3, 0]` with samples every `sample_interval`.
pub fn ensemble_run(settings: &EnsembleSettings, shape: InitialShape, seed: u64) -> Result<Trajectory> {
    let grid = settings.grid()?;
    let kernel = settings.kernel(seed)?;
    let init = initial_field(&grid, &draw_initial(shape, seed));
    let problem = FlowProblem::linear(kernel, init, -3.0, 0.0);
    run_flow(&problem, Sampling::Interval(settings.sample_interval))
}

/// Threshold-free statistics of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatistics {
    pub seed: u64,
    pub lemma1: Lemma1Statistics,
    pub corollary2: Corollary2Statistics,
    pub measures: MeasureTriple,
    pub lemma2_envelope_ok: bool,
    /// Oscillation over `[-1, 0] × B₁` of the step run.
    pub step_oscillation: f64,
    pub step_sup: f64,
}

pub fn seed_statistics(settings: &EnsembleSettings, seed: u64, lambda: f64) -> Result<SeedStatistics> {
    let s = settings.order;
    let bump = ensemble_run(settings, InitialShape::Bump, seed)?;
    let step = ensemble_run(settings, InitialShape::Step, seed)?;
    let step_sup = step.fields().iter().map(|f| f.sup_norm()).fold(0.0, f64::max);
    Ok(SeedStatistics {
        seed,
        lemma1: lemma1_statistics(&bump, s)?,
        corollary2: corollary2_statistics(&bump, s)?,
        measures: level_set_measures(&step, s, lambda)?,
        lemma2_envelope_ok: lemma2_envelope_violation(&step, s, lambda)?.is_none(),
        step_oscillation: lemma3_oscillation(&step)?,
        step_sup,
    })
}

/// Whether a constant was set by some run (true) or only by the `(0, 1)` cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingFlags {
    pub eps0: bool,
    pub delta: bool,
    pub gamma: bool,
    pub lambda_star: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub constants: CalibrationConstants,
    /// `δ` from the explicit formula with the calibrated `ε₀`, for comparison.
    pub delta_formula: Tagged,
    pub binding: BindingFlags,
    pub lambda_constraint: LambdaConstraint,
    pub lemma3: Lemma3Constants,
    pub statistics: Vec<SeedStatistics>,
}

/// Fits `ε₀, δ, γ, λ*` on the seeds; `μ` and `λ` are fixed.
///
/// Each constant is the largest value for which the corresponding implication holds on
/// every run of the ensemble, found by bisection on the threshold-free statistics.
pub fn calibrate(settings: &EnsembleSettings, seeds: &[u64], mu: f64, lambda: f64) -> Result<CalibrationOutcome> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "calibration needs at least one seed"));
    }
    let statistics = seeds
        .par_iter()
        .map(|&seed| seed_statistics(settings, seed, lambda))
        .collect::<Result<Vec<_>>>()?;

    let eps_samples: Vec<(f64, bool)> = statistics
        .iter()
        .filter(|st| st.lemma1.torus_valid)
        .map(|st| (st.lemma1.hypothesis_integral, st.lemma1.violation.is_some()))
        .collect();
    let eps0 = bisect_threshold(&eps_samples, CALIBRATION_FLOOR, CALIBRATION_CAP);

    let delta_samples: Vec<(f64, bool)> = statistics
        .iter()
        .filter(|st| st.corollary2.envelope_violation.is_none())
        .map(|st| (st.corollary2.measure, st.corollary2.violation.is_some()))
        .collect();
    let delta = bisect_threshold(&delta_samples, CALIBRATION_FLOOR, CALIBRATION_CAP);

    let between: Vec<f64> = statistics
        .iter()
        .filter(|st| st.lemma2_envelope_ok && st.measures.below_phi0 >= mu && st.measures.above_phi2 > delta)
        .map(|st| st.measures.between)
        .collect();
    let gamma = bisect_lower_envelope(&between, CALIBRATION_FLOOR, CALIBRATION_CAP);

    let gaps: Vec<f64> = statistics
        .iter()
        .filter(|st| st.step_sup <= 1.0)
        .map(|st| 2.0 - st.step_oscillation)
        .collect();
    let lambda_star = bisect_lower_envelope(&gaps, CALIBRATION_FLOOR, CALIBRATION_CAP);

    Ok(CalibrationOutcome {
        constants: CalibrationConstants {
            eps0: Tagged::calibrated(eps0),
            delta: Tagged::calibrated(delta),
            mu: Tagged::fixed(mu),
            gamma: Tagged::calibrated(gamma),
            lambda: Tagged::fixed(lambda),
            lambda_star: Tagged::calibrated(lambda_star),
            seeds: seeds.to_vec(),
        },
        delta_formula: Tagged::measured(corollary2_delta(eps0, settings.order, settings.dimension)),
        binding: BindingFlags {
            eps0: eps0 < CALIBRATION_CAP,
            delta: delta < CALIBRATION_CAP,
            gamma: gamma < CALIBRATION_CAP,
            lambda_star: lambda_star < CALIBRATION_CAP,
        },
        lambda_constraint: lambda_constraint(lambda, mu, settings.dimension),
        lemma3: lemma3_constants(settings.order, lambda, gamma, settings.dimension)?,
        statistics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceFit {
    pub per_seed: Vec<RecurrenceReport>,
    /// Largest finite per-seed constant.
    pub c_bar: Option<f64>,
}

/// Truncated energies of the bump runs and the smallest `C̄` consistent with each.
pub fn recurrence_fit(settings: &EnsembleSettings, seeds: &[u64], k_max: usize) -> Result<RecurrenceFit> {
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let traj = ensemble_run(settings, InitialShape::Bump, seed)?;
            let seq = truncated_energies(&traj, settings.order, k_max)?;
            Ok(check_recurrence(&seq.values, settings.order, settings.dimension))
        })
        .collect::<Result<Vec<_>>>()?;
    let c_bar = per_seed
        .iter()
        .filter_map(|r| r.c_bar)
        .filter(|c| c.is_finite())
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
    Ok(RecurrenceFit { per_seed, c_bar })
}

/// Oscillation decay of a step run, centred at the node nearest the right edge of the slab.
pub fn oscillation_sweep(
    settings: &EnsembleSettings,
    seeds: &[u64],
    scale: f64,
    levels: usize,
) -> Result<Vec<OscillationReport>> {
    let grid = settings.grid()?;
    seeds
        .par_iter()
        .map(|&seed| {
            let traj = ensemble_run(settings, InitialShape::Step, seed)?;
            let draw = draw_initial(InitialShape::Step, seed);
            let h = grid.spacing();
            let mut x0 = vec![0.0; settings.dimension];
            let edge = draw.location + draw.width;
            x0[0] = ((edge / h).round() * h).rem_euclid(grid.side_length());
            oscillation_decay(&traj, 0.0, &x0, scale, levels, settings.order)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_in_range() {
        for seed in 1..40 {
            let a = draw_initial(InitialShape::Bump, seed);
            assert_eq!(a, draw_initial(InitialShape::Bump, seed));
            assert!((0.1..2.2).contains(&a.amplitude) && (0.0..0.5).contains(&a.offset));
            let b = draw_initial(InitialShape::Step, seed);
            assert!((-1.0..1.0).contains(&b.location) && (0.8..1.0).contains(&b.amplitude));
        }
        assert_ne!(draw_initial(InitialShape::Bump, 1), draw_initial(InitialShape::Bump, 2));
    }

    #[test]
    fn step_field_takes_two_values() {
        let g = EnsembleSettings::default().grid().unwrap();
        let d = draw_initial(InitialShape::Step, 3);
        let f = initial_field(&g, &d);
        assert!(f.values().iter().all(|&v| v.abs() == d.amplitude));
        assert_eq!(f.max(), d.amplitude);
        assert_eq!(f.min(), -d.amplitude);
    }

    #[test]
    fn small_calibration_is_deterministic_and_in_range() {
        let settings = EnsembleSettings::default();
        let a = calibrate(&settings, &[1, 2, 3], DEFAULT_MU, DEFAULT_LAMBDA).unwrap();
        let b = calibrate(&settings, &[1, 2, 3], DEFAULT_MU, DEFAULT_LAMBDA).unwrap();
        assert_eq!(a, b);
        assert!(a.constants.in_unit_interval(), "{:?}", a.constants);
    }
}
