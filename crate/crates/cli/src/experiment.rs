//! Subcommand pipelines.

use std::sync::Arc;

use nlflow_core::degiorgi::{
    check_recurrence, lemmas::LambdaConstraint, truncated_energies, verify_corollary1, verify_corollary2,
    verify_lemma1, verify_lemma2, CalibrationConstants, Provenance, Tagged,
};
use nlflow_core::ensemble::{
    calibrate, ensemble_run, initial_field, draw_initial, oscillation_sweep, recurrence_fit, BindingFlags,
    EnsembleSettings, InitialShape, SeedStatistics,
};
use nlflow_core::flow::{run_flow, stable_dt, FlowProblem, Sampling, Trajectory};
use nlflow_core::grid::{validate_kernel_on_grid, Field};
use nlflow_core::kernels::{make_kernel, validate_kernel, Kernel, KernelFamily};
use nlflow_core::operator::{relative_sup_distance, DiscreteOperator, Strategy};
use nlflow_core::oscillation::{verify_lemma3, Lemma3Constants};
use nlflow_core::potentials::{validate_potential, Potential, DEFAULT_FD_STEP};
use nlflow_core::rng::seeded_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, InitialSource, Subcommand, Verbosity};
use crate::error::{CliError, Context};
use crate::io::{load_field, write_csv, write_pgm, FieldFormat};
use crate::report::{csv_table, to_value, Session};

/// Samples drawn by the kernel envelope scans.
pub const VALIDATION_SAMPLES: usize = 10_000;
/// Largest grid on which `validate` assembles the dense operator.
pub const DENSE_CHECK_LIMIT: usize = 4096;
pub const OPERATOR_TOLERANCE: f64 = 1e-12;

/// Per-step invariants of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dissipation {
    pub steps: usize,
    /// Largest `(‖w_{n+1}‖ - ‖w_n‖) / ‖w_n‖`.
    pub l2_increase: f64,
    /// `None` when the energy is not monotone in theory (time-dependent kernel).
    pub energy_increase: Option<f64>,
    /// Largest excursion outside the initial `[min, max]`.
    pub bracket_excess: f64,
    /// Largest `|mass_n - mass_0|` relative to `∫|w⁰|`.
    pub mass_drift: f64,
    pub passed: bool,
}

pub const L2_TOLERANCE: f64 = 1e-12;
pub const ENERGY_TOLERANCE: f64 = 1e-10;
pub const BRACKET_TOLERANCE: f64 = 1e-12;
pub const MASS_TOLERANCE: f64 = 1e-12;

pub fn dissipation(traj: &Trajectory, check_energy: bool) -> Dissipation {
    let recs = traj.records();
    let (lo, hi) = (recs[0].min, recs[0].max);
    let scale = traj.initial().map(f64::abs).mass();
    let m0 = recs[0].mass;
    let mut d = Dissipation {
        steps: recs.len() - 1,
        l2_increase: 0.0,
        energy_increase: check_energy.then_some(0.0),
        bracket_excess: 0.0,
        mass_drift: 0.0,
        passed: true,
    };
    for pair in recs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.l2 > 0.0 {
            d.l2_increase = d.l2_increase.max((b.l2 - a.l2) / a.l2);
        }
        if let Some(e) = d.energy_increase.as_mut() {
            *e = e.max(b.energy - a.energy);
        }
        d.bracket_excess = d.bracket_excess.max(lo - b.min).max(b.max - hi);
        if scale > 0.0 {
            d.mass_drift = d.mass_drift.max((b.mass - m0).abs() / scale);
        }
    }
    d.passed = d.l2_increase <= L2_TOLERANCE
        && d.energy_increase.is_none_or(|e| e <= ENERGY_TOLERANCE)
        && d.bracket_excess <= BRACKET_TOLERANCE
        && d.mass_drift <= MASS_TOLERANCE;
    d
}

fn energy_curve(traj: &Trajectory) -> String {
    csv_table(
        &["step", "t", "dt", "l2", "energy", "min", "max", "mass"],
        traj.records()
            .iter()
            .map(|r| vec![r.step as f64, r.t, r.dt, r.l2, r.energy, r.min, r.max, r.mass]),
    )
}

fn potential_arc(cfg: &ExperimentConfig) -> Option<Arc<dyn Potential>> {
    cfg.potential.map(|p| Arc::new(p) as Arc<dyn Potential>)
}

fn problem(cfg: &ExperimentConfig, kernel: Arc<dyn Kernel>, init: Field, t_start: f64, t_end: f64) -> FlowProblem {
    let mut p = match potential_arc(cfg) {
        Some(pot) => FlowProblem::nonlinear(pot, kernel, init, t_start, t_end),
        None => FlowProblem::linear(kernel, init, t_start, t_end),
    };
    p = p.with_stepper(cfg.flow.stepper).with_strategy(cfg.flow.strategy);
    if let Some(dt) = cfg.flow.dt {
        p = p.with_dt(dt);
    }
    p
}

fn kernel_for(cfg: &ExperimentConfig, seed: u64) -> Result<Arc<dyn Kernel>, CliError> {
    let k = make_kernel(&cfg.kernel_for(seed)).context(|| format!("kernel for seed {seed}"))?;
    Ok(k)
}

fn time_dependent(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.kernel.family, KernelFamily::RoughTimeDependent { .. })
}

/// Runs the pipeline of `cfg.subcommand`, recording verdicts in `session`.
pub fn execute(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    match cfg.subcommand {
        Subcommand::Validate => validate(cfg, session),
        Subcommand::Run => run(cfg, session),
        Subcommand::Diagnose => diagnose(cfg, session),
        Subcommand::Denoise => denoise(cfg, session),
        Subcommand::Calibrate => calibrate_cmd(cfg, session),
    }
}

fn validate(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    let seed = cfg.seeds[0];
    let kernel = kernel_for(cfg, seed)?;
    session.phase("kernel", |s| {
        cfg.grid.check_kernel(kernel.as_ref()).context(|| "kernel on grid".into())?;
        let free = validate_kernel(kernel.as_ref(), VALIDATION_SAMPLES, seed);
        let torus = validate_kernel_on_grid(kernel.as_ref(), &cfg.grid, &[cfg.flow.t_start], VALIDATION_SAMPLES, seed);
        s.verdict("kernel.free_space", free.passed());
        s.verdict("kernel.torus", torus.passed());
        s.measured(
            "kernel",
            json!({ "family": cfg.kernel.family.name(), "free_space": to_value(&free), "torus": to_value(&torus) }),
        );
        Ok(())
    })?;
    if let Some(p) = cfg.potential {
        session.phase("potential", |s| {
            let v = validate_potential(&p, 10.0, 2001, DEFAULT_FD_STEP).context(|| "potential scan".into())?;
            s.verdict("potential", v.passed);
            s.measured("potential", json!({ "family": p.family.name(), "scan": to_value(&v) }));
            Ok(())
        })?;
    }
    session.phase("operator", |s| {
        let pot = potential_arc(cfg);
        let dt = stable_dt(kernel.as_ref(), &cfg.grid, pot.as_deref()).context(|| "stable step".into())?;
        let mut section = json!({ "stable_dt": dt, "nodes": cfg.grid.len() });
        if cfg.grid.len() <= DENSE_CHECK_LIMIT {
            let mut rng = seeded_rng(seed);
            let w = Field::new(cfg.grid, (0..cfg.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .context(|| "probe field".into())?;
            let t = cfg.flow.t_start;
            let apply = |strategy| -> Result<Field, CliError> {
                let op = DiscreteOperator::assemble(kernel.as_ref(), &cfg.grid, t, strategy)
                    .context(|| format!("{} assembly", strategy.name()))?;
                op.apply(&w).context(|| format!("{} apply", strategy.name()))
            };
            let dense = apply(Strategy::Dense)?;
            let banded = relative_sup_distance(&apply(Strategy::Banded)?, &dense);
            s.verdict("operator.banded", banded <= OPERATOR_TOLERANCE);
            section["banded_vs_dense"] = json!(banded);
            if matches!(cfg.kernel.family, KernelFamily::PowerLaw { .. }) {
                let spectral = relative_sup_distance(&apply(Strategy::Spectral)?, &dense);
                s.verdict("operator.spectral", spectral <= OPERATOR_TOLERANCE);
                section["spectral_vs_dense"] = json!(spectral);
            }
        }
        s.measured("operator", section);
        Ok(())
    })
}

fn initial_for(cfg: &ExperimentConfig, seed: u64) -> Result<Field, CliError> {
    match &cfg.initial {
        InitialSource::Shape(shape) => Ok(initial_field(&cfg.grid, &draw_initial(*shape, seed))),
        InitialSource::File(p) => Ok(load_field(p, &cfg.grid).context(|| format!("loading {}", p.display()))?.0),
    }
}

fn run(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    let check_energy = !time_dependent(cfg);
    let results = session.phase("flow", |_| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let p = problem(cfg, kernel_for(cfg, seed)?, initial_for(cfg, seed)?, cfg.flow.t_start, cfg.flow.t_end);
                let traj = run_flow(&p, Sampling::Interval(cfg.flow.sample)).context(|| format!("flow for seed {seed}"))?;
                Ok((seed, traj))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut runs = Vec::new();
    for (seed, traj) in &results {
        let d = dissipation(traj, check_energy);
        session.verdict(format!("seed-{seed}.dissipation"), d.passed);
        session.curves.insert(format!("seed-{seed}"), energy_curve(traj));
        if cfg.write_fields {
            session.fields.insert(format!("seed-{seed}-final.csv"), write_csv(traj.last()).into_bytes());
        }
        let last = traj.records().last().expect("at least one record");
        runs.push(json!({
            "seed": seed,
            "dissipation": to_value(&d),
            "final": { "t": last.t, "l2": last.l2, "energy": last.energy, "min": last.min, "max": last.max, "mass": last.mass },
        }));
    }
    session.measured("runs", json!(runs));
    Ok(())
}

/// Persisted output of `calibrate`, read back by `diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub settings: EnsembleSettings,
    pub constants: CalibrationConstants,
    pub lemma3: Lemma3Constants,
    pub delta_formula: Tagged,
    pub binding: BindingFlags,
    pub lambda_constraint: LambdaConstraint,
    /// Recurrence constant fitted on the first 20 seeds.
    pub c_bar: Option<f64>,
}

pub const RECURRENCE_SEEDS: usize = 20;

fn calibration_for(cfg: &ExperimentConfig) -> Result<(CalibrationFile, Vec<SeedStatistics>), CliError> {
    let settings = cfg.ensemble();
    let outcome = calibrate(&settings, &cfg.seeds, cfg.mu, cfg.lambda).context(|| "calibration".into())?;
    let n = cfg.seeds.len().min(RECURRENCE_SEEDS);
    let rec = recurrence_fit(&settings, &cfg.seeds[..n], cfg.diagnose.k_max).context(|| "recurrence fit".into())?;
    let file = CalibrationFile {
        settings,
        constants: outcome.constants,
        lemma3: outcome.lemma3,
        delta_formula: outcome.delta_formula,
        binding: outcome.binding,
        lambda_constraint: outcome.lambda_constraint,
        c_bar: rec.c_bar,
    };
    Ok((file, outcome.statistics))
}

fn calibration_section(file: &CalibrationFile) -> serde_json::Value {
    let c = &file.constants;
    let l3 = &file.lemma3;
    json!({
        "constants": to_value(c),
        "delta_formula": to_value(&file.delta_formula),
        "binding": to_value(&file.binding),
        "lambda_constraint": {
            "lambda": to_value(&Tagged::fixed(file.lambda_constraint.lambda)),
            "bound": to_value(&Tagged::fixed(file.lambda_constraint.bound)),
            "satisfied": file.lambda_constraint.satisfied,
        },
        "lemma3": {
            "k0": l3.k0,
            "eps": to_value(&Tagged::fixed(l3.eps)),
            "eps_floor_binds": l3.eps_floor_binds,
            "lambda_star_formula": to_value(&Tagged::fixed(l3.lambda_star)),
        },
        "c_bar": file.c_bar.map(|c| to_value(&Tagged::calibrated(c))),
    })
}

fn calibrate_cmd(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    let (file, stats) = session.phase("calibrate", |_| calibration_for(cfg))?;
    session.verdict("calibration.unit_interval", file.constants.in_unit_interval());
    session.verdict("calibration.c_bar_finite", file.c_bar.is_some_and(f64::is_finite));
    session.section("calibration", calibration_section(&file), Provenance::Measured);
    if cfg.verbosity == Verbosity::Full {
        session.measured("statistics", to_value(&stats));
    }
    let mut text = serde_json::to_string_pretty(&file).expect("calibration serializes");
    text.push('\n');
    session.extra_files.insert("calibration.json".into(), text.into_bytes());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SeedDiagnosis {
    seed: u64,
    lemma1: serde_json::Value,
    corollary1: serde_json::Value,
    corollary2: serde_json::Value,
    lemma2: serde_json::Value,
    lemma3: serde_json::Value,
    energies: Vec<f64>,
    recurrence: serde_json::Value,
    consistent: bool,
}

fn diagnose(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    let settings = cfg.ensemble();
    let (file, source) = session.phase("calibration", |_| match &cfg.diagnose.calibration {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: CalibrationFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("calibration file `{}`: {e}", path.display())))?;
            Ok((file, "file"))
        }
        None => Ok((calibration_for(cfg)?.0, "inline")),
    })?;
    let mut cal = calibration_section(&file);
    cal["source"] = json!(source);
    cal["matches_ensemble"] = json!(file.settings == settings);
    session.section("calibration", cal, Provenance::Measured);

    let s = settings.order;
    let c = &file.constants;
    let d = &cfg.diagnose;
    let per_seed = session.phase("ensemble", |_| {
        cfg.seeds
            .par_iter()
            .map(|&seed| -> Result<SeedDiagnosis, CliError> {
                let ctx = |what: &str| format!("{what} for seed {seed}");
                let bump = ensemble_run(&settings, InitialShape::Bump, seed).context(|| ctx("bump run"))?;
                let step = ensemble_run(&settings, InitialShape::Step, seed).context(|| ctx("step run"))?;
                let l1 = verify_lemma1(&bump, s, c.eps0.value).context(|| ctx("lemma 1"))?;
                let c1 = verify_corollary1(&bump, s, &d.t0, c.eps0.value).context(|| ctx("corollary 1"))?;
                let c2 = verify_corollary2(&bump, s, c.delta.value).context(|| ctx("corollary 2"))?;
                let l2 = verify_lemma2(&step, s, c.lemma2()).context(|| ctx("lemma 2"))?;
                let l3 = verify_lemma3(&step, s, file.lemma3.eps, c.lambda.value, c.lambda_star.value)
                    .context(|| ctx("lemma 3"))?;
                let energies = truncated_energies(&bump, s, d.k_max).context(|| ctx("truncated energies"))?;
                let rec = check_recurrence(&energies.values, s, settings.dimension);
                let consistent = l1.verdict.is_consistent()
                    && c1.passed
                    && c2.verdict.is_consistent()
                    && l2.verdict.is_consistent()
                    && l3.verdict.is_consistent();
                Ok(SeedDiagnosis {
                    seed,
                    lemma1: to_value(&l1),
                    corollary1: to_value(&c1),
                    corollary2: to_value(&c2),
                    lemma2: to_value(&l2),
                    lemma3: to_value(&l3),
                    energies: energies.values,
                    recurrence: to_value(&rec),
                    consistent,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    for r in &per_seed {
        session.verdict(format!("seed-{}.lemmas", r.seed), r.consistent);
        session.curves.insert(
            format!("seed-{}-energies", r.seed),
            csv_table(&["k", "u_k"], r.energies.iter().enumerate().map(|(k, &u)| vec![k as f64, u])),
        );
    }
    session.measured("seeds_diagnosis", to_value(&per_seed));

    let osc = session.phase("oscillation", |_| {
        oscillation_sweep(&cfg.oscillation_ensemble(), &cfg.seeds, d.scale, d.levels).context(|| "oscillation sweep".into())
    })?;
    let mut fits = Vec::new();
    for (seed, rep) in cfg.seeds.iter().zip(&osc) {
        session.curves.insert(
            format!("seed-{seed}-oscillation"),
            csv_table(
                &["level", "radius", "osc"],
                rep.osc.iter().enumerate().map(|(k, &o)| vec![k as f64, rep.scale.powi(k as i32), o]),
            ),
        );
        fits.push(json!({ "seed": seed, "report": to_value(rep) }));
    }
    session.measured("oscillation", json!(fits));
    Ok(())
}

fn denoise(cfg: &ExperimentConfig, session: &mut Session) -> Result<(), CliError> {
    let path = cfg.denoise_input.as_ref().expect("validated");
    let (input, format) = load_field(path, &cfg.grid).context(|| format!("loading {}", path.display()))?;
    let kernel = kernel_for(cfg, cfg.seeds[0])?;
    let traj = session.phase("flow", |_| {
        let p = problem(cfg, kernel, input.clone(), 0.0, cfg.denoise_time);
        run_flow(&p, Sampling::EverySteps(usize::MAX)).context(|| "denoising flow".into())
    })?;
    let output = traj.last();
    let recs = traj.records();
    let (e0, e1) = (recs[0].energy, recs[recs.len() - 1].energy);
    let monotone = recs.windows(2).all(|p| p[1].energy <= p[0].energy + ENERGY_TOLERANCE);
    let in_range = output.min() >= input.min() - BRACKET_TOLERANCE && output.max() <= input.max() + BRACKET_TOLERANCE;
    let decreased = if e0 > 0.0 { e1 < e0 } else { e1 <= e0 };
    session.verdict("denoise.range", in_range);
    session.verdict("denoise.energy_monotone", monotone);
    session.verdict("denoise.energy_decreased", decreased);
    let bytes = match format {
        FieldFormat::Csv => write_csv(output).into_bytes(),
        FieldFormat::Pgm { binary, maxval } => write_pgm(output, binary, maxval).context(|| "writing PGM".into())?,
    };
    session.fields.insert(format!("denoised.{}", format.extension()), bytes);
    session.curves.insert("denoise-energy".into(), energy_curve(&traj));
    session.measured(
        "denoise",
        json!({
            "steps": recs.len() - 1,
            "input": { "min": input.min(), "max": input.max() },
            "output": { "min": output.min(), "max": output.max() },
            "energy": { "initial": e0, "final": e1 },
        }),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nlflow_core::grid::Grid;
    use nlflow_core::kernels::KernelSpec;

    #[test]
    fn dissipation_of_a_linear_run() {
        let grid = Grid::new(1, 16.0, 64).unwrap();
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 3)).unwrap();
        let init = Field::from_fn(grid, |x| if x[0] < 8.0 { 1.0 } else { -0.5 });
        let traj = run_flow(&FlowProblem::linear(k, init, 0.0, 0.5), Sampling::EverySteps(1)).unwrap();
        let d = dissipation(&traj, true);
        assert!(d.passed && d.steps > 1, "{d:?}");
    }
}
