//! Explicit time integration of the linear flow `w_t = Lw` and the nonlinear flow
//! `θ_t = Σ φ'(θ(y) - θ(x)) K h^N`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, Grid};
use crate::kernels::Kernel;
use crate::operator::{DiscreteOperator, OperatorCache, Strategy};
use crate::potentials::Potential;

/// Safety factor applied to the convex-combination bound.
pub const DT_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    #[default]
    Euler,
    Heun,
}

impl Stepper {
    pub fn name(&self) -> &'static str {
        match self {
            Stepper::Euler => "euler",
            Stepper::Heun => "heun",
        }
    }
}

#[derive(Clone)]
pub enum FlowKind {
    Linear {
        kernel: Arc<dyn Kernel>,
    },
    Nonlinear {
        potential: Arc<dyn Potential>,
        kernel: Arc<dyn Kernel>,
    },
}

impl FlowKind {
    pub fn kernel(&self) -> &Arc<dyn Kernel> {
        match self {
            FlowKind::Linear { kernel } | FlowKind::Nonlinear { kernel, .. } => kernel,
        }
    }

    pub fn potential(&self) -> Option<&Arc<dyn Potential>> {
        match self {
            FlowKind::Linear { .. } => None,
            FlowKind::Nonlinear { potential, .. } => Some(potential),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, FlowKind::Linear { .. })
    }
}

impl std::fmt::Debug for FlowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowKind::Linear { .. } => f.write_str("Linear"),
            FlowKind::Nonlinear { .. } => f.write_str("Nonlinear"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Record every `n` steps (and always the final state).
    EverySteps(usize),
    /// Record at `t_start + k Δ`; steps are shortened to land on these times.
    Interval(f64),
}

#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub kind: FlowKind,
    pub initial: Field,
    pub t_start: f64,
    pub t_end: f64,
    pub stepper: Stepper,
    pub strategy: Strategy,
    /// Fixed step; `None` uses the stable step of the current operator.
    pub dt: Option<f64>,
    /// Record the energy at every step (costs one extra double sum per step).
    pub track_energy: bool,
}

impl FlowProblem {
    pub fn linear(kernel: Arc<dyn Kernel>, initial: Field, t_start: f64, t_end: f64) -> Self {
        Self {
            kind: FlowKind::Linear { kernel },
            initial,
            t_start,
            t_end,
            stepper: Stepper::Euler,
            strategy: Strategy::Banded,
            dt: None,
            track_energy: true,
        }
    }

    pub fn nonlinear(
        potential: Arc<dyn Potential>,
        kernel: Arc<dyn Kernel>,
        initial: Field,
        t_start: f64,
        t_end: f64,
    ) -> Self {
        Self {
            kind: FlowKind::Nonlinear { potential, kernel },
            initial,
            t_start,
            t_end,
            stepper: Stepper::Euler,
            strategy: Strategy::Banded,
            dt: None,
            track_energy: true,
        }
    }

    pub fn with_stepper(mut self, stepper: Stepper) -> Self {
        self.stepper = stepper;
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn without_energy(mut self) -> Self {
        self.track_energy = false;
        self
    }

    pub fn grid(&self) -> &Grid {
        self.initial.grid()
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return Err(invalid(
                "time_span",
                format!("need t_start < t_end, got [{}, {}]", self.t_start, self.t_end),
            ));
        }
        if !self.initial.is_finite() {
            return Err(Error::NonFiniteState { step: 0 });
        }
        let kernel = self.kind.kernel();
        if kernel.dimension() != self.grid().dimension() {
            return Err(Error::DimensionMismatch {
                expected: format!("N = {}", self.grid().dimension()),
                found: format!("kernel N = {}", kernel.dimension()),
            });
        }
        if let FlowKind::Nonlinear { .. } = self.kind {
            if !kernel.is_translation_invariant() {
                return Err(invalid(
                    "kernel",
                    "the nonlinear flow requires a translation-invariant kernel",
                ));
            }
            if self.strategy == Strategy::Spectral {
                return Err(Error::StrategyMismatch);
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("dt", format!("dt must be positive: {dt}")));
            }
        }
        Ok(())
    }
}

/// Multiplier `λ_φ` of the row sum in the step bound: `sup φ''`, or 1 for the linear flow.
pub fn flux_lipschitz(potential: Option<&dyn Potential>) -> f64 {
    potential.map_or(1.0, |p| p.second_derivative_bound())
}

/// `0.9 / max_x (λ_φ Σ_y W_xy)` for an assembled operator.
pub fn stable_dt_for(op: &DiscreteOperator, potential: Option<&dyn Potential>) -> Result<f64> {
    let rate = flux_lipschitz(potential) * op.max_row_sum();
    if rate > 0.0 && rate.is_finite() {
        Ok(DT_SAFETY / rate)
    } else {
        Err(Error::DegenerateKernel)
    }
}

/// Stable step of `kernel` on `grid` at `t = 0`.
pub fn stable_dt<K: Kernel + ?Sized>(kernel: &K, grid: &Grid, potential: Option<&dyn Potential>) -> Result<f64> {
    let op = DiscreteOperator::assemble(kernel, grid, 0.0, Strategy::Banded)?;
    stable_dt_for(&op, potential)
}

fn check_dt(op: &DiscreteOperator, potential: Option<&dyn Potential>, dt: f64) -> Result<()> {
    let rate = flux_lipschitz(potential) * op.max_row_sum();
    if rate == 0.0 {
        return Ok(());
    }
    let bound = 1.0 / rate;
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::UnstableStep { dt, bound });
    }
    Ok(())
}

fn axpy(w: &Field, dt: f64, rate: &Field) -> Field {
    w.zip_map(rate, |a, b| a + dt * b)
}

fn increment(op: &DiscreteOperator, potential: Option<&dyn Potential>, w: &Field) -> Result<Field> {
    match potential {
        None => op.apply(w),
        Some(p) => op.apply_flux(w, |d| p.first(d)),
    }
}

/// One explicit step with an assembled operator.
pub fn advance(
    op: &DiscreteOperator,
    potential: Option<&dyn Potential>,
    w: &Field,
    dt: f64,
    stepper: Stepper,
) -> Result<Field> {
    check_dt(op, potential, dt)?;
    let k1 = increment(op, potential, w)?;
    let w1 = axpy(w, dt, &k1);
    match stepper {
        Stepper::Euler => Ok(w1),
        Stepper::Heun => {
            let k2 = increment(op, potential, &w1)?;
            let w2 = axpy(&w1, dt, &k2);
            Ok(w.zip_map(&w2, |a, b| 0.5 * (a + b)))
        }
    }
}

/// `w + dt Lw` (Euler) or the Heun average, with the kernel frozen at time `t`.
pub fn step_linear<K: Kernel + ?Sized>(w: &Field, kernel: &K, t: f64, dt: f64, stepper: Stepper) -> Result<Field> {
    let op = DiscreteOperator::assemble(kernel, w.grid(), t, Strategy::Banded)?;
    advance(&op, None, w, dt, stepper)
}

/// `θ + dt Σ φ'(θ(y) - θ(x)) K h^N` (or its Heun average).
pub fn step_nonlinear<K, P>(theta: &Field, potential: &P, kernel: &K, dt: f64, stepper: Stepper) -> Result<Field>
where
    K: Kernel + ?Sized,
    P: Potential,
{
    if !kernel.is_translation_invariant() {
        return Err(invalid(
            "kernel",
            "the nonlinear flow requires a translation-invariant kernel",
        ));
    }
    let op = DiscreteOperator::assemble(kernel, theta.grid(), 0.0, Strategy::Banded)?;
    advance(&op, Some(potential as &dyn Potential), theta, dt, stepper)
}

/// `E(w) = B[w, w]` for the linear flow, `V(θ)` for the nonlinear one.
pub fn energy(op: &DiscreteOperator, potential: Option<&dyn Potential>, w: &Field) -> Result<f64> {
    match potential {
        None => op.bilinear(w, w),
        Some(p) => op.variational_energy(w, p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Time after the step.
    pub t: f64,
    pub dt: f64,
    pub l2: f64,
    /// `NaN` when energy tracking is off.
    pub energy: f64,
    pub min: f64,
    pub max: f64,
    pub mass: f64,
}

impl StepRecord {
    fn of(step: usize, t: f64, dt: f64, w: &Field, energy: f64) -> Self {
        Self {
            step,
            t,
            dt,
            l2: w.l2_norm(),
            energy,
            min: w.min(),
            max: w.max(),
            mass: w.mass(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    fields: Vec<Field>,
    records: Vec<StepRecord>,
}

impl Trajectory {
    /// Builds a trajectory from samples (used for injected test data and views).
    pub fn from_samples(times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::TrajectoryMismatch(format!(
                "{} times for {} fields",
                times.len(),
                fields.len()
            )));
        }
        if times.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::TrajectoryMismatch(
                "sample times must be strictly increasing".into(),
            ));
        }
        let grid = *fields[0].grid();
        for f in &fields {
            if *f.grid() != grid {
                return Err(Error::GridMismatch("samples on different grids".into()));
            }
            if !f.is_finite() {
                return Err(Error::NonFiniteState { step: 0 });
            }
        }
        Ok(Self {
            times,
            fields,
            records: Vec::new(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &Field {
        &self.fields[0]
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory is never empty")
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Index of the sample whose time is within `tol` of `t`.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Samples with `a <= t <= b` (up to a small relative tolerance).
    pub fn window(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, &Field)> {
        let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.times
            .iter()
            .copied()
            .zip(self.fields.iter())
            .filter(move |(t, _)| *t >= a - tol && *t <= b + tol)
    }

    /// Applies `f` to every sample value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            fields: self.fields.iter().map(|w| w.map(&f)).collect(),
            records: Vec::new(),
        }
    }
}

/// Integrates `problem` over its time span.
pub fn run_flow(problem: &FlowProblem, sampling: Sampling) -> Result<Trajectory> {
    problem.validate()?;
    match sampling {
        Sampling::EverySteps(0) => return Err(invalid("sample_every", "must be at least 1")),
        Sampling::Interval(d) if !(d > 0.0 && d.is_finite()) => {
            return Err(invalid("sample_interval", format!("must be positive: {d}")))
        }
        _ => {}
    }
    let grid = *problem.grid();
    let kernel = problem.kind.kernel().clone();
    let potential = problem.kind.potential().cloned();
    let pot = potential.as_deref();
    let mut cache = OperatorCache::new();

    let span = problem.t_end - problem.t_start;
    let tol = 1e-12 * (1.0 + problem.t_start.abs().max(problem.t_end.abs()));
    let mut t = problem.t_start;
    let mut w = problem.initial.clone();
    let op = cache.get(kernel.as_ref(), &grid, t, problem.strategy)?;
    let e0 = if problem.track_energy {
        energy(op, pot, &w)?
    } else {
        f64::NAN
    };
    let mut records = vec![StepRecord::of(0, t, 0.0, &w, e0)];
    let mut times = vec![t];
    let mut fields = vec![w.clone()];

    let mut step = 0usize;
    let mut next_sample = 1usize;
    while problem.t_end - t > tol {
        let op = cache.get(kernel.as_ref(), &grid, t, problem.strategy)?;
        let mut dt = match problem.dt {
            Some(dt) => dt,
            None => stable_dt_for(op, pot)?,
        };
        let target = match sampling {
            Sampling::Interval(d) => (problem.t_start + next_sample as f64 * d).min(problem.t_end),
            Sampling::EverySteps(_) => problem.t_end,
        };
        let mut landed = false;
        if t + dt >= target - tol {
            dt = target - t;
            landed = true;
        }
        w = advance(op, pot, &w, dt, problem.stepper)?;
        step += 1;
        t = if landed { target } else { t + dt };
        if !w.is_finite() {
            return Err(Error::NonFiniteState { step });
        }
        let e = if problem.track_energy {
            // the energy after the step uses the kernel in force at the new time
            let op = cache.get(kernel.as_ref(), &grid, t, problem.strategy)?;
            energy(op, pot, &w)?
        } else {
            f64::NAN
        };
        records.push(StepRecord::of(step, t, dt, &w, e));
        let finished = problem.t_end - t <= tol;
        let record = match sampling {
            Sampling::EverySteps(n) => step.is_multiple_of(n) || finished,
            Sampling::Interval(_) => {
                if landed {
                    next_sample += 1;
                }
                landed
            }
        };
        if record {
            times.push(t);
            fields.push(w.clone());
        }
        if step > 100_000_000 || !(span > 0.0) {
            return Err(Error::UnderResolved("step limit exceeded".into()));
        }
    }
    Ok(Trajectory {
        times,
        fields,
        records,
    })
}
