//! Symmetric kernels pinched between two multiples of `|x - y|^{-(N+s)}`.
//!
//! Every kernel here belongs to the measurable class
//!
//! ```text
//! 1{|x-y| <= R} (1 - s/2) Λ^{-1} |x-y|^{-(N+s)} <= K(t,x,y) <= (1 - s/2) Λ |x-y|^{-(N+s)}
//! ```
//!
//! with `K(t,x,y) = K(t,y,x)`. Translation-invariant kernels satisfy the tighter
//! `Λ^{±1/2}` envelope.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{hash_unit, seeded_rng};

pub const DEFAULT_TRUNCATION_RADIUS: f64 = 3.0;
pub const DEFAULT_CELL_SIZE: f64 = 0.25;
pub const DEFAULT_EPOCH: f64 = 0.1;

/// Relative slack used when comparing samples against the envelope.
pub const ENVELOPE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `(1 - s/2) c |x-y|^{-(N+s)}` with `c ∈ [Λ^{-1/2}, Λ^{1/2}]`.
    PowerLaw { scale: f64 },
    /// Power-law profile times a seeded checkerboard multiplier in `[Λ^{-1}, Λ]`.
    RoughStatic { cell_size: f64 },
    /// As `RoughStatic`, resampled at every epoch of length `epoch`.
    RoughTimeDependent { cell_size: f64, epoch: f64 },
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::PowerLaw { .. } => "power-law",
            KernelFamily::RoughStatic { .. } => "rough-static",
            KernelFamily::RoughTimeDependent { .. } => "rough-time-dependent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dimension: usize,
    pub order: f64,
    pub ellipticity: f64,
    /// `f64::INFINITY` disables truncation.
    pub truncation_radius: f64,
    pub family: KernelFamily,
    pub seed: u64,
}

impl KernelSpec {
    pub fn power_law(dimension: usize, order: f64, ellipticity: f64, scale: f64) -> Self {
        Self {
            dimension,
            order,
            ellipticity,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
            family: KernelFamily::PowerLaw { scale },
            seed: 0,
        }
    }

    pub fn rough_static(dimension: usize, order: f64, ellipticity: f64, seed: u64) -> Self {
        Self {
            dimension,
            order,
            ellipticity,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
            family: KernelFamily::RoughStatic {
                cell_size: DEFAULT_CELL_SIZE,
            },
            seed,
        }
    }

    pub fn rough_time_dependent(dimension: usize, order: f64, ellipticity: f64, seed: u64) -> Self {
        Self {
            dimension,
            order,
            ellipticity,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
            family: KernelFamily::RoughTimeDependent {
                cell_size: DEFAULT_CELL_SIZE,
                epoch: DEFAULT_EPOCH,
            },
            seed,
        }
    }

    pub fn with_truncation(mut self, radius: f64) -> Self {
        self.truncation_radius = radius;
        self
    }

    /// Every violation of the parameter ranges, in field order.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if !(self.dimension == 1 || self.dimension == 2) {
            out.push(Error::UnsupportedDimension(self.dimension));
        }
        if !(self.order > 0.0 && self.order < 2.0) {
            out.push(invalid("order", format!("order out of (0,2): {}", self.order)));
        }
        if !(self.ellipticity > 1.0 && self.ellipticity.is_finite()) {
            out.push(invalid(
                "ellipticity",
                format!("ellipticity must exceed 1: {}", self.ellipticity),
            ));
        }
        if !(self.truncation_radius > 0.0) {
            out.push(invalid(
                "truncation_radius",
                format!("must be positive: {}", self.truncation_radius),
            ));
        }
        match self.family {
            KernelFamily::PowerLaw { scale } => {
                let lo = self.ellipticity.powf(-0.5);
                let hi = self.ellipticity.powf(0.5);
                if !(scale >= lo && scale <= hi) {
                    out.push(invalid(
                        "scale",
                        format!("power-law scale {scale} outside [{lo}, {hi}]"),
                    ));
                }
            }
            KernelFamily::RoughStatic { cell_size } => {
                if !(cell_size > 0.0 && cell_size.is_finite()) {
                    out.push(invalid("cell_size", format!("must be positive: {cell_size}")));
                }
            }
            KernelFamily::RoughTimeDependent { cell_size, epoch } => {
                if !(cell_size > 0.0 && cell_size.is_finite()) {
                    out.push(invalid("cell_size", format!("must be positive: {cell_size}")));
                }
                if !(epoch > 0.0 && epoch.is_finite()) {
                    out.push(invalid("epoch", format!("must be positive: {epoch}")));
                }
            }
        }
        out
    }
}

/// A symmetric kernel `K(t, x, y)`.
///
/// `eval` receives the two positions and their distance `r` separately so that the
/// same kernel can be evaluated in free space (`r = |x - y|`) and on a torus
/// (`r` = periodic distance, `x`, `y` canonical node positions).
pub trait Kernel: Send + Sync {
    fn dimension(&self) -> usize;
    fn order(&self) -> f64;
    fn ellipticity(&self) -> f64;
    fn truncation_radius(&self) -> f64;

    /// Bounds `(lo, hi)` on `K r^{N+s} / (1 - s/2)` inside the truncation radius.
    fn envelope(&self) -> (f64, f64) {
        let lambda = self.ellipticity();
        if self.is_translation_invariant() {
            (lambda.powf(-0.5), lambda.powf(0.5))
        } else {
            (1.0 / lambda, lambda)
        }
    }

    /// True when `K(t, x, y)` depends on `|x - y|` only.
    fn is_translation_invariant(&self) -> bool {
        false
    }

    /// Piecewise-constant time label: the kernel is identical for equal keys.
    fn time_key(&self, _t: f64) -> i64 {
        0
    }

    fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64;

    /// `(1 - s/2) |r|^{-(N+s)}`, the reference profile.
    fn profile(&self, r: f64) -> f64 {
        (1.0 - 0.5 * self.order()) * r.powf(-(self.dimension() as f64 + self.order()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawKernel {
    dimension: usize,
    order: f64,
    ellipticity: f64,
    truncation_radius: f64,
    scale: f64,
    coefficient: f64,
}

impl PowerLawKernel {
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Kernel for PowerLawKernel {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn order(&self) -> f64 {
        self.order
    }
    fn ellipticity(&self) -> f64 {
        self.ellipticity
    }
    fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }
    fn is_translation_invariant(&self) -> bool {
        true
    }
    fn eval(&self, _t: f64, _x: &[f64], _y: &[f64], r: f64) -> f64 {
        if r <= 0.0 || r > self.truncation_radius {
            return 0.0;
        }
        self.coefficient * r.powf(-(self.dimension as f64 + self.order))
    }
}

/// Seeded checkerboard multiplier on `(x, y)`-space.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughMultiplier {
    pub cell_size: f64,
    pub ellipticity: f64,
    pub seed: u64,
}

impl RoughMultiplier {
    /// Raw cell value in `[Λ^{-1}, Λ)`, log-uniform.
    fn cell_value(&self, epoch: i64, a: &[f64], b: &[f64]) -> f64 {
        let mut coords = [0i64; 5];
        let n = a.len();
        for (k, v) in a.iter().chain(b).enumerate() {
            coords[k] = (v / self.cell_size).floor() as i64;
        }
        coords[2 * n] = epoch;
        let u = hash_unit(self.seed, &coords[..2 * n + 1]);
        self.ellipticity.powf(2.0 * u - 1.0)
    }

    /// Symmetrized multiplier `(v(cell(x,y)) + v(cell(y,x))) / 2`.
    pub fn value(&self, epoch: i64, x: &[f64], y: &[f64]) -> f64 {
        let a = self.cell_value(epoch, x, y);
        let b = self.cell_value(epoch, y, x);
        // a + b == b + a, so the result is exactly symmetric.
        0.5 * (a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughKernel {
    dimension: usize,
    order: f64,
    ellipticity: f64,
    truncation_radius: f64,
    multiplier: RoughMultiplier,
    epoch: Option<f64>,
    profile_coefficient: f64,
}

impl RoughKernel {
    pub fn multiplier(&self) -> &RoughMultiplier {
        &self.multiplier
    }

    fn epoch_index(&self, t: f64) -> i64 {
        match self.epoch {
            Some(len) => (t / len).floor() as i64,
            None => 0,
        }
    }
}

impl Kernel for RoughKernel {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn order(&self) -> f64 {
        self.order
    }
    fn ellipticity(&self) -> f64 {
        self.ellipticity
    }
    fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }
    fn time_key(&self, t: f64) -> i64 {
        self.epoch_index(t)
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
        if r <= 0.0 || r > self.truncation_radius {
            return 0.0;
        }
        let a = self.multiplier.value(self.epoch_index(t), x, y);
        a * self.profile_coefficient * r.powf(-(self.dimension as f64 + self.order))
    }
}

/// Kernel built from a [`KernelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum StandardKernel {
    PowerLaw(PowerLawKernel),
    Rough(RoughKernel),
}

impl Kernel for StandardKernel {
    fn dimension(&self) -> usize {
        match self {
            StandardKernel::PowerLaw(k) => k.dimension(),
            StandardKernel::Rough(k) => k.dimension(),
        }
    }
    fn order(&self) -> f64 {
        match self {
            StandardKernel::PowerLaw(k) => k.order(),
            StandardKernel::Rough(k) => k.order(),
        }
    }
    fn ellipticity(&self) -> f64 {
        match self {
            StandardKernel::PowerLaw(k) => k.ellipticity(),
            StandardKernel::Rough(k) => k.ellipticity(),
        }
    }
    fn truncation_radius(&self) -> f64 {
        match self {
            StandardKernel::PowerLaw(k) => k.truncation_radius(),
            StandardKernel::Rough(k) => k.truncation_radius(),
        }
    }
    fn is_translation_invariant(&self) -> bool {
        matches!(self, StandardKernel::PowerLaw(_))
    }
    fn time_key(&self, t: f64) -> i64 {
        match self {
            StandardKernel::PowerLaw(_) => 0,
            StandardKernel::Rough(k) => k.time_key(t),
        }
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
        match self {
            StandardKernel::PowerLaw(k) => k.eval(t, x, y, r),
            StandardKernel::Rough(k) => k.eval(t, x, y, r),
        }
    }
}

/// Builds the evaluator described by `spec`.
pub fn make_kernel(spec: &KernelSpec) -> Result<Arc<StandardKernel>> {
    if let Some(err) = spec.violations().into_iter().next() {
        return Err(err);
    }
    let profile_coefficient = 1.0 - 0.5 * spec.order;
    let kernel = match spec.family {
        KernelFamily::PowerLaw { scale } => StandardKernel::PowerLaw(PowerLawKernel {
            dimension: spec.dimension,
            order: spec.order,
            ellipticity: spec.ellipticity,
            truncation_radius: spec.truncation_radius,
            scale,
            coefficient: profile_coefficient * scale,
        }),
        KernelFamily::RoughStatic { cell_size } => StandardKernel::Rough(RoughKernel {
            dimension: spec.dimension,
            order: spec.order,
            ellipticity: spec.ellipticity,
            truncation_radius: spec.truncation_radius,
            multiplier: RoughMultiplier {
                cell_size,
                ellipticity: spec.ellipticity,
                seed: spec.seed,
            },
            epoch: None,
            profile_coefficient,
        }),
        KernelFamily::RoughTimeDependent { cell_size, epoch } => {
            StandardKernel::Rough(RoughKernel {
                dimension: spec.dimension,
                order: spec.order,
                ellipticity: spec.ellipticity,
                truncation_radius: spec.truncation_radius,
                multiplier: RoughMultiplier {
                    cell_size,
                    ellipticity: spec.ellipticity,
                    seed: spec.seed,
                },
                epoch: Some(epoch),
                profile_coefficient,
            })
        }
    };
    Ok(Arc::new(kernel))
}

/// Outcome of an envelope/symmetry scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelValidation {
    pub samples: usize,
    pub max_symmetry_defect: f64,
    /// Min/max of `K r^{N+s} / (1 - s/2)` over samples inside the truncation radius.
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Largest value seen beyond the truncation radius (0 when truncation holds).
    pub max_outside: f64,
    pub envelope: (f64, f64),
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub symmetric: bool,
    pub truncation_ok: bool,
}

impl KernelValidation {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok && self.symmetric && self.truncation_ok
    }
}

pub(crate) struct ValidationAccumulator {
    envelope: (f64, f64),
    samples: usize,
    max_symmetry_defect: f64,
    min_ratio: f64,
    max_ratio: f64,
    max_outside: f64,
    upper_ok: bool,
}

impl ValidationAccumulator {
    pub(crate) fn new(envelope: (f64, f64)) -> Self {
        Self {
            envelope,
            samples: 0,
            max_symmetry_defect: 0.0,
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            max_outside: 0.0,
            upper_ok: true,
        }
    }

    pub(crate) fn push<K: Kernel + ?Sized>(&mut self, kernel: &K, t: f64, x: &[f64], y: &[f64], r: f64) {
        let kxy = kernel.eval(t, x, y, r);
        let kyx = kernel.eval(t, y, x, r);
        self.samples += 1;
        self.max_symmetry_defect = self.max_symmetry_defect.max((kxy - kyx).abs());
        let profile = kernel.profile(r);
        let (_, hi) = self.envelope;
        for k in [kxy, kyx] {
            let ratio = k / profile;
            if ratio > hi * (1.0 + ENVELOPE_TOLERANCE) || !ratio.is_finite() || k < 0.0 {
                self.upper_ok = false;
            }
            if r <= kernel.truncation_radius() {
                self.min_ratio = self.min_ratio.min(ratio);
                self.max_ratio = self.max_ratio.max(ratio);
            } else {
                self.max_outside = self.max_outside.max(k);
            }
        }
    }

    pub(crate) fn finish(self) -> KernelValidation {
        let (lo, hi) = self.envelope;
        let inside = self.min_ratio.is_finite();
        KernelValidation {
            samples: self.samples,
            max_symmetry_defect: self.max_symmetry_defect,
            min_ratio: self.min_ratio,
            max_ratio: self.max_ratio,
            max_outside: self.max_outside,
            envelope: self.envelope,
            lower_ok: !inside || self.min_ratio >= lo * (1.0 - ENVELOPE_TOLERANCE),
            upper_ok: self.upper_ok && (!inside || self.max_ratio <= hi * (1.0 + ENVELOPE_TOLERANCE)),
            symmetric: self.max_symmetry_defect == 0.0,
            truncation_ok: self.max_outside == 0.0,
        }
    }
}

/// Scans `sample_count` random free-space pairs for symmetry and envelope violations.
///
/// Pairs are drawn with distances up to 1.25 times the truncation radius (or 8 when
/// untruncated) so the truncation itself is exercised.
pub fn validate_kernel<K: Kernel + ?Sized>(kernel: &K, sample_count: usize, seed: u64) -> KernelValidation {
    let n = kernel.dimension();
    let reach = if kernel.truncation_radius().is_finite() {
        1.25 * kernel.truncation_radius()
    } else {
        8.0
    };
    let mut rng = seeded_rng(seed);
    let mut acc = ValidationAccumulator::new(kernel.envelope());
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..sample_count.max(1) {
        let t = rng.gen_range(-3.0..3.0);
        for xi in x.iter_mut() {
            *xi = rng.gen_range(0.0..2.0 * reach);
        }
        let r = rng.gen_range(1e-3..reach);
        if n == 1 {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            y[0] = x[0] + sign * r;
        } else {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            y[0] = x[0] + r * angle.cos();
            y[1] = x[1] + r * angle.sin();
        }
        acc.push(kernel, t, &x, &y, r);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scaled<'a>(&'a StandardKernel, f64);

    impl Kernel for Scaled<'_> {
        fn dimension(&self) -> usize {
            self.0.dimension()
        }
        fn order(&self) -> f64 {
            self.0.order()
        }
        fn ellipticity(&self) -> f64 {
            self.0.ellipticity()
        }
        fn truncation_radius(&self) -> f64 {
            self.0.truncation_radius()
        }
        fn is_translation_invariant(&self) -> bool {
            self.0.is_translation_invariant()
        }
        fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
            self.1 * self.0.eval(t, x, y, r)
        }
    }

    /// Breaks symmetry by adding 0.1 to one orientation of every pair.
    struct Skewed<'a>(&'a StandardKernel);

    impl Kernel for Skewed<'_> {
        fn dimension(&self) -> usize {
            self.0.dimension()
        }
        fn order(&self) -> f64 {
            self.0.order()
        }
        fn ellipticity(&self) -> f64 {
            self.0.ellipticity()
        }
        fn truncation_radius(&self) -> f64 {
            self.0.truncation_radius()
        }
        fn eval(&self, t: f64, x: &[f64], y: &[f64], r: f64) -> f64 {
            let base = self.0.eval(t, x, y, r);
            if x[0] < y[0] {
                base + 0.1
            } else {
                base
            }
        }
    }

    #[test]
    fn power_law_direct_formula() {
        let k = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        assert_eq!(k.eval(0.0, &[0.0], &[1.0], 1.0), 0.5);
    }

    #[test]
    fn truncation_zeroes_every_family() {
        let specs = [
            KernelSpec::power_law(1, 1.0, 4.0, 1.0),
            KernelSpec::rough_static(1, 1.0, 4.0, 3),
            KernelSpec::rough_time_dependent(2, 0.5, 4.0, 3),
        ];
        for spec in specs {
            let k = make_kernel(&spec).unwrap();
            let r = spec.truncation_radius + 0.1;
            let y = vec![r; spec.dimension];
            let x = vec![0.0; spec.dimension];
            assert_eq!(k.eval(0.3, &x, &y, r), 0.0, "{:?}", spec.family);
        }
    }

    #[test]
    fn rough_static_stays_in_envelope() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 42)).unwrap();
        let report = validate_kernel(k.as_ref(), 10_000, 9);
        assert!(report.passed(), "{report:?}");
        assert!(report.min_ratio >= 0.25 && report.max_ratio <= 4.0);
        // the multiplier is genuinely rough
        assert!(report.max_ratio / report.min_ratio > 4.0);
    }

    #[test]
    fn power_law_ratio_is_identically_one() {
        let k = make_kernel(&KernelSpec::power_law(2, 0.7, 4.0, 1.0)).unwrap();
        let report = validate_kernel(k.as_ref(), 2_000, 1);
        assert!(report.passed());
        assert!((report.min_ratio - 1.0).abs() < 1e-12);
        assert!((report.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inflated_kernel_fails_upper_bound() {
        let k = make_kernel(&KernelSpec::power_law(1, 1.0, 4.0, 1.0)).unwrap();
        let report = validate_kernel(&Scaled(&k, 8.0), 500, 2);
        assert!(!report.upper_ok);
        assert!(!report.passed());
    }

    #[test]
    fn injected_asymmetry_is_reported() {
        let k = make_kernel(&KernelSpec::rough_static(1, 1.0, 4.0, 5)).unwrap();
        let report = validate_kernel(&Skewed(&k), 500, 2);
        assert!((report.max_symmetry_defect - 0.1).abs() < 1e-9, "{}", report.max_symmetry_defect);
        assert!(!report.symmetric);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut spec = KernelSpec::power_law(1, 2.5, 4.0, 1.0);
        assert!(matches!(make_kernel(&spec), Err(Error::InvalidParameter { name: "order", .. })));
        spec.order = 1.0;
        spec.ellipticity = 1.0;
        assert!(make_kernel(&spec).is_err());
        spec.ellipticity = 4.0;
        spec.dimension = 3;
        assert!(matches!(make_kernel(&spec), Err(Error::UnsupportedDimension(3))));
        let spec = KernelSpec::power_law(1, 1.0, 4.0, 3.0);
        assert!(make_kernel(&spec).is_err());
    }

    #[test]
    fn time_dependent_kernel_changes_between_epochs_only() {
        let k = make_kernel(&KernelSpec::rough_time_dependent(1, 1.0, 4.0, 11)).unwrap();
        let (x, y) = ([1.1], [1.7]);
        let a = k.eval(0.01, &x, &y, 0.6);
        let b = k.eval(0.09, &x, &y, 0.6);
        assert_eq!(a.to_bits(), b.to_bits());
        let changed = (1..20).any(|e| k.eval(0.1 * e as f64 + 0.05, &x, &y, 0.6) != a);
        assert!(changed);
        assert_eq!(k.time_key(0.05), 0);
        assert_eq!(k.time_key(-0.05), -1);
    }

    #[test]
    fn equal_specs_give_bitwise_equal_samples() {
        let spec = KernelSpec::rough_time_dependent(2, 1.3, 3.0, 77);
        let a = make_kernel(&spec).unwrap();
        let b = make_kernel(&spec.clone()).unwrap();
        let mut rng = seeded_rng(4);
        for _ in 0..1000 {
            let x: [f64; 2] = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
            let y = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
            let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            let t = rng.gen_range(-1.0..1.0);
            assert_eq!(a.eval(t, &x, &y, r).to_bits(), b.eval(t, &x, &y, r).to_bits());
        }
    }
}
