//! Even convex potentials `φ` with `Λ^{-1/2} <= φ'' <= Λ^{1/2}` and `φ(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialFamily {
    /// `φ(x) = x²/2`.
    Quadratic,
    /// `φ''(x) = a + b / (1 + x²)` with `a = Λ^{-1/2}`, `b = Λ^{1/2} - Λ^{-1/2}`.
    SmoothedHuber,
}

impl PotentialFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialFamily::Quadratic => "quadratic",
            PotentialFamily::SmoothedHuber => "smoothed-huber",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Derivative {
    type Error = crate::error::Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            0 => Ok(Derivative::Value),
            1 => Ok(Derivative::First),
            2 => Ok(Derivative::Second),
            _ => Err(invalid("derivative", format!("expected 0, 1 or 2, got {order}"))),
        }
    }
}

/// A potential evaluator. Implemented by [`PotentialSpec`] and by test doubles.
pub trait Potential: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn first(&self, x: f64) -> f64;
    fn second(&self, x: f64) -> f64;
    fn ellipticity(&self) -> f64;

    /// Upper bound on `φ''` used for time-step control.
    fn second_derivative_bound(&self) -> f64 {
        self.ellipticity().sqrt()
    }

    /// `Some(c)` when `φ'' ≡ c`.
    fn constant_second(&self) -> Option<f64> {
        None
    }

    fn eval(&self, x: f64, derivative: Derivative) -> f64 {
        match derivative {
            Derivative::Value => self.value(x),
            Derivative::First => self.first(x),
            Derivative::Second => self.second(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub ellipticity: f64,
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily, ellipticity: f64) -> Result<Self> {
        if !(ellipticity > 1.0 && ellipticity.is_finite()) {
            return Err(invalid(
                "ellipticity",
                format!("ellipticity must exceed 1: {ellipticity}"),
            ));
        }
        Ok(Self {
            family,
            ellipticity,
        })
    }

    pub fn quadratic(ellipticity: f64) -> Result<Self> {
        Self::new(PotentialFamily::Quadratic, ellipticity)
    }

    pub fn smoothed_huber(ellipticity: f64) -> Result<Self> {
        Self::new(PotentialFamily::SmoothedHuber, ellipticity)
    }

    fn huber_coefficients(&self) -> (f64, f64) {
        let a = self.ellipticity.powf(-0.5);
        let b = self.ellipticity.powf(0.5) - a;
        (a, b)
    }
}

impl Potential for PotentialSpec {
    fn value(&self, x: f64) -> f64 {
        match self.family {
            PotentialFamily::Quadratic => 0.5 * x * x,
            PotentialFamily::SmoothedHuber => {
                let (a, b) = self.huber_coefficients();
                0.5 * a * x * x + b * (x * x.atan() - 0.5 * x.mul_add(x, 1.0).ln())
            }
        }
    }

    fn first(&self, x: f64) -> f64 {
        match self.family {
            PotentialFamily::Quadratic => x,
            PotentialFamily::SmoothedHuber => {
                let (a, b) = self.huber_coefficients();
                a * x + b * x.atan()
            }
        }
    }

    fn second(&self, x: f64) -> f64 {
        match self.family {
            PotentialFamily::Quadratic => 1.0,
            PotentialFamily::SmoothedHuber => {
                let (a, b) = self.huber_coefficients();
                a + b / x.mul_add(x, 1.0)
            }
        }
    }

    fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    fn second_derivative_bound(&self) -> f64 {
        match self.family {
            PotentialFamily::Quadratic => 1.0,
            PotentialFamily::SmoothedHuber => self.ellipticity.sqrt(),
        }
    }

    fn constant_second(&self) -> Option<f64> {
        match self.family {
            PotentialFamily::Quadratic => Some(1.0),
            PotentialFamily::SmoothedHuber => None,
        }
    }
}

pub fn eval_potential<P: Potential + ?Sized>(p: &P, x: f64, derivative: Derivative) -> f64 {
    p.eval(x, derivative)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialValidation {
    pub min_second: f64,
    pub max_second: f64,
    pub max_even_defect: f64,
    pub max_odd_defect: f64,
    pub value_at_zero: f64,
    /// max |φ''(x) - (φ'(x+h) - φ'(x-h)) / 2h|
    pub max_fd_defect: f64,
    pub bounds: (f64, f64),
    pub passed: bool,
}

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Checks the hypotheses on a uniform grid over `[-span, span]`.
pub fn validate_potential<P: Potential + ?Sized>(
    p: &P,
    grid_span: f64,
    grid_points: usize,
    fd_step: f64,
) -> Result<PotentialValidation> {
    if grid_points < 3 {
        return Err(invalid("grid_points", "need at least 3 points"));
    }
    let lambda = p.ellipticity();
    let bounds = (lambda.powf(-0.5), lambda.powf(0.5));
    let mut min_second = f64::INFINITY;
    let mut max_second = f64::NEG_INFINITY;
    let mut max_even_defect = 0.0f64;
    let mut max_odd_defect = 0.0f64;
    let mut max_fd_defect = 0.0f64;
    let step = 2.0 * grid_span / (grid_points - 1) as f64;
    for i in 0..grid_points {
        let x = -grid_span + step * i as f64;
        let d2 = p.second(x);
        min_second = min_second.min(d2);
        max_second = max_second.max(d2);
        max_even_defect = max_even_defect.max((p.value(x) - p.value(-x)).abs());
        max_odd_defect = max_odd_defect.max((p.first(x) + p.first(-x)).abs());
        let fd = (p.first(x + fd_step) - p.first(x - fd_step)) / (2.0 * fd_step);
        max_fd_defect = max_fd_defect.max((fd - d2).abs());
    }
    let value_at_zero = p.value(0.0).abs();
    let tol = 1e-12;
    let passed = min_second >= bounds.0 * (1.0 - tol)
        && max_second <= bounds.1 * (1.0 + tol)
        && value_at_zero == 0.0
        && max_even_defect == 0.0;
    Ok(PotentialValidation {
        min_second,
        max_second,
        max_even_defect,
        max_odd_defect,
        value_at_zero,
        max_fd_defect,
        bounds,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quartic;

    impl Potential for Quartic {
        fn value(&self, x: f64) -> f64 {
            x.powi(4)
        }
        fn first(&self, x: f64) -> f64 {
            4.0 * x.powi(3)
        }
        fn second(&self, x: f64) -> f64 {
            12.0 * x * x
        }
        fn ellipticity(&self) -> f64 {
            4.0
        }
    }

    #[test]
    fn quadratic_values() {
        let p = PotentialSpec::quadratic(4.0).unwrap();
        assert_eq!(eval_potential(&p, 3.0, Derivative::First), 3.0);
        assert_eq!(eval_potential(&p, 0.0, Derivative::Value), 0.0);
        let h = PotentialSpec::smoothed_huber(4.0).unwrap();
        assert_eq!(eval_potential(&h, 0.0, Derivative::Value), 0.0);
    }

    #[test]
    fn huber_saturates_both_bounds() {
        let p = PotentialSpec::smoothed_huber(4.0).unwrap();
        assert_eq!(p.huber_coefficients(), (0.5, 1.5));
        assert_eq!(p.second(0.0), 2.0);
        assert!((p.second(1e8) - 0.5).abs() < 1e-15);
        let report = validate_potential(&p, 1e3, 100_001, DEFAULT_FD_STEP).unwrap();
        assert_eq!(report.max_second, 2.0);
        assert!(report.min_second > 0.5 && report.min_second < 0.5 + 2e-6);
        assert!(report.passed);
    }

    #[test]
    fn huber_finite_difference_consistency() {
        let p = PotentialSpec::smoothed_huber(4.0).unwrap();
        let report = validate_potential(&p, 10.0, 100_000, DEFAULT_FD_STEP).unwrap();
        assert!(report.max_fd_defect <= 1e-6, "{}", report.max_fd_defect);
        assert!(report.max_odd_defect == 0.0);
    }

    #[test]
    fn quadratic_passes_validation() {
        let p = PotentialSpec::quadratic(4.0).unwrap();
        let report = validate_potential(&p, 10.0, 1001, DEFAULT_FD_STEP).unwrap();
        assert!(report.passed);
        assert_eq!((report.min_second, report.max_second), (1.0, 1.0));
    }

    #[test]
    fn quartic_fails_upper_bound() {
        let report = validate_potential(&Quartic, 10.0, 1001, DEFAULT_FD_STEP).unwrap();
        assert!(!report.passed);
        assert!(report.max_second > 2.0);
    }

    #[test]
    fn derivative_order_is_checked() {
        assert!(Derivative::try_from(3).is_err());
        assert_eq!(Derivative::try_from(2).unwrap(), Derivative::Second);
        assert!(validate_potential(&Quartic, 1.0, 2, 1e-3).is_err());
    }

    #[test]
    fn finite_difference_converges_at_second_order() {
        let p = PotentialSpec::smoothed_huber(4.0).unwrap();
        let defect = |h: f64| {
            (-50..=50)
                .map(|i| 0.1 * i as f64)
                .map(|x| ((p.first(x + h) - p.first(x - h)) / (2.0 * h) - p.second(x)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (defect(1e-2), defect(5e-3));
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "order = {order}");
    }

    #[test]
    fn convex_everywhere_tested() {
        let p = PotentialSpec::smoothed_huber(9.0).unwrap();
        assert!((-1000..=1000).all(|i| p.second(0.05 * i as f64) > 0.0));
    }
}
