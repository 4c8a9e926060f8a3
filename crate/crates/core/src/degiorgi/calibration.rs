//! Constants whose existence is proved but whose values are not: tagged containers and
//! the bisection used to fit them on seeded ensembles.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Measured,
    Calibrated,
    PaperExistenceOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tagged {
    pub value: f64,
    pub provenance: Provenance,
}

impl Tagged {
    pub fn measured(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Measured,
        }
    }

    pub fn calibrated(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Calibrated,
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::PaperExistenceOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub eps0: Tagged,
    pub delta: Tagged,
    pub mu: Tagged,
    pub gamma: Tagged,
    pub lambda: Tagged,
    pub lambda_star: Tagged,
    pub seeds: Vec<u64>,
}

impl CalibrationConstants {
    /// All values lie in `(0, 1)`.
    pub fn in_unit_interval(&self) -> bool {
        [self.eps0, self.delta, self.mu, self.gamma, self.lambda, self.lambda_star]
            .iter()
            .all(|c| c.value > 0.0 && c.value < 1.0)
    }

    pub fn lemma2(&self) -> super::Lemma2Constants {
        super::Lemma2Constants {
            mu: self.mu.value,
            delta: self.delta.value,
            gamma: self.gamma.value,
            lambda: self.lambda.value,
        }
    }
}

/// Number of halvings in [`bisect_threshold`].
pub const BISECTION_STEPS: usize = 60;

/// Largest `c ∈ (lo, hi]` such that no failing sample has `statistic <= c`.
///
/// `samples` holds `(statistic, fails)` pairs: a sample fails when the implication's
/// conclusion is false. The implication "statistic <= c ⇒ conclusion" then holds on
/// the whole ensemble for the returned `c`. Bisection is geometric between `lo > 0`
/// and `hi`, with a fixed number of steps, so the result is reproducible.
pub fn bisect_threshold(samples: &[(f64, bool)], lo: f64, hi: f64) -> f64 {
    let ok = |c: f64| samples.iter().all(|&(stat, fails)| !(fails && stat <= c));
    if ok(hi) {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    if !ok(a) {
        return a;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (a * b).sqrt();
        if ok(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    a
}

/// Largest `c ∈ [lo, hi]` with `c <= value` for every sample (a minimum by bisection).
pub fn bisect_lower_envelope(values: &[f64], lo: f64, hi: f64) -> f64 {
    let samples: Vec<(f64, bool)> = values.iter().map(|&v| (v, true)).collect();
    // "fails with statistic v" ⇔ the candidate c must stay strictly below v
    let c = bisect_threshold(&samples, lo, hi);
    c.min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_sits_just_below_smallest_failure() {
        let samples = [(0.3, false), (0.05, true), (0.2, true), (0.01, false)];
        let c = bisect_threshold(&samples, 1e-8, 0.999);
        assert!(c < 0.05 && c > 0.05 * (1.0 - 1e-9), "{c}");
        assert_eq!(bisect_threshold(&[(0.5, false)], 1e-8, 0.999), 0.999);
    }

    #[test]
    fn bisection_is_reproducible() {
        let samples: Vec<(f64, bool)> = (1..50).map(|i| (i as f64 / 97.0, i % 3 == 0)).collect();
        let a = bisect_threshold(&samples, 1e-9, 0.999);
        let b = bisect_threshold(&samples, 1e-9, 0.999);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
