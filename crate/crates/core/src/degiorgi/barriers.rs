//! Radial comparison functions used by the truncation arguments.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    /// `(|x|^{s/2} - 1)_+`
    Psi,
    /// `L + ψ`
    PsiL,
    /// `(|x|^{s/4} - 1)_+`
    Psi1,
    /// `((|x| - λ^{-4/s})^{s/4} - 1)_+` outside `B_{λ^{-4/s}}`, zero inside
    PsiLambda,
    /// as `PsiLambda` with exponent `ε`
    PsiEpsLambda,
    /// `max(-1, min(0, |x|² - 9))`
    F,
    Phi0,
    Phi1,
    Phi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierFamily {
    pub kind: BarrierKind,
    pub s: f64,
    pub lambda: f64,
    pub eps: f64,
    pub shift: f64,
}

/// `(r^p - 1)_+`
#[inline]
fn bump_above_one(r: f64, p: f64) -> f64 {
    (r.powf(p) - 1.0).max(0.0)
}

pub fn psi(r: f64, s: f64) -> f64 {
    bump_above_one(r, 0.5 * s)
}

pub fn psi_shifted(r: f64, s: f64, shift: f64) -> f64 {
    shift + psi(r, s)
}

pub fn psi1(r: f64, s: f64) -> f64 {
    bump_above_one(r, 0.25 * s)
}

/// Radius `λ^{-4/s}` below which `ψ_λ` and `ψ_{ε,λ}` vanish.
pub fn lambda_radius(lambda: f64, s: f64) -> f64 {
    lambda.powf(-4.0 / s)
}

pub fn psi_lambda(r: f64, s: f64, lambda: f64) -> f64 {
    psi_eps_lambda(r, s, lambda, 0.25 * s)
}

pub fn psi_eps_lambda(r: f64, s: f64, lambda: f64, eps: f64) -> f64 {
    let r0 = lambda_radius(lambda, s);
    if r <= r0 {
        0.0
    } else {
        bump_above_one(r - r0, eps)
    }
}

pub fn f_cutoff(r: f64) -> f64 {
    (r * r - 9.0).clamp(-1.0, 0.0)
}

/// `1 + ψ_λ + c F` with `c ∈ {1, λ, λ²}`.
pub fn phi(r: f64, s: f64, lambda: f64, index: usize) -> f64 {
    let c = match index {
        0 => 1.0,
        1 => lambda,
        _ => lambda * lambda,
    };
    1.0 + psi_lambda(r, s, lambda) + c * f_cutoff(r)
}

impl BarrierFamily {
    pub fn new(kind: BarrierKind, s: f64) -> Self {
        Self {
            kind,
            s,
            lambda: 0.25,
            eps: 0.25 * s,
            shift: 0.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 2.0) {
            return Err(invalid("order", format!("order out of (0,2): {}", self.s)));
        }
        let uses_lambda = matches!(
            self.kind,
            BarrierKind::PsiLambda
                | BarrierKind::PsiEpsLambda
                | BarrierKind::Phi0
                | BarrierKind::Phi1
                | BarrierKind::Phi2
        );
        if uses_lambda && !(self.lambda > 0.0 && self.lambda < 1.0 / 3.0) {
            return Err(invalid("lambda", format!("lambda out of (0,1/3): {}", self.lambda)));
        }
        if self.kind == BarrierKind::PsiEpsLambda && !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps", format!("eps must be positive: {}", self.eps)));
        }
        if self.kind == BarrierKind::PsiL && !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(invalid("shift", format!("shift must be nonnegative: {}", self.shift)));
        }
        Ok(())
    }

    /// Value at radius `r = |x|`.
    pub fn radial(&self, r: f64) -> f64 {
        let s = self.s;
        match self.kind {
            BarrierKind::Psi => psi(r, s),
            BarrierKind::PsiL => psi_shifted(r, s, self.shift),
            BarrierKind::Psi1 => psi1(r, s),
            BarrierKind::PsiLambda => psi_lambda(r, s, self.lambda),
            BarrierKind::PsiEpsLambda => psi_eps_lambda(r, s, self.lambda, self.eps),
            BarrierKind::F => f_cutoff(r),
            BarrierKind::Phi0 => phi(r, s, self.lambda, 0),
            BarrierKind::Phi1 => phi(r, s, self.lambda, 1),
            BarrierKind::Phi2 => phi(r, s, self.lambda, 2),
        }
    }
}

/// Evaluates a barrier at a point of `R^N`.
pub fn eval_barrier(b: &BarrierFamily, x: &[f64]) -> Result<f64> {
    b.validate()?;
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(b.radial(r))
}
