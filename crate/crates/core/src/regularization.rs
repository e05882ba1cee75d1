//! Sparsity regularizers and the threshold operators solving their
//! per-coordinate proximal problems.

use crate::error::{Error, Result};
use crate::network::{LayerParams, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    /// `(α/2)‖u‖² + (1−α)‖u‖₀`
    L2L0,
    /// `(α/2)‖u‖² + (1−α)‖u‖₁`
    ElasticNet,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub kind: RegKind,
    pub alpha: f64,
    pub rho: f64,
    /// Whether bias entries are penalized (and thresholded).
    pub include_bias: bool,
}

impl Regularizer {
    pub fn new(kind: RegKind, alpha: f64, rho: f64, include_bias: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(Regularizer {
            kind,
            alpha,
            rho,
            include_bias,
        })
    }

    pub fn none() -> Self {
        Regularizer {
            kind: RegKind::None,
            alpha: 0.0,
            rho: 0.0,
            include_bias: true,
        }
    }

    pub fn l2l0(alpha: f64, rho: f64) -> Result<Self> {
        Regularizer::new(RegKind::L2L0, alpha, rho, true)
    }

    pub fn elastic_net(alpha: f64, rho: f64) -> Result<Self> {
        Regularizer::new(RegKind::ElasticNet, alpha, rho, true)
    }

    /// True when the penalty vanishes identically.
    pub fn is_inactive(&self) -> bool {
        self.kind == RegKind::None || self.rho == 0.0
    }

    /// `R_l(u_l)` for one layer (without the ρ factor).
    pub fn layer_value(&self, layer: &LayerParams) -> f64 {
        let mut r = reg_value(self, &layer.weight);
        if self.include_bias {
            r += reg_value(self, &layer.bias);
        }
        r
    }

    /// `ρ Σ_l R_l(u_l)`.
    pub fn penalty(&self, params: &ParamSet) -> f64 {
        if self.is_inactive() {
            return 0.0;
        }
        self.rho * params.layers().iter().map(|l| self.layer_value(l)).sum::<f64>()
    }
}

/// `R(u)` of a plain vector, without the ρ factor.
pub fn reg_value(reg: &Regularizer, u: &[f64]) -> f64 {
    let a = reg.alpha;
    match reg.kind {
        RegKind::None => 0.0,
        RegKind::L2L0 => {
            let sq: f64 = u.iter().map(|v| v * v).sum();
            0.5 * a * sq + (1.0 - a) * l0_count(u) as f64
        }
        RegKind::ElasticNet => {
            let sq: f64 = u.iter().map(|v| v * v).sum();
            let l1: f64 = u.iter().map(|v| v.abs()).sum();
            0.5 * a * sq + (1.0 - a) * l1
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold must be finite and >= 0, got {gamma}")))
    }
}

/// Zero when `|v| <= sqrt(2γ)`, else `v` unchanged.
#[inline]
pub fn hard_threshold_scalar(v: f64, gamma: f64) -> f64 {
    if v.abs() <= (2.0 * gamma).sqrt() {
        0.0
    } else {
        v
    }
}

/// Zero when `|v| <= γ`, else shrink `|v|` by γ.
#[inline]
pub fn soft_threshold_scalar(v: f64, gamma: f64) -> f64 {
    if v.abs() <= gamma {
        0.0
    } else {
        (v.abs() - gamma).copysign(v)
    }
}

/// Proximal map of `γ‖·‖₀`.
pub fn hard_threshold(v: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    Ok(v.iter().map(|&x| hard_threshold_scalar(x, gamma)).collect())
}

/// Proximal map of `γ‖·‖₁`.
pub fn soft_threshold(v: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    Ok(v.iter().map(|&x| soft_threshold_scalar(x, gamma)).collect())
}

/// Entries not exactly equal to zero.
pub fn l0_count(v: &[f64]) -> usize {
    v.iter().filter(|&&x| x != 0.0).count()
}
