//! Layer Hamiltonian values and the closed-form maximizer of the augmented
//! Hamiltonian.
//!
//! In the control-affine network every layer Hamiltonian is
//! `H_l(u) = ⟨F_l, u⟩ − ρ R_l(u)`, and the augmented version subtracts
//! `(ε/2)‖w − u‖²`. Because both parts separate over coordinates the
//! maximizer is a scaled threshold of `u + F/ε`.

use crate::error::{Error, Result};
use crate::network::{HamiltonianGradient, LayerParams, ParamSet};
use crate::regularization::{hard_threshold_scalar, soft_threshold_scalar, RegKind, Regularizer};

/// Absolute slack allowed when testing the augmented-HP inequality.
pub const AUG_INEQUALITY_SLACK: f64 = 1e-12;

/// Augmentation weight `ε > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AugmentationWeight(f64);

impl AugmentationWeight {
    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(AugmentationWeight(eps))
        } else {
            Err(Error::InvalidInput(format!("augmentation weight must be positive and finite, got {eps}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `⟨F_l, u⟩ − ρ R_l(u)`.
pub fn hp_value(f: &LayerParams, u: &LayerParams, reg: &Regularizer) -> f64 {
    let penalty = if reg.is_inactive() { 0.0 } else { reg.rho * reg.layer_value(u) };
    f.inner(u) - penalty
}

/// `hp_value(F, w) − (ε/2)‖w − u‖²`.
pub fn aug_hp_value(
    f: &LayerParams,
    w: &LayerParams,
    u: &LayerParams,
    reg: &Regularizer,
    eps: AugmentationWeight,
) -> f64 {
    hp_value(f, w, reg) - 0.5 * eps.get() * w.dist_sq(u)
}

/// Maximizer of `F w − ρ r(w) − (ε/2)(w − u)²` for one coordinate, where
/// `r` is the regularizer's scalar term (or zero when `penalized` is false).
#[inline]
pub fn update_coordinate(f: f64, u: f64, reg: &Regularizer, eps: f64, penalized: bool) -> f64 {
    if !penalized || reg.is_inactive() {
        return u + f / eps;
    }
    let denom = eps + reg.alpha * reg.rho;
    let v = (eps / denom) * (u + f / eps);
    let gamma = (1.0 - reg.alpha) * reg.rho / denom;
    match reg.kind {
        RegKind::L2L0 => hard_threshold_scalar(v, gamma),
        RegKind::ElasticNet => soft_threshold_scalar(v, gamma),
        RegKind::None => u + f / eps,
    }
}

/// Exact global maximizer of the augmented layer Hamiltonian.
pub fn layer_update(f: &LayerParams, u: &LayerParams, reg: &Regularizer, eps: AugmentationWeight) -> LayerParams {
    let e = eps.get();
    let map = |fs: &[f64], us: &[f64], penalized: bool| -> Vec<f64> {
        fs.iter()
            .zip(us)
            .map(|(&fv, &uv)| update_coordinate(fv, uv, reg, e, penalized))
            .collect()
    };
    LayerParams {
        weight: map(&f.weight, &u.weight, true),
        bias: map(&f.bias, &u.bias, reg.include_bias),
    }
}

/// [`layer_update`] applied to every layer.
pub fn update_params(
    grad: &HamiltonianGradient,
    u: &ParamSet,
    reg: &Regularizer,
    eps: AugmentationWeight,
) -> Vec<LayerParams> {
    grad.layers()
        .iter()
        .zip(u.layers())
        .map(|(f, ul)| layer_update(f, ul, reg, eps))
        .collect()
}

/// `aug_hp_value(F, w, u) >= hp_value(F, u) − 1e-12`.
pub fn satisfies_aug_inequality(
    f: &LayerParams,
    w: &LayerParams,
    u: &LayerParams,
    reg: &Regularizer,
    eps: AugmentationWeight,
) -> bool {
    aug_hp_value(f, w, u, reg, eps) >= hp_value(f, u, reg) - AUG_INEQUALITY_SLACK
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(w: &[f64]) -> LayerParams {
        LayerParams { weight: w.to_vec(), bias: vec![] }
    }

    fn eps(e: f64) -> AugmentationWeight {
        AugmentationWeight::new(e).unwrap()
    }

    #[test]
    fn weight_must_be_positive() {
        assert!(AugmentationWeight::new(0.0).is_err());
        assert!(AugmentationWeight::new(-1.0).is_err());
        assert!(AugmentationWeight::new(f64::INFINITY).is_err());
    }

    #[test]
    fn hp_cases() {
        let none = Regularizer::none();
        assert_eq!(hp_value(&lp(&[3.0]), &lp(&[3.0]), &none), 9.0);
        let reg = Regularizer::l2l0(0.5, 2.0).unwrap();
        assert_eq!(hp_value(&lp(&[3.0, 1.0]), &lp(&[0.0, 0.0]), &reg), 0.0);
    }

    #[test]
    fn aug_hp_cases() {
        let none = Regularizer::none();
        let f = lp(&[1.0]);
        assert_eq!(aug_hp_value(&f, &lp(&[0.7]), &lp(&[0.7]), &none, eps(5.0)), hp_value(&f, &lp(&[0.7]), &none));
        assert_eq!(aug_hp_value(&f, &lp(&[1.0]), &lp(&[0.0]), &none, eps(2.0)), 0.0);
        let mut last = f64::INFINITY;
        for e in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let v = aug_hp_value(&f, &lp(&[1.0]), &lp(&[0.0]), &none, eps(e));
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn update_cases() {
        let none = Regularizer::none();
        assert_eq!(layer_update(&lp(&[2.0]), &lp(&[1.0]), &none, eps(2.0)).weight, vec![2.0]);

        let reg = Regularizer::l2l0(0.8, 0.1).unwrap();
        let w = layer_update(&lp(&[2.0]), &lp(&[1.0]), &reg, eps(2.0));
        assert!((w.weight[0] - 2.0 * 2.0 / 2.08).abs() < 1e-12);
        assert!((w.weight[0] - 1.9231).abs() < 1e-4);

        let reg = Regularizer::l2l0(0.0, 1.0).unwrap();
        assert_eq!(layer_update(&lp(&[0.0]), &lp(&[0.1]), &reg, eps(1.0)).weight, vec![0.0]);
    }

    #[test]
    fn unpenalized_bias_takes_plain_step() {
        let mut reg = Regularizer::l2l0(0.0, 10.0).unwrap();
        reg.include_bias = false;
        let f = LayerParams { weight: vec![0.1], bias: vec![0.1] };
        let u = LayerParams { weight: vec![0.0], bias: vec![0.0] };
        let w = layer_update(&f, &u, &reg, eps(1.0));
        assert_eq!(w.weight, vec![0.0]);
        assert_eq!(w.bias, vec![0.1]);
    }

    #[test]
    fn inequality_cases() {
        let reg = Regularizer::elastic_net(0.5, 0.3).unwrap();
        let f = lp(&[0.4, -1.0]);
        let u = lp(&[0.2, 0.3]);
        assert!(satisfies_aug_inequality(&f, &u, &u, &reg, eps(1.0)));
        let w = layer_update(&f, &u, &reg, eps(1.0));
        assert!(satisfies_aug_inequality(&f, &w, &u, &reg, eps(1.0)));
        // far point: penalty 50·(25+25) dwarfs any linear gain
        assert!(!satisfies_aug_inequality(&f, &lp(&[5.2, -4.7]), &u, &reg, eps(100.0)));
    }

    fn arb_reg() -> impl Strategy<Value = Regularizer> {
        (0..3usize, 0.0f64..0.99, 0.0f64..2.0).prop_map(|(k, a, r)| {
            let kind = [RegKind::L2L0, RegKind::ElasticNet, RegKind::None][k];
            Regularizer::new(kind, a, r, true).unwrap()
        })
    }

    proptest! {
        #[test]
        fn step_shrinks_with_epsilon(
            f in prop::collection::vec(-5.0f64..5.0, 1..8),
            u in prop::collection::vec(-5.0f64..5.0, 8),
            reg in arb_reg(),
            e in 0.01f64..10.0,
        ) {
            let n = f.len();
            let (f, u) = (lp(&f), lp(&u[..n]));
            let small = layer_update(&f, &u, &reg, eps(e)).dist_sq(&u);
            let large = layer_update(&f, &u, &reg, eps(2.0 * e)).dist_sq(&u);
            prop_assert!(large <= small + 1e-12);
            let huge = layer_update(&f, &u, &reg, eps(1e12)).dist_sq(&u);
            prop_assert!(huge < 1e-16 + 1e-12 * u.sq_norm());
        }
    }
}
