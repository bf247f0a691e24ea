//! Margin surrogates for one-versus-rest scoring.
//!
//! Each loss is a scaled decreasing function `phi` of a signed margin:
//! positive components of a multi-output loss contribute `phi(f_j)`,
//! negative ones `phi(-f_k)`. Two algebraic properties gate which risk
//! rewrites a loss admits:
//!
//! * linear-odd: `phi(z) - phi(-z) = -z`, which lets the difference terms of
//!   the complementary-label rewrite collapse to plain scores (the convex
//!   estimator requires it);
//! * symmetric: `phi(z) + phi(-z) = scale`, which the constant-corrected
//!   complementary-label identity requires.
//!
//! At scale 1 the square and logistic losses are linear-odd and the ramp and
//! sigmoid losses are symmetric.

use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `scale * (1 - z)^2 / 4`
    Square,
    /// `scale * ln(1 + exp(-z))`
    Logistic,
    /// `scale * max(0, min(1, (1 - z) / 2))`
    Ramp,
    /// `scale * 1 / (1 + exp(z))`
    Sigmoid,
}

/// A margin surrogate with a positive multiplicative scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SurrogateLoss<T> {
    pub kind: LossKind,
    #[serde(default = "default_scale")]
    pub scale: T,
}

fn default_scale<T: Real>() -> T {
    T::one()
}

impl<T: Real> SurrogateLoss<T> {
    pub fn new(kind: LossKind, scale: T) -> Result<Self> {
        if !scale.is_finite() || scale <= T::zero() {
            return Err(Error::invalid(format!(
                "loss scale must be finite and positive, got {scale}"
            )));
        }
        Ok(SurrogateLoss { kind, scale })
    }

    /// Loss at scale 1.
    pub fn unit(kind: LossKind) -> Self {
        SurrogateLoss {
            kind,
            scale: T::one(),
        }
    }

    pub fn eval(&self, z: T) -> T {
        let v = match self.kind {
            LossKind::Square => {
                let one = T::one();
                (one - z) * (one - z) / T::of(4.0)
            }
            LossKind::Logistic => softplus(-z),
            LossKind::Ramp => {
                let half = T::of(0.5);
                (half - half * z).max(T::zero()).min(T::one())
            }
            LossKind::Sigmoid => sigmoid(-z),
        };
        self.scale * v
    }

    /// Derivative in `z`. At the ramp kinks `z = -1` and `z = 1` this is the
    /// one-sided derivative from the flat side, i.e. zero.
    pub fn grad(&self, z: T) -> T {
        let g = match self.kind {
            LossKind::Square => (z - T::one()) / T::of(2.0),
            LossKind::Logistic => -sigmoid(-z),
            LossKind::Ramp => {
                if z > -T::one() && z < T::one() {
                    -T::of(0.5)
                } else {
                    T::zero()
                }
            }
            LossKind::Sigmoid => {
                let s = sigmoid(-z);
                -s * (T::one() - s)
            }
        };
        self.scale * g
    }
}

/// `1 / (1 + exp(-z))`, evaluated without overflow on either tail.
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + exp(z))`, evaluated without overflow on either tail.
fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    /// `phi(z) - phi(-z) = -z` at every probe point.
    LinearOdd,
    /// `phi(z) + phi(-z) = scale` at every probe point.
    Symmetric,
}

/// A property to check, with probe points and a pass tolerance.
#[derive(Clone, Debug)]
pub struct LossProperty<T> {
    pub kind: PropertyKind,
    pub tolerance: T,
    pub probes: Vec<T>,
}

impl<T: Real> LossProperty<T> {
    pub fn new(kind: PropertyKind, tolerance: T, probes: Vec<T>) -> Self {
        LossProperty {
            kind,
            tolerance,
            probes,
        }
    }

    /// 41 evenly spaced probes on `[-10, 10]` with tolerance 1e-9; the grid
    /// used when a risk form gates on a property.
    pub fn default_grid(kind: PropertyKind) -> Self {
        let probes = (0..41).map(|i| T::of(-10.0 + 0.5 * i as f64)).collect();
        LossProperty {
            kind,
            tolerance: T::of(1e-9),
            probes,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PropertyCheck<T> {
    pub holds: bool,
    pub max_residual: T,
}

/// Evaluates the property residual at every probe and compares the maximum
/// against the tolerance.
pub fn check_property<T: Real>(
    loss: &SurrogateLoss<T>,
    property: &LossProperty<T>,
) -> Result<PropertyCheck<T>> {
    if property.probes.is_empty() {
        return Err(Error::invalid("property check needs at least one probe"));
    }
    if !property.tolerance.is_finite() || property.tolerance <= T::zero() {
        return Err(Error::invalid("property tolerance must be positive"));
    }
    let mut max_residual = T::zero();
    for &z in &property.probes {
        let residual = match property.kind {
            PropertyKind::LinearOdd => (loss.eval(z) - loss.eval(-z) + z).abs(),
            PropertyKind::Symmetric => (loss.eval(z) + loss.eval(-z) - loss.scale).abs(),
        };
        if residual > max_residual {
            max_residual = residual;
        }
    }
    Ok(PropertyCheck {
        holds: max_residual <= property.tolerance,
        max_residual,
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// All four surrogates are nonincreasing in the margin.
        #[test]
        fn losses_are_nonincreasing(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in [LossKind::Square, LossKind::Logistic, LossKind::Ramp, LossKind::Sigmoid] {
                // Square rises again past z = 1; it is only nonincreasing on z <= 1.
                if kind == LossKind::Square && hi > 1.0 {
                    continue;
                }
                let l = SurrogateLoss::unit(kind);
                prop_assert!(l.eval(lo) >= l.eval(hi) - 1e-12);
            }
        }

        /// Scaling commutes with evaluation for any admissible scale.
        #[test]
        fn scaling_commutes(z in -15.0f64..15.0, scale in 0.1f64..8.0) {
            for kind in [LossKind::Square, LossKind::Logistic, LossKind::Ramp, LossKind::Sigmoid] {
                let unit = SurrogateLoss::unit(kind);
                let scaled = SurrogateLoss::new(kind, scale).unwrap();
                prop_assert!((scaled.eval(z) - scale * unit.eval(z)).abs() < 1e-10);
                prop_assert!((scaled.grad(z) - scale * unit.grad(z)).abs() < 1e-10);
            }
        }

        /// Sigmoid stays symmetric at every point, not just on the grid.
        #[test]
        fn sigmoid_symmetry_everywhere(z in -30.0f64..30.0) {
            let l = SurrogateLoss::unit(LossKind::Sigmoid);
            prop_assert!((l.eval(z) + l.eval(-z) - 1.0).abs() < 1e-12);
        }
    }
}
