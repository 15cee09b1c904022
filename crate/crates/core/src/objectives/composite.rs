use serde::{Deserialize, Serialize};

use crate::error::{BcdError, Result};

/// Coordinate-separable non-smooth term `g(x) = sum_i g_i(x_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Composite {
    #[default]
    None,
    /// indicator of `x >= 0`
    NonNegative,
    /// `lambda * |x|`
    L1 { lambda: f64 },
    /// `lambda * x` on `x >= 0`
    NonNegativeL1 { lambda: f64 },
}

impl Composite {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Composite::L1 { lambda } | Composite::NonNegativeL1 { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(BcdError::InvalidArgument(format!("regularization weight {lambda} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Composite::L1 { lambda } | Composite::NonNegativeL1 { lambda } => lambda,
            _ => 0.0,
        }
    }

    pub fn is_some(&self) -> bool {
        *self != Composite::None
    }

    /// True when the domain is the non-negative orthant.
    pub fn nonnegative(&self) -> bool {
        matches!(self, Composite::NonNegative | Composite::NonNegativeL1 { .. })
    }

    /// `g_i(t)`; infinite outside the domain.
    pub fn scalar_value(&self, t: f64) -> f64 {
        match *self {
            Composite::None => 0.0,
            Composite::NonNegative => {
                if t < 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Composite::L1 { lambda } => lambda * t.abs(),
            Composite::NonNegativeL1 { lambda } => {
                if t < 0.0 {
                    f64::INFINITY
                } else {
                    lambda * t
                }
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Composite::None => 0.0,
            _ => x.iter().map(|&t| self.scalar_value(t)).sum(),
        }
    }

    /// `argmin_y (y - v)^2 / (2 alpha) + g_i(y)`.
    #[inline]
    pub fn prox(&self, v: f64, alpha: f64) -> f64 {
        match *self {
            Composite::None => v,
            Composite::NonNegative => v.max(0.0),
            Composite::L1 { lambda } => {
                let t = alpha * lambda;
                v.signum() * (v.abs() - t).max(0.0)
            }
            Composite::NonNegativeL1 { lambda } => (v - alpha * lambda).max(0.0),
        }
    }

    /// Minimum-magnitude element of `grad + dg(t)`; zero means `t` is
    /// optimal for the coordinate.
    pub fn min_norm_subgradient(&self, t: f64, grad: f64) -> f64 {
        let lam = self.lambda();
        match *self {
            Composite::None => grad,
            Composite::L1 { .. } => {
                if t > 0.0 {
                    grad + lam
                } else if t < 0.0 {
                    grad - lam
                } else {
                    grad.signum() * (grad.abs() - lam).max(0.0)
                }
            }
            Composite::NonNegative | Composite::NonNegativeL1 { .. } => {
                let s = grad + lam;
                if t > 0.0 {
                    s
                } else {
                    s.min(0.0)
                }
            }
        }
    }

    /// Subdifferential `dg_i(t)` as a closed interval.
    pub fn subdifferential(&self, t: f64) -> Option<(f64, f64)> {
        let lam = self.lambda();
        match *self {
            Composite::None => Some((0.0, 0.0)),
            Composite::L1 { .. } => Some(if t > 0.0 {
                (lam, lam)
            } else if t < 0.0 {
                (-lam, -lam)
            } else {
                (-lam, lam)
            }),
            Composite::NonNegative | Composite::NonNegativeL1 { .. } => {
                if t > 0.0 {
                    Some((lam, lam))
                } else if t == 0.0 {
                    Some((f64::NEG_INFINITY, lam))
                } else {
                    None
                }
            }
        }
    }
}
