//! Univariate smoothing kernels and their slopes.
//!
//! | kind           | `K(u)`                       | `K'(u)`                 |
//! |----------------|------------------------------|-------------------------|
//! | `gaussian`     | `exp(-u²/2) / √(2π)`         | `-u K(u)`               |
//! | `epanechnikov` | `¾ (1 - u²)` for `\|u\| ≤ 1` | `-3u/2` for `\|u\| < 1` |
//! | `triangular`   | `1 - \|u\|` for `\|u\| ≤ 1`  | `-sign(u)` for `0 < \|u\| < 1` |
//!
//! The compact kernels are zero outside `[-1, 1]`. At their kinks the slope is
//! the zero subgradient: `u = ±1` for both compact kernels and `u = 0` for the
//! triangular kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AenError, Result};

/// `1 / √(2π)`.
pub const GAUSSIAN_NORM: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Gaussian,
    Epanechnikov,
    Triangular,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [
        KernelKind::Gaussian,
        KernelKind::Epanechnikov,
        KernelKind::Triangular,
    ];

    /// `K(u)`. Fails on non-finite `u`.
    pub fn eval(self, u: f64) -> Result<f64> {
        check_finite(u)?;
        Ok(self.density(u))
    }

    /// `dK/du`. Fails on non-finite `u`.
    pub fn derivative(self, u: f64) -> Result<f64> {
        check_finite(u)?;
        Ok(self.slope(u))
    }

    /// Unchecked `K(u)` for inner loops whose inputs are already validated.
    #[inline]
    pub(crate) fn density(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => GAUSSIAN_NORM * (-0.5 * u * u).exp(),
            KernelKind::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelKind::Triangular => {
                let a = u.abs();
                if a <= 1.0 {
                    1.0 - a
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub(crate) fn slope(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => -u * GAUSSIAN_NORM * (-0.5 * u * u).exp(),
            KernelKind::Epanechnikov => {
                if u.abs() < 1.0 {
                    -1.5 * u
                } else {
                    0.0
                }
            }
            KernelKind::Triangular => {
                let a = u.abs();
                if a < 1.0 && u != 0.0 {
                    -u.signum()
                } else {
                    0.0
                }
            }
        }
    }

    /// Points where the kernel is not differentiable.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            KernelKind::Gaussian => &[],
            KernelKind::Epanechnikov => &[-1.0, 1.0],
            KernelKind::Triangular => &[-1.0, 0.0, 1.0],
        }
    }

    /// Distance from `u` to the nearest kink, `f64::INFINITY` for smooth kernels.
    pub fn kink_distance(self, u: f64) -> f64 {
        self.kinks()
            .iter()
            .map(|k| (u - k).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Triangular => "triangular",
        }
    }
}

fn check_finite(u: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(AenError::domain(format!("kernel argument must be finite, got {u}")))
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = AenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            "triangular" => Ok(KernelKind::Triangular),
            other => Err(AenError::Config(format!(
                "unknown kernel {other:?}; expected gaussian, epanechnikov or triangular"
            ))),
        }
    }
}
