//! Per-dimension kernel density estimation.
//!
//! A [`DimKde`] treats each of the `N` embedding dimensions as an independent
//! univariate sample: every attended token contributes one kernel center to
//! every dimension, so an `M × N` token matrix yields `N` one-dimensional
//! densities with `M` kernels each. Evaluating a query vector returns one
//! density per dimension,
//!
//! ```text
//! f_j(x_j) = 1 / (n h_j) * Σ_i K((x_j - c_ij) / h_j)
//! ```
//!
//! Bandwidths are chosen per dimension from that dimension's column by a
//! [`BandwidthRule`] and then held constant: gradients never flow into `h`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::embeddings::TokenEmbeddings;
use crate::error::{AenError, Result};
use crate::kernels::KernelKind;

/// Bandwidth floor used when a column has (near) zero spread or a single sample.
pub const H_MIN: f64 = 1e-3;
/// Columns with a sample standard deviation below this are treated as collapsed.
pub const SIGMA_COLLAPSE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BandwidthRule {
    /// `h = n^(-1/5) σ`
    Scott,
    /// `h = (4 / (3n))^(1/5) σ`
    Silverman,
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Scott
    }
}

impl BandwidthRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthRule::Fixed(h) if !(h > 0.0 && h.is_finite()) => Err(AenError::domain(format!(
                "fixed bandwidth must be positive and finite, got {h}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Scott => f.write_str("scott"),
            BandwidthRule::Silverman => f.write_str("silverman"),
            BandwidthRule::Fixed(h) => write!(f, "fixed:{h}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = AenError;

    fn from_str(s: &str) -> Result<Self> {
        let rule = match s {
            "scott" => BandwidthRule::Scott,
            "silverman" => BandwidthRule::Silverman,
            _ => match s.strip_prefix("fixed:") {
                Some(v) => BandwidthRule::Fixed(v.trim().parse().map_err(|_| {
                    AenError::Config(format!("bad fixed bandwidth value {v:?}"))
                })?),
                None => {
                    return Err(AenError::Config(format!(
                        "unknown bandwidth rule {s:?}; expected scott, silverman or fixed:<h>"
                    )))
                }
            },
        };
        rule.validate().map_err(|e| AenError::Config(e.to_string()))?;
        Ok(rule)
    }
}

impl TryFrom<String> for BandwidthRule {
    type Error = AenError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BandwidthRule> for String {
    fn from(r: BandwidthRule) -> String {
        r.to_string()
    }
}

/// Sample standard deviation with the `n - 1` denominator (0 for a single sample).
pub fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Bandwidth for one univariate sample.
///
/// Scott and Silverman fall back to [`H_MIN`] when the sample has one element
/// or its standard deviation is below [`SIGMA_COLLAPSE`]. A fixed rule always
/// returns its constant.
pub fn estimate_bandwidth(rule: BandwidthRule, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(AenError::domain("bandwidth needs at least one sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AenError::domain("bandwidth samples must be finite"));
    }
    rule.validate()?;
    let n = samples.len() as f64;
    let factor = match rule {
        BandwidthRule::Fixed(h) => return Ok(h),
        BandwidthRule::Scott => n.powf(-0.2),
        BandwidthRule::Silverman => (4.0 / (3.0 * n)).powf(0.2),
    };
    let sigma = sample_std(samples);
    if samples.len() == 1 || sigma < SIGMA_COLLAPSE {
        return Ok(H_MIN);
    }
    Ok(factor * sigma)
}

/// `N` independent univariate kernel density estimates sharing one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DimKde {
    centers: Array2<f64>,
    bandwidths: Array1<f64>,
    kernel: KernelKind,
}

impl DimKde {
    /// Builds the estimator from the attended rows of `tokens`.
    pub fn build(tokens: &TokenEmbeddings, kernel: KernelKind, rule: BandwidthRule) -> Result<Self> {
        let centers = tokens.attended_rows();
        if centers.nrows() == 0 {
            return Err(AenError::domain("cannot build a KDE from zero attended tokens"));
        }
        let bandwidths = centers
            .axis_iter(Axis(1))
            .map(|col| estimate_bandwidth(rule, &col.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DimKde {
            centers,
            bandwidths: Array1::from(bandwidths),
            kernel,
        })
    }

    /// Assembles an estimator from explicit centers and bandwidths.
    pub fn from_parts(centers: Array2<f64>, bandwidths: Array1<f64>, kernel: KernelKind) -> Result<Self> {
        if centers.nrows() == 0 {
            return Err(AenError::domain("a KDE needs at least one center"));
        }
        if bandwidths.len() != centers.ncols() {
            return Err(AenError::DimensionMismatch {
                expected: centers.ncols(),
                found: bandwidths.len(),
            });
        }
        if bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(AenError::domain("bandwidths must be positive and finite"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(AenError::domain("KDE centers must be finite"));
        }
        Ok(DimKde { centers, bandwidths, kernel })
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn bandwidths(&self) -> &Array1<f64> {
        &self.bandwidths
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    /// Number of kernels per dimension (attended tokens).
    pub fn n_effective(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(AenError::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        if query.iter().any(|q| !q.is_finite()) {
            return Err(AenError::domain("KDE query must be finite"));
        }
        Ok(())
    }

    /// Density of each query component under its own dimension's estimate.
    pub fn eval_density(&self, query: &[f64]) -> Result<Array1<f64>> {
        self.check_query(query)?;
        let n = self.n_effective() as f64;
        let mut out = Array1::zeros(self.dim());
        for (j, (&x, &h)) in query.iter().zip(self.bandwidths.iter()).enumerate() {
            let mut acc = 0.0;
            for &c in self.centers.column(j) {
                acc += self.kernel.density((x - c) / h);
            }
            out[j] = acc / (n * h);
        }
        Ok(out)
    }

    /// Partial derivatives of each dimension's density with respect to the
    /// query component and to every center, bandwidths held fixed.
    ///
    /// Returns `(d_query, d_centers)` where `d_query[j] = ∂f_j/∂x_j` and
    /// `d_centers[[i, j]] = ∂f_j/∂c_ij`.
    pub fn eval_density_gradients(&self, query: &[f64]) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_query(query)?;
        let n = self.n_effective() as f64;
        let mut d_query = Array1::zeros(self.dim());
        let mut d_centers = Array2::zeros(self.centers.raw_dim());
        for (j, (&x, &h)) in query.iter().zip(self.bandwidths.iter()).enumerate() {
            let scale = 1.0 / (n * h * h);
            let mut acc = 0.0;
            for (i, &c) in self.centers.column(j).iter().enumerate() {
                let s = self.kernel.slope((x - c) / h);
                acc += s;
                d_centers[[i, j]] = -scale * s;
            }
            d_query[j] = scale * acc;
        }
        Ok((d_query, d_centers))
    }

    /// Smallest distance, in bandwidth units, between any `(x_j - c_ij) / h_j`
    /// and a kink of the kernel.
    pub fn min_kink_distance(&self, query: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for (j, (&x, &h)) in query.iter().zip(self.bandwidths.iter()).enumerate() {
            for &c in self.centers.column(j) {
                best = best.min(self.kernel.kink_distance((x - c) / h));
            }
        }
        best
    }
}
