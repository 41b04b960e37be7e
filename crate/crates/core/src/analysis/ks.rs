//! Two-sample Kolmogorov–Smirnov test and the per-dimension embedding study
//! built on it.
//!
//! The p-value is the asymptotic Kolmogorov tail `Q(λ)` with
//! `λ = (√nₑ + 0.12 + 0.11/√nₑ)·D` and `nₑ = n₁n₂/(n₁+n₂)`. Below `nₑ = 10` the
//! asymptotics are poor, so a permutation test is used instead: exhaustive when
//! there are at most [`EXACT_PERMUTATION_LIMIT`] relabelings, otherwise
//! [`MONTE_CARLO_ROUNDS`] seeded random relabelings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::embeddings::TokenEmbeddings;
use crate::error::{AenError, Result};
use crate::rng::SplitMix64;

pub const EXACT_PERMUTATION_LIMIT: u64 = 20_000;
pub const MONTE_CARLO_ROUNDS: usize = 10_000;
const PERMUTATION_SEED: u64 = 0x6b73_7465_7374;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMethod {
    Asymptotic,
    ExactPermutation,
    MonteCarloPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: KsMethod,
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(AenError::domain("KS samples must not contain NaN"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `sup |F_a - F_b|` over sorted samples, evaluated after each distinct value.
fn statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// The KS distance `D` alone.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(AenError::domain("KS test needs two non-empty samples"));
    }
    Ok(statistic_sorted(&sorted(a)?, &sorted(b)?))
}

/// Tail probability `P(K > λ)` of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        let y = (-PI * PI / (8.0 * lambda * lambda)).exp();
        let cdf = (2.0 * PI).sqrt() / lambda * (y + y.powi(9) + y.powi(25) + y.powi(49));
        1.0 - cdf
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        2.0 * (x - x.powi(4) + x.powi(9) - x.powi(16))
    };
    q.clamp(0.0, 1.0)
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn permutation_p_value(a: &[f64], b: &[f64], observed: f64) -> (f64, KsMethod) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, n1) = (pooled.len(), a.len());
    let tol = 1e-12;
    let split_stat = |pick: &[bool]| {
        let mut xa = Vec::with_capacity(n1);
        let mut xb = Vec::with_capacity(n - n1);
        for (&v, &p) in pooled.iter().zip(pick) {
            if p {
                xa.push(v)
            } else {
                xb.push(v)
            }
        }
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        statistic_sorted(&xa, &xb)
    };

    match binomial(n as u64, n1 as u64) {
        Some(total) if total <= EXACT_PERMUTATION_LIMIT => {
            let mut hits = 0u64;
            let mut pick = vec![false; n];
            // iterate over all n1-subsets as index combinations
            let mut idx: Vec<usize> = (0..n1).collect();
            loop {
                pick.iter_mut().for_each(|p| *p = false);
                idx.iter().for_each(|&i| pick[i] = true);
                if split_stat(&pick) >= observed - tol {
                    hits += 1;
                }
                let mut k = n1;
                while k > 0 && idx[k - 1] == n - n1 + k - 1 {
                    k -= 1;
                }
                if k == 0 {
                    break;
                }
                idx[k - 1] += 1;
                for t in k..n1 {
                    idx[t] = idx[t - 1] + 1;
                }
            }
            (hits as f64 / total as f64, KsMethod::ExactPermutation)
        }
        _ => {
            let mut rng = SplitMix64::new(PERMUTATION_SEED);
            let mut pick: Vec<bool> = (0..n).map(|i| i < n1).collect();
            let mut hits = 0usize;
            for _ in 0..MONTE_CARLO_ROUNDS {
                rng.shuffle(&mut pick);
                if split_stat(&pick) >= observed - tol {
                    hits += 1;
                }
            }
            (
                (hits + 1) as f64 / (MONTE_CARLO_ROUNDS + 1) as f64,
                KsMethod::MonteCarloPermutation,
            )
        }
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(AenError::domain("KS test needs two non-empty samples"));
    }
    let sa = sorted(a)?;
    let sb = sorted(b)?;
    let d = statistic_sorted(&sa, &sb);
    let (n1, n2) = (a.len(), b.len());
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let (p_value, method) = if ne < 10.0 {
        permutation_p_value(&sa, &sb, d)
    } else {
        let sq = ne.sqrt();
        (kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d), KsMethod::Asymptotic)
    };
    Ok(KsResult {
        d_statistic: d,
        p_value,
        n1,
        n2,
        method,
    })
}

/// Which embeddings are compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum PairingPolicy {
    /// Every unordered pair.
    AllPairs,
    /// `pairs` unordered pairs drawn with replacement, distinct members.
    Sampled { pairs: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSummary {
    pub n_tests: usize,
    pub n_pairs: usize,
    pub dim: usize,
    pub mean_p: f64,
    pub median_p: f64,
    /// Share of tests with `p < 0.001`.
    pub frac_below_0_001: f64,
    /// Counts over ten equal-width p-value bins on `[0, 1]`.
    pub histogram: [usize; 10],
}

/// Runs a KS test on every dimension of every selected pair of embeddings,
/// comparing the two attended-token columns.
pub fn dimension_ks_analysis(embeddings: &[TokenEmbeddings], policy: PairingPolicy) -> Result<KsSummary> {
    if embeddings.len() < 2 {
        return Err(AenError::domain("KS analysis needs at least two embeddings"));
    }
    let dim = embeddings[0].dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(AenError::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let columns: Vec<ndarray::Array2<f64>> = embeddings.iter().map(TokenEmbeddings::attended_rows).collect();
    if columns.iter().any(|c| c.nrows() == 0) {
        return Err(AenError::domain("every embedding needs at least one attended token"));
    }

    let pairs: Vec<(usize, usize)> = match policy {
        PairingPolicy::AllPairs => (0..embeddings.len())
            .flat_map(|i| (i + 1..embeddings.len()).map(move |j| (i, j)))
            .collect(),
        PairingPolicy::Sampled { pairs, seed } => {
            let mut rng = SplitMix64::new(seed);
            (0..pairs)
                .map(|_| {
                    let i = rng.below(embeddings.len());
                    let mut j = rng.below(embeddings.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i.min(j), i.max(j))
                })
                .collect()
        }
    };
    if pairs.is_empty() {
        return Err(AenError::domain("pairing policy selected no pairs"));
    }

    let mut p_values = Vec::with_capacity(pairs.len() * dim);
    for &(i, j) in &pairs {
        for d in 0..dim {
            let a = columns[i].column(d).to_vec();
            let b = columns[j].column(d).to_vec();
            p_values.push(ks_two_sample(&a, &b)?.p_value);
        }
    }

    let n = p_values.len();
    let mean_p = p_values.iter().sum::<f64>() / n as f64;
    let mut histogram = [0usize; 10];
    for &p in &p_values {
        histogram[((p * 10.0) as usize).min(9)] += 1;
    }
    let frac_below_0_001 = p_values.iter().filter(|&&p| p < 1e-3).count() as f64 / n as f64;
    p_values.sort_by(f64::total_cmp);
    let median_p = if n % 2 == 1 {
        p_values[n / 2]
    } else {
        0.5 * (p_values[n / 2 - 1] + p_values[n / 2])
    };
    Ok(KsSummary {
        n_tests: n,
        n_pairs: pairs.len(),
        dim,
        mean_p,
        median_p,
        frac_below_0_001,
        histogram,
    })
}
