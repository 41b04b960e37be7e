use ndarray::{s, Array1};

use super::{ConcatMode, HeadConfig};
use crate::embeddings::PooledVector;
use crate::error::{AenError, Result};

/// Added to densities before the optional log transform.
pub const LOG_FLOOR: f64 = 1e-12;
/// Lower bound on the probability inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Two-class softmax, shifted by the max logit for stability.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// `−w·ln p₁` for positives, `−ln p₀` for negatives.
pub fn weighted_ce_loss(probabilities: [f64; 2], label: u8, class_weight: f64) -> Result<f64> {
    check_probabilities(probabilities)?;
    if !(class_weight > 0.0 && class_weight.is_finite()) {
        return Err(AenError::domain(format!("class weight must be positive, got {class_weight}")));
    }
    match label {
        0 => Ok(-probabilities[0].max(PROB_FLOOR).ln()),
        1 => Ok(-class_weight * probabilities[1].max(PROB_FLOOR).ln()),
        other => Err(AenError::domain(format!("label must be 0 or 1, got {other}"))),
    }
}

fn check_probabilities(p: [f64; 2]) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || ((p[0] + p[1]) - 1.0).abs() > 1e-6 {
        return Err(AenError::domain(format!("invalid probability vector {p:?}")));
    }
    Ok(())
}

/// Loss and its gradient with respect to the two logits.
pub(crate) fn loss_and_logit_grad(logits: [f64; 2], label: u8, class_weight: f64) -> Result<(f64, [f64; 2])> {
    let p = softmax(logits);
    let loss = weighted_ce_loss(p, label, class_weight)?;
    let y = label as usize;
    let w = if label == 1 { class_weight } else { 1.0 };
    if p[y] < PROB_FLOOR {
        // the floor is active, so the loss is locally constant
        return Ok((loss, [0.0, 0.0]));
    }
    let mut g = [w * p[0], w * p[1]];
    g[y] -= w;
    Ok((loss, g))
}

/// Clamps densities to `[0, density_clamp]` and optionally takes `ln(d + 1e-12)`.
///
/// Also returns the elementwise derivative of the transform, zero where the
/// clamp is active.
pub fn density_features(densities: &Array1<f64>, config: &HeadConfig) -> (Array1<f64>, Array1<f64>) {
    let mut feats = Array1::zeros(densities.len());
    let mut slope = Array1::zeros(densities.len());
    for (j, &d) in densities.iter().enumerate() {
        let (c, dc) = if d > config.density_clamp {
            (config.density_clamp, 0.0)
        } else if d < 0.0 {
            (0.0, 0.0)
        } else {
            (d, 1.0)
        };
        if config.use_log_density {
            feats[j] = (c + LOG_FLOOR).ln();
            slope[j] = dc / (c + LOG_FLOOR);
        } else {
            feats[j] = c;
            slope[j] = dc;
        }
    }
    (feats, slope)
}

/// Joins two pooled vectors into one feature row.
pub fn concat_features(u: &PooledVector, v: &PooledVector, mode: ConcatMode) -> Result<Array1<f64>> {
    if u.dim() != v.dim() {
        return Err(AenError::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let n = u.dim();
    let mut out = Array1::zeros(n * mode.blocks());
    out.slice_mut(s![..n]).assign(&u.0);
    out.slice_mut(s![n..2 * n]).assign(&v.0);
    let mut next = 2 * n;
    if matches!(mode, ConcatMode::UvProd | ConcatMode::UvProdAbsDiff) {
        out.slice_mut(s![next..next + n]).assign(&(&u.0 * &v.0));
        next += n;
    }
    if matches!(mode, ConcatMode::UvAbsDiff | ConcatMode::UvProdAbsDiff) {
        out.slice_mut(s![next..next + n]).assign(&(&u.0 - &v.0).mapv(f64::abs));
    }
    Ok(out)
}

/// Pulls a feature gradient back onto `u` and `v`. `|0|` gets subgradient 0.
pub(crate) fn concat_backward(
    u: &Array1<f64>,
    v: &Array1<f64>,
    mode: ConcatMode,
    d_feat: &[f64],
) -> (Array1<f64>, Array1<f64>) {
    let n = u.len();
    let mut du = Array1::from(d_feat[..n].to_vec());
    let mut dv = Array1::from(d_feat[n..2 * n].to_vec());
    let mut next = 2 * n;
    if matches!(mode, ConcatMode::UvProd | ConcatMode::UvProdAbsDiff) {
        for j in 0..n {
            du[j] += d_feat[next + j] * v[j];
            dv[j] += d_feat[next + j] * u[j];
        }
        next += n;
    }
    if matches!(mode, ConcatMode::UvAbsDiff | ConcatMode::UvProdAbsDiff) {
        for j in 0..n {
            let sign = (u[j] - v[j]).signum() * f64::from(u[j] != v[j]);
            du[j] += d_feat[next + j] * sign;
            dv[j] -= d_feat[next + j] * sign;
        }
    }
    (du, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;
    use ndarray::array;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> PooledVector {
        PooledVector(Array1::from(v.to_vec()))
    }

    #[test]
    fn concat_examples() {
        let f = concat_features(&pv(&[1.0, 2.0]), &pv(&[3.0, -1.0]), ConcatMode::UvProd).unwrap();
        assert_eq!(f.to_vec(), vec![1.0, 2.0, 3.0, -1.0, 3.0, -2.0]);
        let u = pv(&[0.5, -0.25, 2.0]);
        let f = concat_features(&u, &u, ConcatMode::UvAbsDiff).unwrap();
        assert!(f.slice(s![6..]).iter().all(|&x| x == 0.0));
        let big = pv(&vec![0.1; 384]);
        assert_eq!(concat_features(&big, &big, ConcatMode::UvProdAbsDiff).unwrap().len(), 1536);
        assert!(concat_features(&pv(&[1.0]), &pv(&[1.0, 2.0]), ConcatMode::Uv).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(weighted_ce_loss([0.0, 1.0], 1, 6.0).unwrap(), 0.0);
        assert!((weighted_ce_loss([0.5, 0.5], 1, 6.0).unwrap() - 4.1588831).abs() < 1e-7);
        assert!((weighted_ce_loss([0.5, 0.5], 0, 6.0).unwrap() - 0.6931472).abs() < 1e-7);
        // floored, finite
        assert!((weighted_ce_loss([1.0, 0.0], 1, 1.0).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert!(weighted_ce_loss([0.7, 0.7], 0, 1.0).is_err());
        assert!(weighted_ce_loss([-0.1, 1.1], 0, 1.0).is_err());
        assert!(weighted_ce_loss([0.5, 0.5], 2, 1.0).is_err());
        assert!(weighted_ce_loss([0.5, 0.5], 1, 0.0).is_err());
    }

    #[test]
    fn clamp_and_log() {
        let mut cfg = HeadConfig::new(HeadKind::Linear, 3);
        cfg.density_clamp = 2.0;
        let (f, g) = density_features(&array![0.5, 3.0, 0.0], &cfg);
        assert_eq!(f.to_vec(), vec![0.5, 2.0, 0.0]);
        assert_eq!(g.to_vec(), vec![1.0, 0.0, 1.0]);
        cfg.use_log_density = true;
        let (f, _) = density_features(&array![0.0], &cfg);
        assert!((f[0] - LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        for label in [0u8, 1] {
            let z = [0.3, -1.2];
            let (_, g) = loss_and_logit_grad(z, label, 6.0).unwrap();
            for k in 0..2 {
                let mut up = z;
                up[k] += 1e-6;
                let mut dn = z;
                dn[k] -= 1e-6;
                let fd = (loss_and_logit_grad(up, label, 6.0).unwrap().0 - loss_and_logit_grad(dn, label, 6.0).unwrap().0)
                    / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let p = softmax([a, b]);
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            if (a - b).abs() < 700.0 {
                prop_assert!(p[0] > 0.0 && p[1] > 0.0);
            }
        }

        #[test]
        fn argmax_shift_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -100.0f64..100.0) {
            let p = softmax([a, b]);
            let q = softmax([a + c, b + c]);
            prop_assert_eq!(p[1] > p[0], q[1] > q[0]);
        }

        #[test]
        fn weight_scales_positive_loss(p1 in 0.0f64..=1.0, w in 0.01f64..100.0) {
            let p = [1.0 - p1, p1];
            let base = weighted_ce_loss(p, 1, 1.0).unwrap();
            prop_assert_eq!(weighted_ce_loss(p, 1, w).unwrap(), w * base);
        }
    }
}
