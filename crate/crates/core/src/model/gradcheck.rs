use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::bundle::ModelBundle;
use super::features::weighted_ce_loss;
use super::features::softmax;
use super::forward::compute_features_with;
use super::head::HeadParams;
use super::train::{batch_pass, encode_batch};
use crate::data::LabeledPair;
use crate::embeddings::{EncodedText, TextEncoder};
use crate::error::{AenError, Result};

pub const MAX_CHECK_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter and flat index where the maximum occurred.
    pub worst_parameter: String,
    pub checked: usize,
    pub loss: f64,
    /// Smallest kernel-argument distance to a kink, in bandwidth units.
    pub kink_margin: f64,
    /// Smallest |pre-ReLU value| in the head.
    pub relu_margin: f64,
}

/// `|a - n| / max(|a|, |n|)`, or `|a - n|` when both are below 1e-8.
pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Batch loss with bandwidths pinned to `frozen`, head in training mode,
/// running statistics untouched.
fn frozen_loss(
    bundle: &ModelBundle,
    pairs: &[&LabeledPair],
    frozen: &[Option<Array1<f64>>],
    external: Option<&dyn TextEncoder>,
) -> Result<f64> {
    let encoded = encode_batch(bundle, pairs, external)?;
    let mut x = Array2::zeros((pairs.len(), bundle.arch.head.input_width));
    for (r, ((s, c), h)) in encoded.iter().zip(frozen).enumerate() {
        let (f, _, _) = compute_features_with(bundle, &s.tokens, &c.tokens, h.as_ref())?;
        x.row_mut(r).assign(&f);
    }
    let (logits, _) = bundle.head.forward_batch(&x, true)?;
    let mut total = 0.0;
    for (r, p) in pairs.iter().enumerate() {
        let probs = softmax([logits[[r, 0]], logits[[r, 1]]]);
        total += weighted_ce_loss(probs, p.label, bundle.arch.class_weight)?;
    }
    let loss = total / pairs.len() as f64;
    if !loss.is_finite() {
        return Err(AenError::NonFinite {
            batch: 0,
            what: "loss during finite differencing".into(),
        });
    }
    Ok(loss)
}

fn touched(encoded: &[(EncodedText, EncodedText)], statement: bool) -> BTreeSet<usize> {
    encoded
        .iter()
        .filter_map(|(s, c)| if statement { s.table_rows.as_ref() } else { c.table_rows.as_ref() })
        .flatten()
        .copied()
        .collect()
}

/// Compares every analytic gradient of the batch loss with a central
/// difference of step `epsilon`.
///
/// Bandwidths are held at their values for the unperturbed parameters, so
/// the comparison is against the same stop-gradient function that training
/// differentiates. Table rows no input token reads have a numeric gradient
/// of exactly zero and are checked against that without perturbation.
pub fn gradient_check(
    bundle: &ModelBundle,
    batch: &[LabeledPair],
    epsilon: f64,
    external: Option<&dyn TextEncoder>,
) -> Result<GradCheckReport> {
    if batch.is_empty() || batch.len() > MAX_CHECK_BATCH {
        return Err(AenError::domain(format!(
            "gradient check needs 1..={MAX_CHECK_BATCH} pairs, got {}",
            batch.len()
        )));
    }
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(AenError::domain(format!("epsilon must lie in [1e-7, 1e-4], got {epsilon}")));
    }
    let pairs: Vec<&LabeledPair> = batch.iter().collect();
    let encoded = encode_batch(bundle, &pairs, external)?;
    let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
    let pass = batch_pass(bundle, &encoded, &labels, bundle.arch.class_weight, 0)?;
    let frozen: Vec<Option<Array1<f64>>> = pass.traces.iter().map(|t| t.bandwidths().cloned()).collect();
    let kink_margin = pass.traces.iter().map(|t| t.kink_margin()).fold(f64::INFINITY, f64::min);
    let relu_margin = HeadParams::relu_margin(&pass.cache);

    let names = bundle.parameter_names();
    let analytic: Vec<Vec<f64>> = pass.grads.tensors().iter().map(|t| t.to_vec()).collect();
    let dim = bundle.arch.embedding_dim;
    let mut table_rows = Vec::new();
    if bundle.statement_encoder.is_trainable() {
        table_rows.push(touched(&encoded, true));
    }
    if bundle.condition_encoder.is_trainable() {
        table_rows.push(touched(&encoded, false));
    }

    let mut work = bundle.clone();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    let mut record = |err: f64, name: &str, e: usize| {
        checked += 1;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, format!("{name}[{e}]"));
        }
    };
    for (t, grad) in analytic.iter().enumerate() {
        let rows = table_rows.get(t);
        for (e, &a) in grad.iter().enumerate() {
            if let Some(rows) = rows {
                if !rows.contains(&(e / dim)) {
                    record(a.abs(), &names[t], e);
                    continue;
                }
            }
            let original = work.parameters()[t][e];
            work.parameters_mut()[t][e] = original + epsilon;
            let up = frozen_loss(&work, &pairs, &frozen, external)?;
            work.parameters_mut()[t][e] = original - epsilon;
            let down = frozen_loss(&work, &pairs, &frozen, external)?;
            work.parameters_mut()[t][e] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            record(relative_error(a, numeric), &names[t], e);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        checked,
        loss: pass.loss,
        kink_margin,
        relu_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_dataset, ToyDataSpec};
    use crate::kernels::KernelKind;
    use crate::model::{Architecture, ConcatMode, EncoderSpec, FeatureMode, HeadKind};
    use crate::rng::SplitMix64;

    fn data() -> Vec<LabeledPair> {
        generate_toy_dataset(&ToyDataSpec::new(5, 64)).unwrap()
    }

    /// Tables uniform on [-1, 1], head tensors N(0, 0.3²), resampled until no
    /// argument sits near a kink or ReLU hinge and no gradient lies in the
    /// band where central differences cannot resolve 1e-4 relative error.
    fn conditioned(arch: &Architecture, batch: &[LabeledPair], seed: u64) -> ModelBundle {
        let mut rng = SplitMix64::new(seed);
        loop {
            let mut bundle = ModelBundle::new(arch.clone()).unwrap();
            let tables = bundle.parameters().len() - bundle.head.trainable().len();
            for (k, p) in bundle.parameters_mut().into_iter().enumerate() {
                for v in p.iter_mut() {
                    *v = if k < tables { 2.0 * rng.next_f64() - 1.0 } else { 0.3 * rng.next_normal() };
                }
            }
            let refs: Vec<&LabeledPair> = batch.iter().collect();
            let encoded = encode_batch(&bundle, &refs, None).unwrap();
            let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
            let pass = batch_pass(&bundle, &encoded, &labels, bundle.arch.class_weight, 0).unwrap();
            let kink = pass.traces.iter().map(|t| t.kink_margin()).fold(f64::INFINITY, f64::min);
            let unresolved = pass.grads.tensors().iter().flat_map(|t| t.iter()).any(|g| (1e-8..1e-6).contains(&g.abs()));
            if kink >= 1e-3 && HeadParams::relu_margin(&pass.cache) >= 1e-3 && !unresolved {
                return bundle;
            }
        }
    }

    fn arch(kernel: KernelKind, head: HeadKind) -> Architecture {
        let mut arch = Architecture::new(4, 7);
        arch.kernel = kernel;
        arch.head.kind = head;
        arch.statement_encoder = EncoderSpec::Toy { vocab_size: 64 };
        arch.condition_encoder = EncoderSpec::Toy { vocab_size: 64 };
        arch
    }

    #[test]
    fn gaussian_linear_matches_differences() {
        let data = data();
        let batch = &data[..4];
        let bundle = conditioned(&arch(KernelKind::Gaussian, HeadKind::Linear), batch, 1);
        let report = gradient_check(&bundle, batch, 1e-5, None).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, bundle.parameter_count());
    }

    #[test]
    fn epanechnikov_away_from_support_edges() {
        let data = data();
        let batch = &data[8..12];
        let bundle = conditioned(&arch(KernelKind::Epanechnikov, HeadKind::Linear), batch, 2);
        let report = gradient_check(&bundle, batch, 1e-5, None).unwrap();
        assert!(report.kink_margin >= 1e-3);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn mlp_heads_and_weighted_loss() {
        let data = data();
        let batch = &data[16..22];
        let mut a = arch(KernelKind::Triangular, HeadKind::Mlp(vec![5, 3]));
        a.class_weight = 6.0;
        let bundle = conditioned(&a, batch, 3);
        let report = gradient_check(&bundle, batch, 1e-5, None).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn concat_features_and_condition_side_kde() {
        let data = data();
        let batch = &data[30..34];
        let a = arch(KernelKind::Gaussian, HeadKind::Mlp(vec![4]))
            .with_features(FeatureMode::Concat(ConcatMode::UvProdAbsDiff));
        let bundle = conditioned(&a, batch, 4);
        assert!(gradient_check(&bundle, batch, 1e-5, None).unwrap().max_relative_error < 1e-4);

        let mut a = arch(KernelKind::Gaussian, HeadKind::Linear);
        a.kde_side = crate::model::KdeSide::Condition;
        let bundle = conditioned(&a, batch, 5);
        assert!(gradient_check(&bundle, batch, 1e-5, None).unwrap().max_relative_error < 1e-4);
    }

    #[test]
    fn zero_weight_head_bias_gradients_agree() {
        let data = data();
        let batch = &data[..4];
        let mut bundle = ModelBundle::new(arch(KernelKind::Gaussian, HeadKind::Linear)).unwrap();
        bundle.head.output.bias[1] = 0.4;
        let refs: Vec<&LabeledPair> = batch.iter().collect();
        let encoded = encode_batch(&bundle, &refs, None).unwrap();
        let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
        let pass = batch_pass(&bundle, &encoded, &labels, 1.0, 0).unwrap();
        let frozen: Vec<_> = pass.traces.iter().map(|t| t.bandwidths().cloned()).collect();
        let eps = 1e-5;
        for k in 0..2 {
            let mut up = bundle.clone();
            up.head.output.bias[k] += eps;
            let mut down = bundle.clone();
            down.head.output.bias[k] -= eps;
            let numeric = (frozen_loss(&up, &refs, &frozen, None).unwrap()
                - frozen_loss(&down, &refs, &frozen, None).unwrap())
                / (2.0 * eps);
            assert!((numeric - pass.grads.head.output.bias[k]).abs() < 1e-8);
        }
        let report = gradient_check(&bundle, batch, eps, None).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn arguments_are_validated() {
        let data = data();
        let bundle = ModelBundle::new(arch(KernelKind::Gaussian, HeadKind::Linear)).unwrap();
        assert!(gradient_check(&bundle, &data[..9], 1e-5, None).is_err());
        assert!(gradient_check(&bundle, &[], 1e-5, None).is_err());
        assert!(gradient_check(&bundle, &data[..2], 1e-3, None).is_err());
        assert!(gradient_check(&bundle, &data[..2], 1e-8, None).is_err());
    }

    #[test]
    fn relative_error_falls_back_to_absolute() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(3e-9, 1e-9) - 2e-9).abs() < 1e-24);
    }
}
