use ndarray::Array1;

use super::bundle::{Gradients, ModelBundle};
use super::features::{concat_backward, concat_features, density_features, softmax};
use super::head::HeadParams;
use super::{FeatureMode, HeadConfig, KdeSide};
use crate::data::{preprocess_condition, LabeledPair};
use crate::embeddings::{mean_pool, EncodedText, PooledVector, TextEncoder, TokenEmbeddings};
use crate::error::{AenError, Result};
use crate::kde::DimKde;

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub features: Array1<f64>,
    pub logits: [f64; 2],
    pub probabilities: [f64; 2],
    /// Raw densities before clamping; empty for concat features.
    pub densities: Array1<f64>,
    pub(crate) inner: FeatureTrace,
}

#[derive(Debug, Clone)]
pub(crate) enum FeatureTrace {
    Kde {
        kde: DimKde,
        query: Array1<f64>,
        slope: Array1<f64>,
    },
    Concat {
        u: Array1<f64>,
        v: Array1<f64>,
        mode: super::ConcatMode,
    },
}

impl FeatureTrace {
    pub(crate) fn bandwidths(&self) -> Option<&Array1<f64>> {
        match self {
            FeatureTrace::Kde { kde, .. } => Some(kde.bandwidths()),
            FeatureTrace::Concat { .. } => None,
        }
    }

    pub(crate) fn kink_margin(&self) -> f64 {
        match self {
            FeatureTrace::Kde { kde, query, .. } => kde.min_kink_distance(query.as_slice().expect("contiguous")),
            FeatureTrace::Concat { .. } => f64::INFINITY,
        }
    }
}

impl ForwardTrace {
    /// Smallest distance from any kernel argument to a kernel kink.
    pub fn kink_margin(&self) -> f64 {
        self.inner.kink_margin()
    }
}

/// Clamped (and optionally log-transformed) densities of `query` under `kde`.
pub fn kde_features_for_query(kde: &DimKde, query: &PooledVector, config: &HeadConfig) -> Result<Array1<f64>> {
    let densities = kde.eval_density(query.as_slice())?;
    Ok(density_features(&densities, config).0)
}

/// Eval-mode class probabilities for one feature row.
pub fn head_probabilities(head: &HeadParams, features: &Array1<f64>) -> Result<[f64; 2]> {
    let logits = head.forward_row(features.as_slice().expect("contiguous"))?;
    Ok(softmax(logits))
}

pub(crate) fn compute_features(
    bundle: &ModelBundle,
    statement: &TokenEmbeddings,
    condition: &TokenEmbeddings,
) -> Result<(Array1<f64>, Array1<f64>, FeatureTrace)> {
    compute_features_with(bundle, statement, condition, None)
}

/// As [`compute_features`], optionally reusing fixed bandwidths instead of
/// re-estimating them from the KDE input.
pub(crate) fn compute_features_with(
    bundle: &ModelBundle,
    statement: &TokenEmbeddings,
    condition: &TokenEmbeddings,
    bandwidths: Option<&Array1<f64>>,
) -> Result<(Array1<f64>, Array1<f64>, FeatureTrace)> {
    let arch = &bundle.arch;
    for side in [statement, condition] {
        if side.dim() != arch.embedding_dim {
            return Err(AenError::DimensionMismatch {
                expected: arch.embedding_dim,
                found: side.dim(),
            });
        }
        if side.attended_count() == 0 {
            return Err(AenError::domain("input has no attended tokens"));
        }
    }
    match arch.features {
        FeatureMode::Kde => {
            let (kde_input, pooled_input) = match arch.kde_side {
                KdeSide::Statement => (statement, condition),
                KdeSide::Condition => (condition, statement),
            };
            let kde = match bandwidths {
                Some(h) => DimKde::from_parts(kde_input.attended_rows(), h.clone(), arch.kernel)?,
                None => DimKde::build(kde_input, arch.kernel, arch.bandwidth_rule)?,
            };
            let query = mean_pool(pooled_input)?.0;
            let densities = kde.eval_density(query.as_slice().expect("contiguous"))?;
            let (features, slope) = density_features(&densities, &arch.head);
            Ok((features, densities, FeatureTrace::Kde { kde, query, slope }))
        }
        FeatureMode::Concat(mode) => {
            let u = mean_pool(statement)?;
            let v = mean_pool(condition)?;
            let features = concat_features(&u, &v, mode)?;
            Ok((features, Array1::zeros(0), FeatureTrace::Concat { u: u.0, v: v.0, mode }))
        }
    }
}

/// Class probabilities for one statement/condition pair, head in eval mode.
///
/// With KDE features the `kde_side` input is expanded into per-dimension
/// densities and the other side is mean-pooled into the query.
pub fn aen_forward(
    bundle: &ModelBundle,
    statement: &TokenEmbeddings,
    condition: &TokenEmbeddings,
) -> Result<([f64; 2], ForwardTrace)> {
    let (features, densities, inner) = compute_features(bundle, statement, condition)?;
    let logits = bundle.head.forward_row(features.as_slice().expect("contiguous"))?;
    let probabilities = softmax(logits);
    Ok((
        probabilities,
        ForwardTrace {
            features,
            logits,
            probabilities,
            densities,
            inner,
        },
    ))
}

/// Encodes both sides of a pair; the condition is preprocessed first.
pub fn encode_pair(
    bundle: &ModelBundle,
    pair: &LabeledPair,
    external: Option<&dyn TextEncoder>,
) -> Result<(EncodedText, EncodedText)> {
    let statement = bundle.statement_encoder.encode(&pair.statement, external)?;
    let condition = bundle
        .condition_encoder
        .encode(&preprocess_condition(&pair.condition)?, external)?;
    Ok((statement, condition))
}

/// Adds `d rows` to the table gradient for every attended token.
fn scatter_rows(
    table: &mut Option<ndarray::Array2<f64>>,
    encoded: &EncodedText,
    row_grad: impl Fn(usize, usize) -> f64,
    tokens: &[usize],
) {
    let (Some(table), Some(rows)) = (table.as_mut(), encoded.table_rows.as_ref()) else {
        return;
    };
    for (k, &t) in tokens.iter().enumerate() {
        let r = rows[t];
        for j in 0..table.ncols() {
            table[[r, j]] += row_grad(k, j);
        }
    }
}

/// Pulls a gradient on the head input back into the toy encoder tables.
pub(crate) fn backprop_features(
    inner: &FeatureTrace,
    statement: &EncodedText,
    condition: &EncodedText,
    kde_side: KdeSide,
    d_feat: &[f64],
    grads: &mut Gradients,
) {
    let (d_statement_pool, d_condition_pool, d_centers) = match inner {
        FeatureTrace::Kde { kde, query, slope } => {
            let q = query.as_slice().expect("contiguous");
            let (dq, dc) = kde.eval_density_gradients(q).expect("query validated in forward pass");
            let d_dens: Array1<f64> = Array1::from_iter(d_feat.iter().zip(slope).map(|(g, s)| g * s));
            let d_query = &d_dens * &dq;
            let d_centers = &dc * &d_dens;
            match kde_side {
                KdeSide::Statement => (None, Some(d_query), Some((d_centers, true))),
                KdeSide::Condition => (Some(d_query), None, Some((d_centers, false))),
            }
        }
        FeatureTrace::Concat { u, v, mode } => {
            let (du, dv) = concat_backward(u, v, *mode, d_feat);
            (Some(du), Some(dv), None)
        }
    };

    let pool = |table: &mut Option<ndarray::Array2<f64>>, enc: &EncodedText, d: &Array1<f64>| {
        let idx = enc.tokens.attended_indices();
        let n = idx.len() as f64;
        scatter_rows(table, enc, |_, j| d[j] / n, &idx);
    };
    if let Some(d) = &d_statement_pool {
        pool(&mut grads.statement_table, statement, d);
    }
    if let Some(d) = &d_condition_pool {
        pool(&mut grads.condition_table, condition, d);
    }
    if let Some((dc, on_statement)) = &d_centers {
        let (table, enc) = if *on_statement {
            (&mut grads.statement_table, statement)
        } else {
            (&mut grads.condition_table, condition)
        };
        let idx = enc.tokens.attended_indices();
        scatter_rows(table, enc, |k, j| dc[[k, j]], &idx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::BandwidthRule;
    use crate::model::{Architecture, ConcatMode, HeadKind};
    use crate::rng::SplitMix64;
    use ndarray::{array, Array2};

    fn random_tokens(rng: &mut SplitMix64, rows: usize, dim: usize) -> TokenEmbeddings {
        TokenEmbeddings::all_attended(Array2::from_shape_fn((rows, dim), |_| rng.next_normal()))
    }

    fn randomize_head(bundle: &mut ModelBundle, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        for p in bundle.head.trainable_mut() {
            p.iter_mut().for_each(|v| *v = 0.5 * rng.next_normal());
        }
    }

    #[test]
    fn zero_head_is_indifferent() {
        let bundle = ModelBundle::new(Architecture::new(6, 3)).unwrap();
        let mut rng = SplitMix64::new(1);
        for _ in 0..5 {
            let s = random_tokens(&mut rng, 7, 6);
            let c = random_tokens(&mut rng, 3, 6);
            assert_eq!(aen_forward(&bundle, &s, &c).unwrap().0, [0.5, 0.5]);
        }
    }

    #[test]
    fn tiny_bundle_by_hand() {
        let mut arch = Architecture::new(2, 0);
        arch.bandwidth_rule = BandwidthRule::Fixed(1.0);
        let mut bundle = ModelBundle::new(arch).unwrap();
        bundle.head.output.weight = array![[1.0, 0.0], [0.0, 1.0]];
        let s = TokenEmbeddings::all_attended(array![[0.0, 0.0]]);
        let c = TokenEmbeddings::all_attended(array![[1.0, -2.0], [-1.0, 2.0]]);
        let (p, trace) = aen_forward(&bundle, &s, &c).unwrap();
        assert!((trace.logits[0] - 0.398_942_3).abs() < 1e-7);
        assert!((trace.logits[1] - 0.398_942_3).abs() < 1e-7);
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn swapping_sides_on_identical_inputs_keeps_densities() {
        let mut rng = SplitMix64::new(9);
        let x = random_tokens(&mut rng, 5, 4);
        let a = ModelBundle::new(Architecture::new(4, 0)).unwrap();
        let mut arch = Architecture::new(4, 0);
        arch.kde_side = KdeSide::Condition;
        let b = ModelBundle::new(arch).unwrap();
        let (_, ta) = aen_forward(&a, &x, &x).unwrap();
        let (_, tb) = aen_forward(&b, &x, &x).unwrap();
        assert_eq!(ta.densities, tb.densities);
    }

    #[test]
    fn condition_enters_only_through_its_mean() {
        let mut bundle = ModelBundle::new(Architecture::new(2, 0)).unwrap();
        randomize_head(&mut bundle, 4);
        let mut rng = SplitMix64::new(2);
        let s = random_tokens(&mut rng, 6, 2);
        let c1 = TokenEmbeddings::all_attended(array![[1.0, 2.0], [3.0, 4.0]]);
        let c2 = TokenEmbeddings::all_attended(array![[2.0, 3.0]]);
        let c3 = TokenEmbeddings::new(array![[2.0, 3.0], [9.0, 9.0]], vec![true, false]).unwrap();
        let p1 = aen_forward(&bundle, &s, &c1).unwrap().0;
        assert_eq!(p1, aen_forward(&bundle, &s, &c2).unwrap().0);
        assert_eq!(p1, aen_forward(&bundle, &s, &c3).unwrap().0);
        assert_ne!(p1, [0.5, 0.5]);
    }

    #[test]
    fn densities_are_clamped_then_logged() {
        let mut arch = Architecture::new(1, 0);
        arch.bandwidth_rule = BandwidthRule::Fixed(1e-9);
        let bundle = ModelBundle::new(arch.clone()).unwrap();
        let s = TokenEmbeddings::all_attended(array![[0.0]]);
        let (_, t) = aen_forward(&bundle, &s, &s).unwrap();
        assert!(t.densities[0] > 1e8);
        assert_eq!(t.features[0], 1e6);

        arch.head.use_log_density = true;
        let bundle = ModelBundle::new(arch).unwrap();
        let far = TokenEmbeddings::all_attended(array![[1.0]]);
        let (_, t) = aen_forward(&bundle, &s, &far).unwrap();
        assert_eq!(t.densities[0], 0.0);
        assert_eq!(t.features[0], (1e-12f64).ln());
    }

    #[test]
    fn concat_features_feed_the_head() {
        let arch = Architecture::new(3, 1).with_features(FeatureMode::Concat(ConcatMode::UvProdAbsDiff));
        assert_eq!(arch.head.input_width, 12);
        let bundle = ModelBundle::new(arch).unwrap();
        let mut rng = SplitMix64::new(5);
        let s = random_tokens(&mut rng, 4, 3);
        let c = random_tokens(&mut rng, 2, 3);
        let (p, t) = aen_forward(&bundle, &s, &c).unwrap();
        assert_eq!(t.features.len(), 12);
        assert!(t.densities.is_empty());
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn mismatched_widths_and_empty_inputs_fail() {
        let bundle = ModelBundle::new(Architecture::new(3, 0)).unwrap();
        let mut rng = SplitMix64::new(0);
        let s = random_tokens(&mut rng, 2, 3);
        let c = random_tokens(&mut rng, 2, 4);
        assert!(aen_forward(&bundle, &s, &c).is_err());
        let empty = TokenEmbeddings::new(Array2::zeros((2, 3)), vec![false, false]).unwrap();
        assert!(aen_forward(&bundle, &s, &empty).is_err());
    }

    #[test]
    fn mlp_head_eval_matches_batch_eval() {
        let mut arch = Architecture::new(4, 2);
        arch.head.kind = HeadKind::Mlp(vec![5, 3]);
        let mut bundle = ModelBundle::new(arch).unwrap();
        randomize_head(&mut bundle, 8);
        let mut rng = SplitMix64::new(3);
        let s = random_tokens(&mut rng, 6, 4);
        let c = random_tokens(&mut rng, 2, 4);
        let (p, t) = aen_forward(&bundle, &s, &c).unwrap();
        let x = t.features.clone().insert_axis(ndarray::Axis(0));
        let z = crate::model::mlp_forward(&bundle.head, &x, false).unwrap();
        assert_eq!(softmax([z[[0, 0]], z[[0, 1]]]), p);
    }
}
