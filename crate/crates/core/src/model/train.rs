use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::bundle::{Gradients, ModelBundle};
use super::features::{loss_and_logit_grad, softmax, weighted_ce_loss};
use super::forward::{aen_forward, backprop_features, compute_features, encode_pair, FeatureTrace};
use super::head::HeadCache;
use crate::analysis::{compute_metrics, MetricsReport};
use crate::data::{batch_indices_by_length, LabeledPair};
use crate::embeddings::{EncodedText, TextEncoder};
use crate::error::{AenError, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Multiplies the loss of positive examples.
    pub class_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 20,
            batch_size: 16,
            optimizer: Optimizer::default(),
            class_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(AenError::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(AenError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(AenError::Config("batch_size must be positive".into()));
        }
        if !(self.class_weight > 0.0 && self.class_weight.is_finite()) {
            return Err(AenError::Config("class_weight must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(AenError::Config("adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub metrics: MetricsReport,
}

/// Everything computed for one batch in training mode.
pub(crate) struct BatchPass {
    pub loss: f64,
    pub losses: Vec<f64>,
    pub probabilities: Vec<[f64; 2]>,
    pub grads: Gradients,
    pub cache: HeadCache,
    pub traces: Vec<FeatureTrace>,
}

pub(crate) fn encode_batch(
    bundle: &ModelBundle,
    pairs: &[&LabeledPair],
    external: Option<&dyn TextEncoder>,
) -> Result<Vec<(EncodedText, EncodedText)>> {
    pairs.iter().map(|p| encode_pair(bundle, p, external)).collect()
}

/// Training-mode forward and backward pass over pre-encoded inputs.
pub(crate) fn batch_pass(
    bundle: &ModelBundle,
    encoded: &[(EncodedText, EncodedText)],
    labels: &[u8],
    class_weight: f64,
    batch_index: usize,
) -> Result<BatchPass> {
    let b = encoded.len();
    let width = bundle.arch.head.input_width;
    let mut x = Array2::zeros((b, width));
    let mut traces = Vec::with_capacity(b);
    for (r, (s, c)) in encoded.iter().enumerate() {
        let (features, _, trace) = compute_features(bundle, &s.tokens, &c.tokens)?;
        x.row_mut(r).assign(&features);
        traces.push(trace);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AenError::NonFinite {
            batch: batch_index,
            what: "head input".into(),
        });
    }
    let (logits, cache) = bundle.head.forward_batch(&x, true)?;
    let mut d_logits = Array2::zeros((b, 2));
    let mut losses = Vec::with_capacity(b);
    let mut probabilities = Vec::with_capacity(b);
    for r in 0..b {
        let z = [logits[[r, 0]], logits[[r, 1]]];
        if !z[0].is_finite() || !z[1].is_finite() {
            return Err(AenError::NonFinite {
                batch: batch_index,
                what: "logits".into(),
            });
        }
        let (loss, g) = loss_and_logit_grad(z, labels[r], class_weight)?;
        losses.push(loss);
        probabilities.push(softmax(z));
        d_logits[[r, 0]] = g[0] / b as f64;
        d_logits[[r, 1]] = g[1] / b as f64;
    }
    let loss = losses.iter().sum::<f64>() / b as f64;
    if !loss.is_finite() {
        return Err(AenError::NonFinite {
            batch: batch_index,
            what: "loss".into(),
        });
    }
    let (head_grads, dx) = bundle.head.backward(&cache, &d_logits);
    let mut grads = Gradients::zeros_for(bundle);
    grads.head = head_grads;
    for (r, ((s, c), trace)) in encoded.iter().zip(&traces).enumerate() {
        let row = dx.row(r).to_vec();
        backprop_features(trace, s, c, bundle.arch.kde_side, &row, &mut grads);
    }
    if !grads.all_finite() {
        return Err(AenError::NonFinite {
            batch: batch_index,
            what: "gradient".into(),
        });
    }
    Ok(BatchPass {
        loss,
        losses,
        probabilities,
        grads,
        cache,
        traces,
    })
}

/// Mean weighted cross-entropy of a batch and its gradient with respect to
/// every trainable parameter, head in training mode.
pub fn batch_loss_and_gradients(
    bundle: &ModelBundle,
    pairs: &[LabeledPair],
    class_weight: f64,
    external: Option<&dyn TextEncoder>,
) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(AenError::domain("empty batch"));
    }
    let refs: Vec<&LabeledPair> = pairs.iter().collect();
    let encoded = encode_batch(bundle, &refs, external)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let pass = batch_pass(bundle, &encoded, &labels, class_weight, 0)?;
    Ok((pass.loss, pass.grads))
}

/// Optimizer state and epoch counter for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            epoch: 0,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Batches in the order epoch `epoch` visits them: the data is shuffled
    /// with seed `seed + epoch`, grouped by statement length, and the groups
    /// shuffled with the same stream.
    pub fn epoch_batches(seed: u64, epoch: usize, data: &[LabeledPair], batch_size: usize) -> Result<Vec<Vec<usize>>> {
        let mut rng = SplitMix64::new(seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let shuffled: Vec<LabeledPair> = order.iter().map(|&i| data[i].clone()).collect();
        let mut batches: Vec<Vec<usize>> = batch_indices_by_length(&shuffled, batch_size)?
            .into_iter()
            .map(|b| b.into_iter().map(|i| order[i]).collect())
            .collect();
        rng.shuffle(&mut batches);
        Ok(batches)
    }

    /// One pass over `data`. `external` supplies embeddings for external
    /// encoder slots; toy slots ignore it.
    pub fn train_epoch(
        &mut self,
        bundle: &mut ModelBundle,
        data: &[LabeledPair],
        external: Option<&dyn TextEncoder>,
    ) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(AenError::domain("cannot train on an empty dataset"));
        }
        bundle.arch.class_weight = self.config.class_weight;
        let batches = Self::epoch_batches(bundle.arch.seed, self.epoch, data, self.config.batch_size)?;
        let mut predictions = Vec::with_capacity(data.len());
        let mut labels = Vec::with_capacity(data.len());
        let mut losses = Vec::with_capacity(data.len());
        for (bi, idx) in batches.iter().enumerate() {
            let pairs: Vec<&LabeledPair> = idx.iter().map(|&i| &data[i]).collect();
            let encoded = encode_batch(bundle, &pairs, external)?;
            let batch_labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
            let pass = batch_pass(bundle, &encoded, &batch_labels, self.config.class_weight, bi)?;
            bundle.head.update_running_stats(&pass.cache);
            self.apply(bundle, &pass.grads);
            if !bundle.all_finite() {
                return Err(AenError::NonFinite {
                    batch: bi,
                    what: "parameters after update".into(),
                });
            }
            predictions.extend(pass.probabilities.iter().map(|p| u8::from(p[1] > p[0])));
            labels.extend(batch_labels);
            losses.extend(pass.losses);
        }
        let metrics = compute_metrics(&predictions, &labels, Some(&losses))?;
        let report = EpochReport {
            epoch: self.epoch,
            batches: batches.len(),
            mean_loss: metrics.loss,
            metrics,
        };
        self.epoch += 1;
        Ok(report)
    }

    /// Runs `config.epochs` epochs.
    pub fn fit(
        &mut self,
        bundle: &mut ModelBundle,
        data: &[LabeledPair],
        external: Option<&dyn TextEncoder>,
    ) -> Result<Vec<EpochReport>> {
        (0..self.config.epochs)
            .map(|_| self.train_epoch(bundle, data, external))
            .collect()
    }

    fn apply(&mut self, bundle: &mut ModelBundle, grads: &Gradients) {
        let lr = self.config.learning_rate;
        let tensors = grads.tensors();
        self.step += 1;
        match self.config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in bundle.parameters_mut().into_iter().zip(tensors) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                if self.first_moment.is_empty() {
                    self.first_moment = tensors.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let params = bundle.parameters_mut();
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(tensors)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Eval-mode class probabilities for one pair.
pub fn predict(bundle: &ModelBundle, pair: &LabeledPair, external: Option<&dyn TextEncoder>) -> Result<[f64; 2]> {
    let (s, c) = encode_pair(bundle, pair, external)?;
    Ok(aen_forward(bundle, &s.tokens, &c.tokens)?.0)
}

/// Eval-mode metrics, with losses weighted by the bundle's class weight.
pub fn evaluate(bundle: &ModelBundle, data: &[LabeledPair], external: Option<&dyn TextEncoder>) -> Result<MetricsReport> {
    let mut predictions = Vec::with_capacity(data.len());
    let mut losses = Vec::with_capacity(data.len());
    for pair in data {
        let p = predict(bundle, pair, external)?;
        predictions.push(u8::from(p[1] > p[0]));
        losses.push(weighted_ce_loss(p, pair.label, bundle.arch.class_weight)?);
    }
    let labels: Vec<u8> = data.iter().map(|p| p.label).collect();
    compute_metrics(&predictions, &labels, Some(&losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_dataset, ToyDataSpec};
    use crate::model::{Architecture, HeadKind};

    fn setup(head: HeadKind) -> (ModelBundle, Vec<LabeledPair>) {
        let mut arch = Architecture::new(8, 11);
        arch.head.kind = head;
        arch.statement_encoder = crate::model::EncoderSpec::Toy { vocab_size: 256 };
        arch.condition_encoder = crate::model::EncoderSpec::Toy { vocab_size: 256 };
        let data = generate_toy_dataset(&ToyDataSpec::new(4, 120)).unwrap();
        (ModelBundle::new(arch).unwrap(), data)
    }

    fn config(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let (start, data) = setup(HeadKind::Mlp(vec![4]));
        let run = || {
            let mut bundle = start.clone();
            let reports = Trainer::new(config(1e-3)).unwrap().fit(&mut bundle, &data, None).unwrap();
            (bundle, reports)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_ne!(a, start);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        for optimizer in [Optimizer::adam(), Optimizer::Sgd] {
            let (start, data) = setup(HeadKind::Linear);
            let mut bundle = start.clone();
            let mut trainer = Trainer::new(TrainConfig {
                optimizer,
                ..config(0.0)
            })
            .unwrap();
            let report = trainer.train_epoch(&mut bundle, &data, None).unwrap();
            assert_eq!(bundle, start);
            assert_eq!(report.metrics.n, data.len());
            assert!((report.mean_loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn epoch_batches_partition_the_data() {
        let (_, data) = setup(HeadKind::Linear);
        let batches = Trainer::epoch_batches(3, 1, &data, 7).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= 7));
        assert_ne!(batches, Trainer::epoch_batches(3, 2, &data, 7).unwrap());
    }

    #[test]
    fn non_finite_parameters_name_the_batch() {
        let (mut bundle, data) = setup(HeadKind::Linear);
        bundle.head.output.bias[0] = f64::NAN;
        let err = Trainer::new(config(1e-3)).unwrap().train_epoch(&mut bundle, &data, None).unwrap_err();
        assert!(matches!(err, AenError::NonFinite { batch: 0, .. }), "{err}");
    }

    #[test]
    fn empty_data_is_rejected() {
        let (mut bundle, _) = setup(HeadKind::Linear);
        assert!(Trainer::new(config(1e-3)).unwrap().train_epoch(&mut bundle, &[], None).is_err());
    }

    #[test]
    fn class_weight_scales_positive_gradients() {
        let (bundle, data) = setup(HeadKind::Linear);
        let positives: Vec<LabeledPair> = data.iter().filter(|p| p.label == 1).take(4).cloned().collect();
        let (l1, g1) = batch_loss_and_gradients(&bundle, &positives, 1.0, None).unwrap();
        let (l6, g6) = batch_loss_and_gradients(&bundle, &positives, 6.0, None).unwrap();
        assert!((l6 - 6.0 * l1).abs() < 1e-12);
        for (a, b) in g1.head.output.bias.iter().zip(&g6.head.output.bias) {
            assert!((6.0 * a - b).abs() < 1e-12);
        }
    }
}
