use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::head::HeadParams;
use super::{FeatureMode, HeadConfig, KdeSide};
use crate::embeddings::{EncodedText, TextEncoder, ToyEncoder, DEFAULT_VOCAB_SIZE};
use crate::error::{AenError, Result};
use crate::kde::BandwidthRule;
use crate::kernels::KernelKind;

/// How one side's text becomes token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// A trainable hashed embedding table.
    Toy { vocab_size: usize },
    /// Frozen embeddings supplied from outside (files or a remote service).
    External,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Toy {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

/// Everything about a model except its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub embedding_dim: usize,
    pub kernel: KernelKind,
    pub bandwidth_rule: BandwidthRule,
    pub kde_side: KdeSide,
    pub features: FeatureMode,
    pub head: HeadConfig,
    pub class_weight: f64,
    pub seed: u64,
    pub statement_encoder: EncoderSpec,
    pub condition_encoder: EncoderSpec,
}

impl Architecture {
    /// Defaults around a given embedding width: toy encoders, Gaussian kernel,
    /// Scott bandwidths, KDE on the statement, linear head on raw densities.
    pub fn new(embedding_dim: usize, seed: u64) -> Self {
        Architecture {
            embedding_dim,
            kernel: KernelKind::Gaussian,
            bandwidth_rule: BandwidthRule::Scott,
            kde_side: KdeSide::Statement,
            features: FeatureMode::Kde,
            head: HeadConfig::new(Default::default(), embedding_dim),
            class_weight: 1.0,
            seed,
            statement_encoder: EncoderSpec::default(),
            condition_encoder: EncoderSpec::default(),
        }
    }

    /// Head input width implied by the feature mode.
    pub fn feature_width(&self) -> usize {
        match self.features {
            FeatureMode::Kde => self.embedding_dim,
            FeatureMode::Concat(m) => m.blocks() * self.embedding_dim,
        }
    }

    /// Sets the feature mode and resizes the head input to match.
    pub fn with_features(mut self, features: FeatureMode) -> Self {
        self.features = features;
        self.head.input_width = self.feature_width();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(AenError::Config("embedding_dim must be positive".into()));
        }
        self.bandwidth_rule.validate()?;
        self.head.validate()?;
        if self.head.input_width != self.feature_width() {
            return Err(AenError::Config(format!(
                "head input_width {} does not match {} features of width {}",
                self.head.input_width,
                self.features,
                self.feature_width()
            )));
        }
        if !(self.class_weight > 0.0 && self.class_weight.is_finite()) {
            return Err(AenError::Config("class_weight must be positive".into()));
        }
        for spec in [self.statement_encoder, self.condition_encoder] {
            if let EncoderSpec::Toy { vocab_size: 0 } = spec {
                return Err(AenError::Config("toy vocab_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// An encoder as held by a bundle.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSlot {
    Toy(ToyEncoder),
    /// Marker for embeddings produced outside the bundle.
    External { dim: usize },
}

impl EncoderSlot {
    fn build(spec: EncoderSpec, dim: usize, seed: u64) -> Result<Self> {
        Ok(match spec {
            EncoderSpec::Toy { vocab_size } => EncoderSlot::Toy(ToyEncoder::new(seed, vocab_size, dim)?),
            EncoderSpec::External => EncoderSlot::External { dim },
        })
    }

    pub fn toy(&self) -> Option<&ToyEncoder> {
        match self {
            EncoderSlot::Toy(t) => Some(t),
            EncoderSlot::External { .. } => None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, EncoderSlot::Toy(_))
    }

    /// Encodes with the toy table, or with `external` for external slots.
    pub fn encode(&self, text: &str, external: Option<&dyn TextEncoder>) -> Result<EncodedText> {
        match (self, external) {
            (EncoderSlot::Toy(t), _) => t.encode(text),
            (EncoderSlot::External { dim }, Some(enc)) => {
                let out = enc.encode(text)?;
                if out.tokens.dim() != *dim {
                    return Err(AenError::DimensionMismatch {
                        expected: *dim,
                        found: out.tokens.dim(),
                    });
                }
                // external embeddings are frozen
                Ok(EncodedText {
                    tokens: out.tokens,
                    table_rows: None,
                })
            }
            (EncoderSlot::External { .. }, None) => Err(AenError::Config(
                "model uses external embeddings but no embedding source was given".into(),
            )),
        }
    }
}

/// Toy encoders, head parameters and architecture: a complete model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub statement_encoder: EncoderSlot,
    pub condition_encoder: EncoderSlot,
    pub head: HeadParams,
}

impl ModelBundle {
    /// Fresh parameters. The statement table is seeded with `seed`, the
    /// condition table with `seed + 1` and hidden head layers with `seed + 2`.
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let statement_encoder = EncoderSlot::build(arch.statement_encoder, arch.embedding_dim, arch.seed)?;
        let condition_encoder =
            EncoderSlot::build(arch.condition_encoder, arch.embedding_dim, arch.seed.wrapping_add(1))?;
        let head = HeadParams::init(&arch.head, arch.seed.wrapping_add(2));
        Ok(ModelBundle {
            arch,
            statement_encoder,
            condition_encoder,
            head,
        })
    }

    /// Parameter tensors in their persisted order: statement table,
    /// condition table (each only when toy), then head tensors.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.statement_encoder.is_trainable() {
            out.push("statement_encoder.table".to_string());
        }
        if self.condition_encoder.is_trainable() {
            out.push("condition_encoder.table".to_string());
        }
        out.extend(self.head.trainable_names());
        out
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for slot in [&self.statement_encoder, &self.condition_encoder] {
            if let EncoderSlot::Toy(t) = slot {
                out.push(t.table().as_slice().expect("tables are contiguous"));
            }
        }
        out.extend(self.head.trainable());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for slot in [&mut self.statement_encoder, &mut self.condition_encoder] {
            if let EncoderSlot::Toy(t) = slot {
                out.push(t.table_mut().as_slice_mut().expect("tables are contiguous"));
            }
        }
        out.extend(self.head.trainable_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .head
                .hidden
                .iter()
                .all(|(_, bn)| bn.running_mean.iter().chain(bn.running_var.iter()).all(|v| v.is_finite()))
    }
}

/// Gradients with the shapes of a bundle's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub statement_table: Option<Array2<f64>>,
    pub condition_table: Option<Array2<f64>>,
    pub head: HeadParams,
}

impl Gradients {
    pub fn zeros_for(bundle: &ModelBundle) -> Self {
        let table = |slot: &EncoderSlot| slot.toy().map(|t| Array2::zeros(t.table().raw_dim()));
        Gradients {
            statement_table: table(&bundle.statement_encoder),
            condition_table: table(&bundle.condition_encoder),
            head: bundle.head.zeros_like(),
        }
    }

    /// Flat views in the same order as [`ModelBundle::parameters`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for t in [&self.statement_table, &self.condition_table].into_iter().flatten() {
            out.push(t.as_slice().expect("gradients are contiguous"));
        }
        out.extend(self.head.trainable());
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConcatMode, HeadKind};

    #[test]
    fn seeds_are_offset_per_component() {
        let b = ModelBundle::new(Architecture::new(4, 10)).unwrap();
        let s = b.statement_encoder.toy().unwrap();
        let c = b.condition_encoder.toy().unwrap();
        assert_eq!(s.table(), ToyEncoder::new(10, DEFAULT_VOCAB_SIZE, 4).unwrap().table());
        assert_eq!(c.table(), ToyEncoder::new(11, DEFAULT_VOCAB_SIZE, 4).unwrap().table());
    }

    #[test]
    fn validation() {
        let mut a = Architecture::new(4, 0);
        a.head.input_width = 5;
        assert!(ModelBundle::new(a).is_err());
        let a = Architecture::new(4, 0).with_features(FeatureMode::Concat(ConcatMode::UvProd));
        assert_eq!(a.head.input_width, 12);
        assert!(a.validate().is_ok());
        let mut a = Architecture::new(4, 0);
        a.class_weight = -1.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn parameter_layout() {
        let mut a = Architecture::new(3, 0);
        a.head.kind = HeadKind::Mlp(vec![2]);
        a.condition_encoder = EncoderSpec::External;
        let b = ModelBundle::new(a).unwrap();
        assert_eq!(
            b.parameter_names(),
            [
                "statement_encoder.table",
                "head.hidden0.weight",
                "head.hidden0.bias",
                "head.hidden0.gamma",
                "head.hidden0.beta",
                "head.output.weight",
                "head.output.bias"
            ]
        );
        assert_eq!(b.parameter_count(), 4096 * 3 + 6 + 2 + 2 + 2 + 4 + 2);
        let g = Gradients::zeros_for(&b);
        let shapes: Vec<usize> = g.tensors().iter().map(|t| t.len()).collect();
        let expect: Vec<usize> = b.parameters().iter().map(|t| t.len()).collect();
        assert_eq!(shapes, expect);
    }

    #[test]
    fn external_slot_needs_a_source() {
        let slot = EncoderSlot::External { dim: 3 };
        assert!(slot.encode("hello", None).is_err());
        let toy = ToyEncoder::new(0, 16, 4).unwrap();
        assert!(matches!(slot.encode("hello", Some(&toy)), Err(AenError::DimensionMismatch { .. })));
    }
}
