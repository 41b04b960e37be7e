//! The classifier: density features (or concatenated pooled vectors) feeding
//! a small dense head with two-logit softmax output, trained end to end with a
//! class-weighted cross-entropy.

mod bundle;
mod features;
mod forward;
mod gradcheck;
mod head;
mod io;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AenError, Result};

pub use bundle::{Architecture, EncoderSlot, EncoderSpec, Gradients, ModelBundle};
pub use features::{concat_features, density_features, softmax, weighted_ce_loss, LOG_FLOOR, PROB_FLOOR};
pub use forward::{aen_forward, head_probabilities, kde_features_for_query, ForwardTrace};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use head::{mlp_forward, BatchNorm, Dense, HeadParams, BN_EPS, BN_MOMENTUM};
pub use io::{read_model, read_model_from, write_model, write_model_to, MODEL_MAGIC};
pub use train::{batch_loss_and_gradients, evaluate, predict, EpochReport, Optimizer, TrainConfig, Trainer};

/// Which input is expanded into per-dimension densities; the other is mean-pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeSide {
    #[default]
    Statement,
    Condition,
}

impl FromStr for KdeSide {
    type Err = AenError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "statement" => Ok(KdeSide::Statement),
            "condition" => Ok(KdeSide::Condition),
            other => Err(AenError::Config(format!("kde side must be statement or condition, got {other:?}"))),
        }
    }
}

impl fmt::Display for KdeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KdeSide::Statement => "statement",
            KdeSide::Condition => "condition",
        })
    }
}

/// Feature combinations for the pooled-vector baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// `(u, v)`
    Uv,
    /// `(u, v, |u - v|)`
    UvAbsDiff,
    /// `(u, v, u ∘ v)`
    UvProd,
    /// `(u, v, u ∘ v, |u - v|)`
    UvProdAbsDiff,
}

impl ConcatMode {
    /// Output width as a multiple of the embedding dimension.
    pub fn blocks(self) -> usize {
        match self {
            ConcatMode::Uv => 2,
            ConcatMode::UvAbsDiff | ConcatMode::UvProd => 3,
            ConcatMode::UvProdAbsDiff => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConcatMode::Uv => "uv",
            ConcatMode::UvAbsDiff => "uv_absdiff",
            ConcatMode::UvProd => "uv_prod",
            ConcatMode::UvProdAbsDiff => "uv_prod_absdiff",
        }
    }
}

impl FromStr for ConcatMode {
    type Err = AenError;
    fn from_str(s: &str) -> Result<Self> {
        [ConcatMode::Uv, ConcatMode::UvAbsDiff, ConcatMode::UvProd, ConcatMode::UvProdAbsDiff]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AenError::Config(format!("unknown concat mode {s:?}")))
    }
}

/// What the head sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureMode {
    /// Per-dimension densities of the pooled side under the other side's KDE.
    #[default]
    Kde,
    /// Pooled statement and condition vectors combined per [`ConcatMode`].
    Concat(ConcatMode),
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Kde => f.write_str("kde"),
            FeatureMode::Concat(m) => write!(f, "concat:{}", m.name()),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = AenError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "kde" {
            return Ok(FeatureMode::Kde);
        }
        match s.strip_prefix("concat:") {
            Some(m) => Ok(FeatureMode::Concat(m.parse()?)),
            None => Err(AenError::Config(format!("features must be kde or concat:<mode>, got {s:?}"))),
        }
    }
}

impl TryFrom<String> for FeatureMode {
    type Error = AenError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureMode> for String {
    fn from(m: FeatureMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum HeadKind {
    /// A single dense layer straight to the logits.
    #[default]
    Linear,
    /// Dense → batch-norm → ReLU per hidden width, then dense to the logits.
    Mlp(Vec<usize>),
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Linear => f.write_str("linear"),
            HeadKind::Mlp(h) => {
                let widths: Vec<String> = h.iter().map(usize::to_string).collect();
                write!(f, "mlp:{}", widths.join(","))
            }
        }
    }
}

impl FromStr for HeadKind {
    type Err = AenError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(HeadKind::Linear);
        }
        let widths = s
            .strip_prefix("mlp:")
            .ok_or_else(|| AenError::Config(format!("head must be linear or mlp:<w1,w2,...>, got {s:?}")))?;
        let hidden = widths
            .split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(AenError::Config(format!("bad hidden width {w:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadKind::Mlp(hidden))
    }
}

impl TryFrom<String> for HeadKind {
    type Error = AenError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HeadKind> for String {
    fn from(k: HeadKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub input_width: usize,
    #[serde(default)]
    pub use_log_density: bool,
    #[serde(default = "default_clamp")]
    pub density_clamp: f64,
}

fn default_clamp() -> f64 {
    1e6
}

impl HeadConfig {
    pub fn new(kind: HeadKind, input_width: usize) -> Self {
        HeadConfig {
            kind,
            input_width,
            use_log_density: false,
            density_clamp: default_clamp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(AenError::Config("head input_width must be positive".into()));
        }
        if let HeadKind::Mlp(h) = &self.kind {
            if h.is_empty() || h.contains(&0) {
                return Err(AenError::Config("mlp head needs non-empty positive hidden widths".into()));
            }
        }
        if !(self.density_clamp > 0.0 && self.density_clamp.is_finite()) {
            return Err(AenError::Config("density_clamp must be positive and finite".into()));
        }
        Ok(())
    }

    /// Widths from input to the two logits.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width];
        if let HeadKind::Mlp(h) = &self.kind {
            w.extend(h);
        }
        w.push(2);
        w
    }
}
