//! Forward-pass FLOP counts for a dual-encoder classifier.
//!
//! Convention: one multiply-accumulate is two FLOPs.
//!
//! * encoders: `n_encoders · 2 · encoder_params · seq_len`
//! * density evaluation: `embedding_dim · kde_tokens · kernel_flops(kernel)`
//! * head: `Σ (2 · in · out + out)` over consecutive widths (the `+ out` is the bias add)

use serde::{Deserialize, Serialize};

use crate::error::{AenError, Result};
use crate::kernels::KernelKind;

/// FLOPs for one kernel term `K((x - c)/h)` accumulated into a sum; per-dimension
/// constants such as `1/(n h)` are hoisted and not counted.
///
/// * gaussian: subtract, scale, square, scale by -1/2, exp, add = 6
/// * epanechnikov: subtract, scale, square, `1 - u²`, add = 5
/// * triangular: subtract, scale, abs, `1 - |u|`, add = 5
pub fn kernel_flops(kernel: KernelKind) -> u64 {
    match kernel {
        KernelKind::Gaussian => 6,
        KernelKind::Epanechnikov => 5,
        KernelKind::Triangular => 5,
    }
}

/// Published per-pass FLOPs at batch size 1 and 128 tokens, for ratios only.
pub const REFERENCE_FLOPS: &[(&str, f64)] = &[
    ("aen", 22.4e9),
    ("llama-3.2-3b", 360.9e9),
    ("phi-3.5-mini", 464.0e9),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsConfig {
    /// Parameters per encoder.
    pub encoder_params: u64,
    pub seq_len: u64,
    pub n_encoders: u64,
    pub embedding_dim: u64,
    /// Kernel centers per dimension (statement tokens).
    pub kde_tokens: u64,
    /// Layer widths from head input to the two logits, e.g. `[384, 2]`.
    pub head_widths: Vec<u64>,
    #[serde(default)]
    pub kernel: KernelKind,
}

impl FlopsConfig {
    /// Two ~109.5M-parameter base-size sentence encoders (768-d output) at
    /// 128 tokens with a linear head over the density features.
    pub fn base_dual_encoder() -> Self {
        FlopsConfig {
            encoder_params: 109_500_000,
            seq_len: 128,
            n_encoders: 2,
            embedding_dim: 768,
            kde_tokens: 128,
            head_widths: vec![768, 2],
            kernel: KernelKind::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("encoder_params", self.encoder_params),
            ("seq_len", self.seq_len),
            ("n_encoders", self.n_encoders),
            ("embedding_dim", self.embedding_dim),
            ("kde_tokens", self.kde_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(AenError::domain(format!("{name} must be positive")));
        }
        if self.head_widths.len() < 2 || self.head_widths.contains(&0) {
            return Err(AenError::domain("head_widths needs at least two positive widths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub encoder: u128,
    pub kde: u128,
    pub head: u128,
    pub total: u128,
}

pub fn estimate_flops(config: &FlopsConfig) -> Result<FlopsReport> {
    config.validate()?;
    let c = |v: u64| v as u128;
    let encoder = c(config.n_encoders) * 2 * c(config.encoder_params) * c(config.seq_len);
    let kde = c(config.embedding_dim) * c(config.kde_tokens) * c(kernel_flops(config.kernel));
    let head = config
        .head_widths
        .windows(2)
        .map(|w| 2 * c(w[0]) * c(w[1]) + c(w[1]))
        .sum();
    Ok(FlopsReport {
        encoder,
        kde,
        head,
        total: encoder + kde + head,
    })
}
