//! Deployment path: conditions are encoded and pooled once ahead of time, and
//! each incoming statement is encoded once and scored against every cached
//! condition.

mod cache;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::embeddings::TextEncoder;
use crate::error::{AenError, Result};
use crate::kde::DimKde;
use crate::model::{concat_features, head_probabilities, kde_features_for_query, FeatureMode, ModelBundle};

pub use cache::{
    build_condition_cache, condition_id, read_cache, read_cache_from, read_cache_for, write_cache, write_cache_to, CachedCondition,
    ConditionCache, CACHE_MAGIC, DEFAULT_THRESHOLD,
};

/// One statement scored against one cached condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvent {
    pub seq: u64,
    pub statement: String,
    pub condition_id: String,
    #[serde(rename = "p")]
    pub probability: f64,
    #[serde(rename = "match")]
    pub decision: bool,
}

/// Scores statements against a cache, numbering events across calls.
///
/// The fingerprint check happens once, at construction. Counters record how
/// often the statement encoder and the KDE construction ran.
pub struct Monitor<'a> {
    bundle: &'a ModelBundle,
    cache: &'a ConditionCache,
    external: Option<&'a dyn TextEncoder>,
    next_seq: AtomicU64,
    encoder_calls: AtomicU64,
    kde_builds: AtomicU64,
}

impl<'a> Monitor<'a> {
    pub fn new(
        bundle: &'a ModelBundle,
        cache: &'a ConditionCache,
        external: Option<&'a dyn TextEncoder>,
    ) -> Result<Self> {
        cache.check_model(bundle)?;
        Ok(Monitor {
            bundle,
            cache,
            external,
            next_seq: AtomicU64::new(0),
            encoder_calls: AtomicU64::new(0),
            kde_builds: AtomicU64::new(0),
        })
    }

    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls.load(Ordering::Relaxed)
    }

    pub fn kde_builds(&self) -> u64 {
        self.kde_builds.load(Ordering::Relaxed)
    }

    /// Probabilities of the positive class for every cached condition, in
    /// cache order. The statement is encoded once.
    pub fn probabilities(&self, statement: &str) -> Result<Vec<f64>> {
        if statement.trim().is_empty() {
            return Err(AenError::domain("statement is empty"));
        }
        let encoded = self.bundle.statement_encoder.encode(statement, self.external)?;
        self.encoder_calls.fetch_add(1, Ordering::Relaxed);
        let arch = &self.bundle.arch;
        let mut out = Vec::with_capacity(self.cache.entries.len());
        match arch.features {
            FeatureMode::Kde => {
                let kde = DimKde::build(&encoded.tokens, arch.kernel, arch.bandwidth_rule)?;
                self.kde_builds.fetch_add(1, Ordering::Relaxed);
                for entry in &self.cache.entries {
                    let features = kde_features_for_query(&kde, &entry.pooled, &arch.head)?;
                    out.push(head_probabilities(&self.bundle.head, &features)?[1]);
                }
            }
            FeatureMode::Concat(mode) => {
                let u = crate::embeddings::mean_pool(&encoded.tokens)?;
                for entry in &self.cache.entries {
                    let features = concat_features(&u, &entry.pooled, mode)?;
                    out.push(head_probabilities(&self.bundle.head, &features)?[1]);
                }
            }
        }
        Ok(out)
    }

    /// One event per cached condition; sequence numbers keep increasing
    /// across calls.
    pub fn evaluate_statement(&self, statement: &str) -> Result<Vec<MatchEvent>> {
        let probs = self.probabilities(statement)?;
        Ok(self
            .cache
            .entries
            .iter()
            .zip(probs)
            .map(|(entry, p)| MatchEvent {
                seq: self.next_seq.fetch_add(1, Ordering::Relaxed),
                statement: statement.to_string(),
                condition_id: entry.id.clone(),
                probability: p,
                decision: p >= self.cache.threshold,
            })
            .collect())
    }
}

/// Scores one statement against `cache` with sequence numbers starting at 0.
pub fn evaluate_statement(
    bundle: &ModelBundle,
    cache: &ConditionCache,
    statement: &str,
    external: Option<&dyn TextEncoder>,
) -> Result<Vec<MatchEvent>> {
    Monitor::new(bundle, cache, external)?.evaluate_statement(statement)
}

/// Parameter counts needed for training versus for cached inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Footprint {
    pub training_parameters: usize,
    pub runtime_parameters: usize,
    pub ratio: f64,
}

/// Compares the parameters a cached runtime still needs (statement encoder
/// and head) with the full training set. Frozen external encoders count as
/// zero since the bundle does not hold them.
pub fn runtime_footprint(bundle: &ModelBundle) -> Footprint {
    let table = |slot: &crate::model::EncoderSlot| slot.toy().map_or(0, |t| t.table().len());
    let head: usize = bundle.head.trainable().iter().map(|t| t.len()).sum();
    let statement = table(&bundle.statement_encoder);
    let condition = table(&bundle.condition_encoder);
    let training = statement + condition + head;
    let runtime = statement + head;
    Footprint {
        training_parameters: training,
        runtime_parameters: runtime,
        ratio: runtime as f64 / training as f64,
    }
}
