//! Labeled statement/condition pairs and how they are loaded, cleaned,
//! generated and batched.

mod jsonl;
mod service;
mod toy;

use serde::{Deserialize, Serialize};

use crate::embeddings::tokenize;
use crate::error::{AenError, Result};

pub use jsonl::{load_dataset_jsonl, load_dataset_jsonl_with, write_dataset_jsonl, LoadOptions, LoadReport};
pub use service::{GenerationClient, PromptTemplates, Sampling, ServiceGenerator};
pub use toy::{generate_toy_dataset, topic_condition, ToyDataSpec, FILLER_WORDS, TOPICS};

/// The phrase every generated condition starts with; stripped before encoding.
pub const CONDITION_PREFIX: &str = "When someone ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub statement: String,
    pub condition: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl LabeledPair {
    pub fn new(statement: impl Into<String>, condition: impl Into<String>, label: u8) -> Self {
        LabeledPair {
            statement: statement.into(),
            condition: condition.into(),
            label,
            source: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.statement.trim().is_empty() {
            return Err(AenError::domain("statement is empty"));
        }
        if self.condition.trim().is_empty() {
            return Err(AenError::domain("condition is empty"));
        }
        if self.label > 1 {
            return Err(AenError::domain(format!("label must be 0 or 1, got {}", self.label)));
        }
        Ok(())
    }
}

/// Source of labeled pairs: the toy generator or a generation service.
pub trait PairSource {
    fn pairs(&self) -> Result<Vec<LabeledPair>>;
}

/// Strips a leading "When someone " (any case) and leading whitespace.
pub fn preprocess_condition(text: &str) -> Result<String> {
    let n = CONDITION_PREFIX.len();
    let mut rest = text.trim_start();
    // repeated prefixes are all removed so the operation is idempotent
    while let Some(head) = rest.get(..n) {
        if !head.eq_ignore_ascii_case(CONDITION_PREFIX) {
            break;
        }
        rest = rest[n..].trim_start();
    }
    if rest.trim().is_empty() {
        return Err(AenError::domain(format!("condition {text:?} is empty after preprocessing")));
    }
    Ok(rest.to_string())
}

/// Statement token count under the toy whitespace tokenizer.
pub fn statement_tokens(pair: &LabeledPair) -> usize {
    tokenize(&pair.statement).len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pairs: Vec<LabeledPair>,
    pub max_statement_tokens: usize,
}

impl Batch {
    /// Padding needed to bring every statement up to the batch maximum.
    pub fn padding(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| self.max_statement_tokens - statement_tokens(p))
            .sum()
    }
}

/// Indices into `pairs`, stably sorted by statement length and chunked.
pub fn batch_indices_by_length(pairs: &[LabeledPair], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if pairs.is_empty() {
        return Err(AenError::domain("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(AenError::domain("batch_size must be positive"));
    }
    let lengths: Vec<usize> = pairs.iter().map(statement_tokens).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Groups statements of similar token length to minimize padding.
pub fn batch_by_length(pairs: &[LabeledPair], batch_size: usize) -> Result<Vec<Batch>> {
    Ok(batch_indices_by_length(pairs, batch_size)?
        .into_iter()
        .map(|idx| {
            let pairs: Vec<LabeledPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
            let max_statement_tokens = pairs.iter().map(statement_tokens).max().unwrap_or(0);
            Batch { pairs, max_statement_tokens }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_with_tokens(n: usize, tag: usize) -> LabeledPair {
        let statement = (0..n).map(|k| format!("w{tag}_{k}")).collect::<Vec<_>>().join(" ");
        LabeledPair {
            source: Some(tag.to_string()),
            ..LabeledPair::new(statement, "mentions x", 0)
        }
    }

    #[test]
    fn prefix_stripping() {
        assert_eq!(
            preprocess_condition("When someone asks for planning help").unwrap(),
            "asks for planning help"
        );
        assert_eq!(preprocess_condition("asks for planning help").unwrap(), "asks for planning help");
        assert_eq!(preprocess_condition("when someone mentions a topic").unwrap(), "mentions a topic");
        assert_eq!(preprocess_condition("WHEN SOMEONE   shouts").unwrap(), "shouts");
        assert_eq!(preprocess_condition("  When someone waves").unwrap(), "waves");
        assert_eq!(preprocess_condition("When someone when someone waves").unwrap(), "waves");
        assert!(preprocess_condition("When someone ").is_err());
        assert!(preprocess_condition("   ").is_err());
        // multi-byte text shorter than the prefix must not panic
        assert_eq!(preprocess_condition("héllo").unwrap(), "héllo");
    }

    #[test]
    fn sort_then_chunk() {
        let pairs: Vec<_> = [5, 2, 9, 2].iter().enumerate().map(|(i, &n)| pair_with_tokens(n, i)).collect();
        let batches = batch_by_length(&pairs, 2).unwrap();
        let counts: Vec<Vec<usize>> = batches
            .iter()
            .map(|b| b.pairs.iter().map(statement_tokens).collect())
            .collect();
        assert_eq!(counts, vec![vec![2, 2], vec![5, 9]]);
        assert_eq!(batches[1].max_statement_tokens, 9);
        // stable: the first length-2 pair stays first
        assert_eq!(batches[0].pairs[0].source.as_deref(), Some("1"));

        let single = batch_by_length(&pairs, 10).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].pairs.len(), 4);
    }

    #[test]
    fn batching_errors() {
        assert!(batch_by_length(&[], 4).is_err());
        assert!(batch_by_length(&[pair_with_tokens(1, 0)], 0).is_err());
    }

    #[test]
    fn sorted_batching_never_pads_more_than_arrival_order() {
        let mut rng = crate::rng::SplitMix64::new(77);
        let pairs: Vec<_> = (0..1000).map(|i| pair_with_tokens(1 + rng.below(40), i)).collect();
        let sorted: usize = batch_by_length(&pairs, 32).unwrap().iter().map(Batch::padding).sum();
        let unsorted: usize = pairs
            .chunks(32)
            .map(|c| {
                let max = c.iter().map(statement_tokens).max().unwrap();
                c.iter().map(|p| max - statement_tokens(p)).sum::<usize>()
            })
            .sum();
        assert!(sorted <= unsorted, "{sorted} > {unsorted}");
    }

    proptest! {
        #[test]
        fn preprocessing_is_idempotent(s in "[a-zA-Z ]{1,40}") {
            let prefixed = format!("When someone {s}");
            for text in [s.clone(), prefixed] {
                if let Ok(once) = preprocess_condition(&text) {
                    prop_assert_eq!(preprocess_condition(&once).unwrap(), once.clone());
                }
            }
        }

        #[test]
        fn batches_partition_the_input(lens in proptest::collection::vec(1usize..30, 1..200), bs in 1usize..50) {
            let pairs: Vec<_> = lens.iter().enumerate().map(|(i, &n)| pair_with_tokens(n, i)).collect();
            let batches = batch_by_length(&pairs, bs).unwrap();
            prop_assert!(batches.iter().all(|b| !b.pairs.is_empty() && b.pairs.len() <= bs));
            let mut ids: Vec<usize> = batches
                .iter()
                .flat_map(|b| b.pairs.iter().map(|p| p.source.as_ref().unwrap().parse::<usize>().unwrap()))
                .collect();
            ids.sort();
            prop_assert_eq!(ids, (0..pairs.len()).collect::<Vec<_>>());
        }
    }
}
