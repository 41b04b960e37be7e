//! Thin client for a text-generation service that produces labeled pairs.
//!
//! Requests are `POST <endpoint>/generate` with
//! `{"prompt": str, "temperature": f, "top_p": f}` and the answer is
//! `{"text": str}`. Prompt wording lives in [`PromptTemplates`], which is
//! loaded from configuration; `{topic}`, `{statement}` and `{condition}` are
//! substituted before sending.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{preprocess_condition, LabeledPair, PairSource};
use crate::error::{AenError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Sampling {
    /// Diverse statement drafting.
    pub const STATEMENTS: Sampling = Sampling { temperature: 1.6, top_p: 0.85 };
    pub const CONDITIONS: Sampling = Sampling { temperature: 1.0, top_p: 1.0 };
    /// Deterministic labeling.
    pub const LABELS: Sampling = Sampling { temperature: 0.0, top_p: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    /// Produces newline-separated statements about `{topic}`.
    pub statement: String,
    /// Produces newline-separated conditions related to `{topic}`.
    pub condition: String,
    /// Answers whether `{statement}` satisfies `{condition}`; the reply should
    /// start with `1`/`0` or `yes`/`no`.
    pub label: String,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug, Clone)]
pub struct GenerationClient {
    endpoint: String,
    timeout: Duration,
}

impl GenerationClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        GenerationClient {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout,
        }
    }

    pub fn generate(&self, prompt: &str, sampling: Sampling) -> Result<String> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent
            .post(&format!("{}/generate", self.endpoint))
            .send_json(GenerateRequest {
                prompt,
                temperature: sampling.temperature,
                top_p: sampling.top_p,
            })
            .map_err(|e| match e {
                ureq::Error::Status(status, resp) => AenError::HttpStatus {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                },
                ureq::Error::Transport(t) => AenError::Transport(t.to_string()),
            })?;
        let body = resp
            .into_string()
            .map_err(|e| AenError::MalformedResponse(e.to_string()))?;
        let parsed: GenerateResponse =
            serde_json::from_str(&body).map_err(|e| AenError::MalformedResponse(e.to_string()))?;
        Ok(parsed.text)
    }
}

/// Drafts statements and conditions per topic and labels every
/// (statement, condition) combination within a topic and with the next
/// topic in the list, so each topic sees off-topic conditions too.
#[derive(Debug, Clone)]
pub struct ServiceGenerator {
    pub client: GenerationClient,
    pub templates: PromptTemplates,
    pub topics: Vec<String>,
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    pairs
        .iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

fn lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().trim_start_matches(|c: char| c == '-' || c == '*').trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Reads a label reply: leading `1`/`yes`/`true` is positive, `0`/`no`/`false` negative.
pub(crate) fn parse_label(reply: &str) -> Result<u8> {
    let r = reply.trim().to_ascii_lowercase();
    if r.starts_with('1') || r.starts_with("yes") || r.starts_with("true") {
        Ok(1)
    } else if r.starts_with('0') || r.starts_with("no") || r.starts_with("false") {
        Ok(0)
    } else {
        Err(AenError::MalformedResponse(format!("unrecognized label reply {reply:?}")))
    }
}

impl PairSource for ServiceGenerator {
    fn pairs(&self) -> Result<Vec<LabeledPair>> {
        if self.topics.is_empty() {
            return Err(AenError::domain("service generator needs at least one topic"));
        }
        let mut drafted = Vec::with_capacity(self.topics.len());
        for topic in &self.topics {
            let statements = lines(
                &self
                    .client
                    .generate(&fill(&self.templates.statement, &[("topic", topic)]), Sampling::STATEMENTS)?,
            );
            let conditions = lines(
                &self
                    .client
                    .generate(&fill(&self.templates.condition, &[("topic", topic)]), Sampling::CONDITIONS)?,
            );
            drafted.push((statements, conditions));
        }
        let mut out = Vec::new();
        for (t, (statements, _)) in drafted.iter().enumerate() {
            let neighbours = [t, (t + 1) % drafted.len()];
            for statement in statements {
                for &u in neighbours.iter().take(if drafted.len() > 1 { 2 } else { 1 }) {
                    for condition in &drafted[u].1 {
                        let prompt = fill(&self.templates.label, &[("statement", statement), ("condition", condition)]);
                        let label = parse_label(&self.client.generate(&prompt, Sampling::LABELS)?)?;
                        out.push(LabeledPair {
                            statement: statement.clone(),
                            condition: preprocess_condition(condition)?,
                            label,
                            source: Some(format!("service:{}", self.topics[t])),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_replies() {
        assert_eq!(parse_label("1").unwrap(), 1);
        assert_eq!(parse_label(" Yes, it does").unwrap(), 1);
        assert_eq!(parse_label("0\n").unwrap(), 0);
        assert_eq!(parse_label("No.").unwrap(), 0);
        assert!(parse_label("maybe").is_err());
    }

    #[test]
    fn template_filling_and_line_splitting() {
        assert_eq!(fill("about {topic}: {topic}", &[("topic", "tea")]), "about tea: tea");
        assert_eq!(lines("- one\n\n * two \nthree"), vec!["one", "two", "three"]);
    }
}
