//! Client for an external embedding service.
//!
//! `POST <endpoint>/embed` with `{"texts": [...]}`; the service answers
//! `{"dim": N, "embeddings": [[[f, ...], ...], ...], "masks": [[0|1, ...], ...]}`
//! with one token matrix and mask per input text, in input order.

use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncodedText, TextEncoder, TokenEmbeddings};
use crate::error::{AenError, Result};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<Vec<f64>>>,
    masks: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: String,
    timeout: Duration,
    /// Extra attempts after the first one for transient failures.
    pub retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff: Duration,
    dim: usize,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteEncoder {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout,
            retries: 2,
            backoff: Duration::from_millis(100),
            dim: 0,
        }
    }

    /// Expected embedding width; responses of any other width are rejected.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn fetch(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddings>> {
        if texts.is_empty() {
            return Err(AenError::domain("nothing to embed: empty text list"));
        }
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let url = format!("{}/embed", self.endpoint);
        let mut delay = self.backoff;
        let mut attempt = 0;
        let body = loop {
            let result = agent.post(&url).send_json(EmbedRequest { texts });
            let transient = match result {
                Ok(resp) => {
                    break resp
                        .into_string()
                        .map_err(|e| AenError::MalformedResponse(format!("unreadable body: {e}")))?
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let err = AenError::HttpStatus { status, body };
                    if status >= 500 || status == 429 {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(ureq::Error::Transport(t)) => AenError::Transport(t.to_string()),
            };
            if attempt >= self.retries {
                return Err(transient);
            }
            attempt += 1;
            std::thread::sleep(delay);
            delay *= 2;
        };
        self.parse(&body, texts.len())
    }

    fn parse(&self, body: &str, expected: usize) -> Result<Vec<TokenEmbeddings>> {
        let resp: EmbedResponse =
            serde_json::from_str(body).map_err(|e| AenError::MalformedResponse(e.to_string()))?;
        if resp.embeddings.len() != expected || resp.masks.len() != expected {
            return Err(AenError::MalformedResponse(format!(
                "expected {expected} embeddings and masks, got {} and {}",
                resp.embeddings.len(),
                resp.masks.len()
            )));
        }
        if self.dim != 0 && resp.dim != self.dim {
            return Err(AenError::DimensionMismatch {
                expected: self.dim,
                found: resp.dim,
            });
        }
        resp.embeddings
            .into_iter()
            .zip(resp.masks)
            .enumerate()
            .map(|(k, (rows, mask))| {
                if rows.is_empty() {
                    return Err(AenError::MalformedResponse(format!("text {k} has no tokens")));
                }
                if mask.len() != rows.len() {
                    return Err(AenError::MalformedResponse(format!(
                        "text {k}: {} rows but {} mask entries",
                        rows.len(),
                        mask.len()
                    )));
                }
                if let Some(bad) = rows.iter().find(|r| r.len() != resp.dim) {
                    return Err(AenError::DimensionMismatch {
                        expected: resp.dim,
                        found: bad.len(),
                    });
                }
                let mask = mask
                    .into_iter()
                    .map(|b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(AenError::MalformedResponse(format!("mask value {other}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = rows.len();
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                let matrix = Array2::from_shape_vec((m, resp.dim), flat)
                    .map_err(|e| AenError::MalformedResponse(e.to_string()))?;
                TokenEmbeddings::new(matrix, mask)
            })
            .collect()
    }
}

/// One-shot fetch with default retry policy.
pub fn fetch_remote_embeddings(endpoint: &str, texts: &[&str], timeout: Duration) -> Result<Vec<TokenEmbeddings>> {
    RemoteEncoder::new(endpoint, timeout).fetch(texts)
}

impl TextEncoder for RemoteEncoder {
    fn encode(&self, text: &str) -> Result<EncodedText> {
        let tokens = self.fetch(&[text])?.pop().expect("one response per text");
        Ok(EncodedText { tokens, table_rows: None })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
