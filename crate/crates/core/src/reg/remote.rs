//! Client for an external span-scoring language model.
//!
//! `POST <endpoint>/score` with `{"context": [..], "span": [start, end],
//! "candidates": [[..], ..]}`; the reply is `{"scores": [..]}` with one
//! finite score per candidate. Multi-token candidates are scored as a span,
//! not as a single masked position.

use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LanguageModel, RegError};

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    context: &'a [String],
    span: [usize; 2],
    candidates: &'a [Vec<String>],
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

pub struct RemoteLm {
    url: String,
    agent: ureq::Agent,
}

impl RemoteLm {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/score") {
            base.to_string()
        } else {
            format!("{base}/score")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteLm { url, agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl LanguageModel for RemoteLm {
    fn score_candidates(
        &self,
        context: &[String],
        span: Range<usize>,
        candidates: &[Vec<String>],
    ) -> Result<Vec<f64>, RegError> {
        let req = ScoreRequest {
            context,
            span: [span.start, span.end],
            candidates,
        };
        log::debug!("POST {} {}", self.url, serde_json::to_string(&req).unwrap_or_default());
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .map_err(|e| RegError::Model(e.to_string()))?;
        let body: ScoreResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RegError::Model(format!("malformed response: {e}")))?;
        log::debug!("scores {:?}", body.scores);
        if body.scores.len() != candidates.len() {
            return Err(RegError::Model(format!(
                "expected {} scores, got {}",
                candidates.len(),
                body.scores.len()
            )));
        }
        if body.scores.iter().any(|s| !s.is_finite()) {
            return Err(RegError::Model("non-finite score".into()));
        }
        Ok(body.scores)
    }
}
