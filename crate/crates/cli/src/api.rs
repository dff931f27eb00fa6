//! Request and response bodies shared by the HTTP service and the CLI, and
//! the transport-independent handlers behind them.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clipdesk_core::datagen::{CorpusEntry, Raster};
use clipdesk_core::eval::round_sig;
use clipdesk_core::zeroshot::{build_class_embeddings, classify, PromptTemplate};
use clipdesk_core::{ClipModel, Error, RetrievalIndex};
use serde::{Deserialize, Serialize};

pub const MAX_K: i64 = 100;
/// Significant digits kept for scores on the wire.
pub const WIRE_SIG_DIGITS: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn bad_request(code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status: 400,
            code,
            detail: detail.into(),
        }
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self {
            status: 404,
            code: "not_found",
            detail: detail.into(),
        }
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self {
            status: 500,
            code: "internal",
            detail: detail.into(),
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code.to_string(),
            detail: self.detail.clone(),
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

impl std::error::Error for ApiError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub items: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub k: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<Hit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub id: u64,
    pub classes: Vec<String>,
    #[serde(default)]
    pub templates: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProb {
    pub class: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub probs: Vec<ClassProb>,
    pub argmax: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub rgb_base64: String,
    pub caption: String,
    pub split: String,
}

/// Scores travel with [`WIRE_SIG_DIGITS`] significant digits.
pub fn wire_score(v: f64) -> f64 {
    round_sig(v, WIRE_SIG_DIGITS)
}

fn core_error(e: Error) -> ApiError {
    match e {
        Error::EmptyPrompt(p) => ApiError::bad_request("empty_prompt", format!("{p:?} has no tokens")),
        Error::InvalidConfig(d) => ApiError::bad_request("bad_request", d),
        Error::EmptyInput(what) => ApiError::bad_request("bad_request", format!("empty {what}")),
        other => ApiError::internal(other.to_string()),
    }
}

pub fn search(model: &ClipModel, index: &RetrievalIndex, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
    if !(1..=MAX_K).contains(&req.k) {
        return Err(ApiError::bad_request(
            "invalid_k",
            format!("k must be in 1..={MAX_K}, got {}", req.k),
        ));
    }
    if model.tokenize(&req.query).is_empty() {
        return Err(ApiError::bad_request("empty_query", "query has no tokens"));
    }
    let q = model.encode_text(&req.query).map_err(core_error)?;
    let hits = index.search(&q, req.k as usize).map_err(core_error)?;
    Ok(SearchResponse {
        hits: hits
            .into_iter()
            .map(|h| Hit {
                id: h.id,
                score: wire_score(h.score),
                caption: h.caption,
            })
            .collect(),
    })
}

/// Probabilities keep full precision so that they still sum to one on the wire.
pub fn classify_item(
    model: &ClipModel,
    index: &RetrievalIndex,
    req: &ClassifyRequest,
) -> Result<ClassifyResponse, ApiError> {
    let record = index
        .get(req.id)
        .ok_or_else(|| ApiError::not_found(format!("no indexed item {}", req.id)))?;
    if req.classes.is_empty() {
        return Err(ApiError::bad_request("empty_classes", "class list is empty"));
    }
    let templates = match &req.templates {
        None => PromptTemplate::defaults(),
        Some(ts) if ts.is_empty() => return Err(ApiError::bad_request("invalid_template", "template list is empty")),
        Some(ts) => ts
            .iter()
            .map(|t| PromptTemplate::new(t.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError::bad_request("invalid_template", e.to_string()))?,
    };
    let class_embs = build_class_embeddings(model, &req.classes, &templates).map_err(core_error)?;
    let c = classify(&record.vector, &class_embs, model.params.log_scale).map_err(core_error)?;
    Ok(ClassifyResponse {
        argmax: req.classes[c.argmax].clone(),
        probs: req
            .classes
            .iter()
            .zip(c.probs)
            .map(|(class, p)| ClassProb {
                class: class.clone(),
                p,
            })
            .collect(),
    })
}

pub fn item_payload(entry: &CorpusEntry, raster: &Raster) -> ItemResponse {
    ItemResponse {
        id: entry.id,
        width: raster.width,
        height: raster.height,
        rgb_base64: STANDARD.encode(&raster.rgb),
        caption: entry.caption.clone(),
        split: entry.split.as_str().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_scores_keep_nine_digits() {
        assert_eq!(wire_score(0.123_456_789_123), 0.123_456_789);
        assert_eq!(wire_score(-0.999_999_999_9), -1.0);
    }

    #[test]
    fn error_body_shape() {
        let e = ApiError::not_found("no item 3");
        let v = serde_json::to_value(e.body()).unwrap();
        assert_eq!(v, serde_json::json!({"error": "not_found", "detail": "no item 3"}));
    }
}
