//! HTTP clients for the three backends.
//!
//! OCR: `POST {base}/v1/ocr` with `{image, stage, boxes, model}` (image as
//! base64) returning `{records: [{polygon, label, confidence}]}`.
//! Translation: `POST {base}/v1/translate` with `{text, source_language,
//! target_language}` returning `{text}`.
//! VLM: an OpenAI-style `POST {base}/v1/chat/completions` with logprobs.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendErrorKind};
use crate::ocr::{OcrClient, OcrRecord, OcrRequest, OcrStage, Polygon};
use crate::translation::{TranslationClient, TranslationReply, TranslationRequest};
use crate::vlm::{ChatRequest, GeneratedToken, ModelResponse, TokenAlternative, VlmClient};

#[derive(Debug, Clone)]
struct Endpoint {
    name: &'static str,
    base: String,
    client: reqwest::Client,
    api_key: Option<String>,
}

impl Endpoint {
    fn new(name: &'static str, base: &str, timeout: Duration, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::from_reqwest(name, e))?;
        Ok(Self {
            name,
            base: base.trim_end_matches('/').to_string(),
            client,
            api_key,
        })
    }

    async fn post<B: Serialize + ?Sized, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| BackendError::from_reqwest(self.name, e))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(BackendError::new(
                self.name,
                BackendErrorKind::Status(status.as_u16()),
                text.chars().take(200).collect::<String>(),
            ));
        }
        let bytes = resp.bytes().await.map_err(|e| BackendError::from_reqwest(self.name, e))?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::malformed(self.name, e.to_string()))
    }

    /// Any HTTP answer counts as reachable.
    async fn ping(&self) -> Result<(), BackendError> {
        self.client
            .get(&self.base)
            .send()
            .await
            .map(drop)
            .map_err(|e| BackendError::from_reqwest(self.name, e))
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OcrWireRequest<'a> {
    image: String,
    stage: OcrStage,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    boxes: &'a [Polygon],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct OcrWireReply {
    records: Vec<OcrRecord>,
}

#[derive(Debug, Clone)]
pub struct HttpOcrClient(Endpoint);

impl HttpOcrClient {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, BackendError> {
        Endpoint::new("ocr", base, timeout, None).map(Self)
    }
}

#[async_trait]
impl OcrClient for HttpOcrClient {
    async fn call(&self, request: OcrRequest<'_>) -> Result<Vec<OcrRecord>, BackendError> {
        let body = OcrWireRequest {
            image: base64::engine::general_purpose::STANDARD.encode(request.image.bytes()),
            stage: request.stage,
            boxes: request.boxes,
            model: request.model,
        };
        let reply: OcrWireReply = self.0.post("/v1/ocr", &body).await?;
        Ok(reply.records)
    }

    async fn ping(&self) -> Result<(), BackendError> {
        self.0.ping().await
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpTranslationClient(Endpoint);

impl HttpTranslationClient {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, BackendError> {
        Endpoint::new("translation", base, timeout, None).map(Self)
    }
}

#[async_trait]
impl TranslationClient for HttpTranslationClient {
    async fn translate(&self, request: &TranslationRequest) -> Result<TranslationReply, BackendError> {
        self.0.post("/v1/translate", request).await
    }

    async fn ping(&self) -> Result<(), BackendError> {
        self.0.ping().await
    }
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Converts an OpenAI-style completion body. Weights are `exp(logprob)`.
pub fn parse_completion(backend: &str, body: &[u8]) -> Result<ModelResponse, BackendError> {
    let completion: Completion =
        serde_json::from_slice(body).map_err(|e| BackendError::malformed(backend, e.to_string()))?;
    let choice = completion
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::malformed(backend, "reply has no choices"))?;
    let text = choice.message.content.unwrap_or_default();
    let Some(content) = choice.logprobs.and_then(|l| l.content) else {
        return Err(BackendError::new(
            backend,
            BackendErrorKind::Unsupported,
            "reply carries no log-probabilities",
        ));
    };
    let tokens = content
        .into_iter()
        .map(|t| GeneratedToken {
            chosen_weight: t.logprob.exp(),
            alternatives: t
                .top_logprobs
                .into_iter()
                .map(|a| TokenAlternative {
                    token_text: a.token,
                    weight: a.logprob.exp(),
                })
                .collect(),
            token_text: t.token,
        })
        .collect();
    Ok(ModelResponse { text, tokens })
}

#[derive(Debug, Clone)]
pub struct HttpVlmClient {
    endpoint: Endpoint,
    model: Option<String>,
}

impl HttpVlmClient {
    pub fn new(base: &str, model: Option<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        Ok(Self {
            endpoint: Endpoint::new("vlm", base, timeout, api_key)?,
            model,
        })
    }
}

#[async_trait]
impl VlmClient for HttpVlmClient {
    async fn complete(&self, request: &ChatRequest) -> Result<ModelResponse, BackendError> {
        let mut request = request.clone();
        if request.model.is_none() {
            request.model = self.model.clone();
        }
        let value: serde_json::Value = self.endpoint.post("/v1/chat/completions", &request).await?;
        let body = serde_json::to_vec(&value).map_err(|e| BackendError::malformed("vlm", e.to_string()))?;
        parse_completion("vlm", &body)
    }

    async fn ping(&self) -> Result<(), BackendError> {
        self.endpoint.ping().await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_weights_are_exponentiated() {
        let body = serde_json::json!({
            "choices": [{
                "message": {"content": "harmful: No"},
                "logprobs": {"content": [
                    {"token": "harmful", "logprob": 0.0, "top_logprobs": [{"token": "harmful", "logprob": 0.0}]},
                    {"token": ":", "logprob": 0.0, "top_logprobs": []},
                    {"token": " No", "logprob": -0.5, "top_logprobs": [
                        {"token": " No", "logprob": -0.5}, {"token": " Yes", "logprob": -1.0}
                    ]}
                ]}
            }]
        });
        let r = parse_completion("vlm", body.to_string().as_bytes()).unwrap();
        assert!(r.is_consistent());
        assert_eq!(r.tokens.len(), 3);
        assert!((r.tokens[2].alternatives[1].weight - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn missing_logprobs_is_unsupported() {
        let body = br#"{"choices":[{"message":{"content":"harmful: No"}}]}"#;
        let err = parse_completion("vlm", body).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::Unsupported);
        assert_eq!(parse_completion("vlm", b"{}").unwrap_err().kind, BackendErrorKind::Malformed);
    }
}
