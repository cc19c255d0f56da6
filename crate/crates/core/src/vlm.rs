//! Classification prompt, decoding parameters, the VLM client contract and
//! the greedy-first, sample-on-retry inference loop.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendErrorKind};
use crate::media::Image;
use crate::translation::LanguageCode;
use crate::verdict::{assemble_verdict, parse_yaml_verdict, score_response, Verdict};

pub const IMAGE_MARKER: &str = "<image>";

/// Moderator instruction; `{ocr_prompt}` is replaced (or removed with its
/// leading space) depending on whether OCR found text.
pub const CLASSIFICATION_TEMPLATE: &str = "<image>\n  You are a professional content moderator. Analyze this meme in the context of Singapore society. {ocr_prompt}\n\nOutput a YAML in English using tab for indentation that contains description, the victim groups and methods of attack if any. Think through the information you just provided and label the meme as harmful using \"Yes\" or \"No\". Do not include any other explanation outside the YAML.";

const OCR_PLACEHOLDER: &str = "{ocr_prompt}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationPrompt {
    pub text: String,
    pub image: Option<Image>,
}

impl ClassificationPrompt {
    pub fn with_image(mut self, image: Image) -> Self {
        self.image = Some(image);
        self
    }

    /// Prompt text without the leading image marker, for transports that
    /// carry the image as a separate message part.
    pub fn text_after_image(&self) -> &str {
        self.text
            .strip_prefix(IMAGE_MARKER)
            .map(|rest| rest.strip_prefix('\n').unwrap_or(rest))
            .unwrap_or(&self.text)
    }
}

pub fn ocr_segment(language: &LanguageCode, text: &str) -> String {
    if language.is_english() {
        format!("The text in this meme is:\n{text}")
    } else {
        format!("The text in this meme translated from {language} is:\n{text}")
    }
}

/// Fills the classification template. `ocr` is the language the text was
/// originally in and the (translated) text; `None` or empty text omits the
/// OCR segment.
pub fn build_prompt(ocr: Option<(&LanguageCode, &str)>) -> ClassificationPrompt {
    let text = match ocr {
        Some((language, text)) if !text.is_empty() => {
            CLASSIFICATION_TEMPLATE.replace(OCR_PLACEHOLDER, &ocr_segment(language, text))
        }
        _ => CLASSIFICATION_TEMPLATE.replace(&format!(" {OCR_PLACEHOLDER}"), ""),
    };
    ClassificationPrompt { text, image: None }
}

// ---------------------------------------------------------------------------
// decoding

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampling,
}

/// Deployment-level decoding knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSettings {
    pub max_new_tokens: u32,
    /// Top-k alternatives captured per generated position.
    pub logprob_depth: u32,
    pub sampling_min_p: f64,
    pub sampling_temperature: f64,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
            logprob_depth: 20,
            sampling_min_p: 0.1,
            sampling_temperature: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub mode: DecodeMode,
    pub min_p: f64,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub logprob_depth: u32,
}

impl DecodeParams {
    pub fn greedy(settings: &DecodeSettings) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            min_p: 0.0,
            temperature: 0.0,
            max_new_tokens: settings.max_new_tokens,
            logprob_depth: settings.logprob_depth,
        }
    }

    pub fn sampling(settings: &DecodeSettings) -> Self {
        Self {
            mode: DecodeMode::Sampling,
            min_p: settings.sampling_min_p,
            temperature: settings.sampling_temperature,
            max_new_tokens: settings.max_new_tokens,
            logprob_depth: settings.logprob_depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3 }
    }
}

// ---------------------------------------------------------------------------
// responses

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub token_text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedToken {
    pub token_text: String,
    /// Probability of the emitted token.
    pub chosen_weight: f64,
    pub alternatives: Vec<TokenAlternative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub tokens: Vec<GeneratedToken>,
}

impl ModelResponse {
    pub fn from_tokens(tokens: Vec<GeneratedToken>) -> Self {
        Self {
            text: tokens.iter().map(|t| t.token_text.as_str()).collect(),
            tokens,
        }
    }

    /// Token texts concatenate to the reply text.
    pub fn is_consistent(&self) -> bool {
        let mut rest = self.text.as_str();
        for t in &self.tokens {
            match rest.strip_prefix(t.token_text.as_str()) {
                Some(r) => rest = r,
                None => return false,
            }
        }
        rest.is_empty()
    }
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    ImageUrl { image_url: ImageUrl },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

/// Chat-completions request with log-probability capture. There is no field
/// for grammars or response formats: output is never constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_p: Option<f64>,
    pub max_tokens: u32,
    pub logprobs: bool,
    pub top_logprobs: u32,
    /// 1-based attempt number within a retry loop. Not sent.
    #[serde(skip)]
    pub attempt: u32,
    /// Content hash of the attached image. Not sent.
    #[serde(skip)]
    pub image_hash: Option<String>,
}

impl ChatRequest {
    pub fn build(prompt: &ClassificationPrompt, params: &DecodeParams, attempt: u32) -> Self {
        let mut content = Vec::with_capacity(2);
        if let Some(image) = &prompt.image {
            content.push(ContentPart::ImageUrl {
                image_url: ImageUrl { url: image.data_url() },
            });
        }
        let text = if prompt.image.is_some() {
            prompt.text_after_image()
        } else {
            prompt.text.as_str()
        };
        content.push(ContentPart::Text { text: text.to_string() });
        Self {
            model: None,
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
            temperature: params.temperature,
            min_p: (params.mode == DecodeMode::Sampling).then_some(params.min_p),
            max_tokens: params.max_new_tokens,
            logprobs: true,
            top_logprobs: params.logprob_depth,
            attempt,
            image_hash: prompt.image.as_ref().map(|i| i.hash().to_string()),
        }
    }

    pub fn mode(&self) -> DecodeMode {
        if self.min_p.is_some() {
            DecodeMode::Sampling
        } else {
            DecodeMode::Greedy
        }
    }
}

#[async_trait]
pub trait VlmClient: Send + Sync {
    fn name(&self) -> &str {
        "vlm"
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ModelResponse, BackendError>;

    async fn ping(&self) -> Result<(), BackendError>;
}

// ---------------------------------------------------------------------------
// inference

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferError {
    #[error("invalid decode parameters: {0}")]
    Precondition(String),
    #[error("attempt {attempt}: {source}")]
    Backend {
        attempt: u32,
        #[source]
        source: BackendError,
    },
}

pub async fn infer(
    prompt: &ClassificationPrompt,
    params: &DecodeParams,
    client: &dyn VlmClient,
    attempt: u32,
) -> Result<ModelResponse, InferError> {
    if params.logprob_depth < 2 {
        return Err(InferError::Precondition(format!(
            "logprob_depth must be at least 2, got {}",
            params.logprob_depth
        )));
    }
    let request = ChatRequest::build(prompt, params, attempt);
    let response = client
        .complete(&request)
        .await
        .map_err(|source| InferError::Backend { attempt, source })?;
    if response.tokens.is_empty() && !response.text.is_empty() {
        return Err(InferError::Backend {
            attempt,
            source: BackendError::new(
                client.name(),
                BackendErrorKind::Unsupported,
                "reply carries no log-probabilities",
            ),
        });
    }
    Ok(response)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryOutcome {
    /// Last response received.
    pub response: ModelResponse,
    pub verdict: Verdict,
    pub attempts: u32,
    /// Decode mode of each attempt, in order.
    pub modes: Vec<DecodeMode>,
}

/// Greedy first; on a reply without a usable class token, retry with
/// sampling up to `policy.max_retries` times. Transport errors end the loop.
pub async fn classify_with_retry(
    prompt: &ClassificationPrompt,
    client: &dyn VlmClient,
    settings: &DecodeSettings,
    policy: RetryPolicy,
) -> Result<RetryOutcome, InferError> {
    let mut modes = Vec::new();
    let mut last = None;
    for attempt in 1..=policy.max_retries + 1 {
        let params = if attempt == 1 {
            DecodeParams::greedy(settings)
        } else {
            DecodeParams::sampling(settings)
        };
        modes.push(params.mode);
        let response = infer(prompt, &params, client, attempt).await?;
        if let Some(located) = score_response(&response) {
            let verdict = assemble_verdict(parse_yaml_verdict(&response.text).ok(), Some(located), attempt);
            return Ok(RetryOutcome {
                response,
                verdict,
                attempts: attempt,
                modes,
            });
        }
        tracing::debug!(attempt, "no class token in reply");
        last = Some(response);
    }
    let response = last.expect("at least one attempt");
    let attempts = policy.max_retries + 1;
    Ok(RetryOutcome {
        verdict: assemble_verdict(parse_yaml_verdict(&response.text).ok(), None, attempts),
        response,
        attempts,
        modes,
    })
}
