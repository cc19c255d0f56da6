//! Deterministic in-process backends.
//!
//! Fixtures are JSON files, one per image:
//!
//! ```json
//! {
//!   "image": "english.png",
//!   "ocr": [{"polygon": [{"x":0,"y":0},{"x":9,"y":0},{"x":9,"y":4},{"x":0,"y":4}],
//!            "script": "latin", "text": "when NS ends", "confidence": 0.98}],
//!   "language": "en",
//!   "detect": {"when National Service ends": "en"},
//!   "translation": "optional canned English",
//!   "vlm": [{"reply": "description: ...\nharmful: Yes", "yes": 0.8, "no": 0.2},
//!           {"error": "transport"}]
//! }
//! ```
//!
//! `image` is resolved relative to the fixture file and hashed; replies are
//! keyed by that hash. Without `image`, the file stem is taken as the hash.
//! `vlm` steps are indexed by attempt number; the last step repeats.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendErrorKind};
use crate::media::content_hash;
use crate::ocr::{OcrClient, OcrRecord, OcrRequest, OcrStage, Polygon};
use crate::translation::{
    DetectError, LanguageCode, LanguageDetector, NgramDetector, TranslationClient, TranslationReply,
    TranslationRequest,
};
use crate::verdict::token_class;
use crate::vlm::{ChatRequest, GeneratedToken, ModelResponse, TokenAlternative, VlmClient};

// ---------------------------------------------------------------------------
// scripted replies

/// Splits text into word-ish tokens that carry their leading whitespace,
/// like a byte-level BPE tokenizer would. Concatenation gives `text` back.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while chars.peek().is_some() {
        let mut tok = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() && c != '\n' {
                tok.push(c);
                chars.next();
            } else {
                break;
            }
        }
        match chars.peek().copied() {
            None => {}
            Some('\n') => {
                if tok.is_empty() {
                    tok.push('\n');
                    chars.next();
                }
            }
            Some(c) if c.is_alphanumeric() || c == '_' => {
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        tok.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
            }
            Some(c) => {
                tok.push(c);
                chars.next();
            }
        }
        tokens.push(tok);
    }
    tokens
}

/// A reply whose every yes/no token is offered with the given class weights
/// as alternatives. Other positions are certain.
pub fn scripted_reply(text: &str, yes_weight: f64, no_weight: f64) -> ModelResponse {
    let tokens = split_tokens(text)
        .into_iter()
        .map(|tok| match token_class(&tok) {
            Some(class) => {
                let lead: String = tok.chars().take_while(|c| c.is_whitespace()).collect();
                let alternatives = vec![
                    TokenAlternative {
                        token_text: format!("{lead}Yes"),
                        weight: yes_weight,
                    },
                    TokenAlternative {
                        token_text: format!("{lead}No"),
                        weight: no_weight,
                    },
                ];
                GeneratedToken {
                    chosen_weight: if class.is_yes() { yes_weight } else { no_weight },
                    token_text: tok,
                    alternatives,
                }
            }
            None => GeneratedToken {
                alternatives: vec![TokenAlternative {
                    token_text: tok.clone(),
                    weight: 1.0,
                }],
                token_text: tok,
                chosen_weight: 1.0,
            },
        })
        .collect();
    ModelResponse::from_tokens(tokens)
}

// ---------------------------------------------------------------------------
// fixtures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedBox {
    pub polygon: Polygon,
    pub script: String,
    #[serde(default)]
    pub text: String,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VlmStep {
    Reply {
        reply: String,
        #[serde(default)]
        yes: f64,
        #[serde(default)]
        no: f64,
    },
    Error {
        error: String,
    },
}

impl VlmStep {
    pub fn reply(text: impl Into<String>, yes: f64, no: f64) -> Self {
        VlmStep::Reply {
            reply: text.into(),
            yes,
            no,
        }
    }

    pub fn transport_error() -> Self {
        VlmStep::Error {
            error: "transport".into(),
        }
    }

    fn run(&self, backend: &str) -> Result<ModelResponse, BackendError> {
        match self {
            VlmStep::Reply { reply, yes, no } => Ok(scripted_reply(reply, *yes, *no)),
            VlmStep::Error { error } => Err(error_from_name(backend, error)),
        }
    }
}

fn error_from_name(backend: &str, name: &str) -> BackendError {
    match name {
        "timeout" => BackendError::timeout(backend),
        "malformed" => BackendError::malformed(backend, "scripted malformed reply"),
        "unsupported" => BackendError::new(backend, BackendErrorKind::Unsupported, "scripted refusal"),
        other => BackendError::transport(backend, format!("scripted failure: {other}")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub ocr: Vec<CannedBox>,
    /// Scripted OCR failure (`transport`, `timeout`, ...).
    #[serde(default)]
    pub ocr_error: Option<String>,
    /// Language for the joined OCR text.
    #[serde(default)]
    pub language: Option<String>,
    /// Extra detector answers keyed by exact input text, for text that
    /// abbreviation expansion rewrote.
    #[serde(default)]
    pub detect: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub translation: Option<String>,
    #[serde(default)]
    pub vlm: Vec<VlmStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad fixture {path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Fixtures keyed by image content hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    pub by_hash: HashMap<String, Fixture>,
    /// Used for images without a fixture.
    pub default_vlm: Vec<VlmStep>,
}

impl FixtureSet {
    pub fn insert(&mut self, image_hash: impl Into<String>, fixture: Fixture) {
        self.by_hash.insert(image_hash.into(), fixture);
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| FixtureError::Io { path, source }
        };
        let mut set = FixtureSet::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path).map_err(io(&path))?;
            let fixture: Fixture = serde_json::from_str(&text).map_err(|source| FixtureError::Json {
                path: path.clone(),
                source,
            })?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if stem == "default" {
                set.default_vlm = fixture.vlm;
                continue;
            }
            let hash = match &fixture.image {
                Some(image) => {
                    let image_path = path.parent().unwrap_or(dir).join(image);
                    content_hash(&std::fs::read(&image_path).map_err(io(&image_path))?)
                }
                None => stem,
            };
            set.by_hash.insert(hash, fixture);
        }
        Ok(set)
    }

    /// Builds one set of mock clients sharing these fixtures.
    pub fn into_backends(self) -> MockBackends {
        let set = Arc::new(self);
        MockBackends {
            ocr: Arc::new(MockOcr::new(set.clone())),
            detector: Arc::new(MockDetector::new(set.clone())),
            translator: Arc::new(MockTranslator::new(set.clone())),
            vlm: Arc::new(ScriptedVlm::new(set)),
        }
    }
}

#[derive(Clone)]
pub struct MockBackends {
    pub ocr: Arc<MockOcr>,
    pub detector: Arc<MockDetector>,
    pub translator: Arc<MockTranslator>,
    pub vlm: Arc<ScriptedVlm>,
}

// ---------------------------------------------------------------------------
// OCR

pub struct MockOcr {
    fixtures: Arc<FixtureSet>,
    down: AtomicBool,
    calls: Mutex<Vec<String>>,
}

impl MockOcr {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        Self {
            fixtures,
            down: AtomicBool::new(false),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    /// Wire stage names of every call, in order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl OcrClient for MockOcr {
    fn name(&self) -> &str {
        "ocr"
    }

    async fn call(&self, request: OcrRequest<'_>) -> Result<Vec<OcrRecord>, BackendError> {
        self.calls.lock().unwrap().push(request.stage.wire_name());
        if self.down.load(Ordering::SeqCst) {
            return Err(BackendError::transport(self.name(), "connection refused"));
        }
        let Some(fixture) = self.fixtures.by_hash.get(request.image.hash()) else {
            return Ok(Vec::new());
        };
        if let Some(err) = &fixture.ocr_error {
            return Err(error_from_name(self.name(), err));
        }
        let records = fixture.ocr.iter().map(|b| {
            let label = match request.stage {
                OcrStage::Detect => String::new(),
                OcrStage::ClassifyScript => b.script.clone(),
                OcrStage::Recognize(_) => b.text.clone(),
            };
            OcrRecord {
                polygon: b.polygon,
                label,
                confidence: b.confidence,
            }
        });
        Ok(records.collect())
    }

    async fn ping(&self) -> Result<(), BackendError> {
        if self.down.load(Ordering::SeqCst) {
            Err(BackendError::transport(self.name(), "connection refused"))
        } else {
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// language detection and translation

/// Uses a fixture's `language` when the text matches one of its recognized
/// texts, otherwise the n-gram detector.
pub struct MockDetector {
    by_text: HashMap<String, String>,
}

impl MockDetector {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        let mut by_text = HashMap::new();
        for f in fixtures.by_hash.values() {
            if let Some(lang) = &f.language {
                let text = f
                    .ocr
                    .iter()
                    .map(|b| b.text.trim())
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>();
                for t in &text {
                    by_text.insert(t.to_string(), lang.clone());
                }
                by_text.insert(text.join("\n"), lang.clone());
            }
            by_text.extend(f.detect.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        Self { by_text }
    }

    pub fn with_entries<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            by_text: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

impl LanguageDetector for MockDetector {
    fn detect(&self, text: &str) -> Result<LanguageCode, DetectError> {
        if let Some(lang) = self.by_text.get(text) {
            return Ok(LanguageCode::new(lang.as_str()));
        }
        // abbreviation expansion may have rewritten part of the text
        if let Some((_, lang)) = self
            .by_text
            .iter()
            .filter(|(k, _)| text.lines().any(|l| l == k.as_str()))
            .min_by(|a, b| a.0.cmp(b.0))
        {
            return Ok(LanguageCode::new(lang.as_str()));
        }
        NgramDetector.detect(text)
    }
}

/// Canned translations where a fixture provides one, `<text>-EN` otherwise.
pub struct MockTranslator {
    canned: HashMap<String, String>,
    calls: AtomicUsize,
    down: AtomicBool,
    requests: Mutex<Vec<TranslationRequest>>,
}

impl MockTranslator {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        let mut canned = HashMap::new();
        for f in fixtures.by_hash.values() {
            if let Some(tr) = &f.translation {
                let text = f
                    .ocr
                    .iter()
                    .map(|b| b.text.trim())
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
                    .join("\n");
                canned.insert(text, tr.clone());
            }
        }
        Self::with_canned(canned)
    }

    pub fn echo() -> Self {
        Self::with_canned(HashMap::new())
    }

    pub fn with_canned(canned: HashMap<String, String>) -> Self {
        Self {
            canned,
            calls: AtomicUsize::new(0),
            down: AtomicBool::new(false),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<TranslationRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }
}

#[async_trait]
impl TranslationClient for MockTranslator {
    async fn translate(&self, request: &TranslationRequest) -> Result<TranslationReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        if self.down.load(Ordering::SeqCst) {
            return Err(BackendError::transport(self.name(), "connection refused"));
        }
        let text = self
            .canned
            .get(&request.text)
            .cloned()
            .unwrap_or_else(|| format!("{}-EN", request.text));
        Ok(TranslationReply { text })
    }

    async fn ping(&self) -> Result<(), BackendError> {
        if self.down.load(Ordering::SeqCst) {
            Err(BackendError::transport(self.name(), "connection refused"))
        } else {
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// VLM

/// Replies from per-image scripts indexed by attempt number, and records
/// every request it sees.
pub struct ScriptedVlm {
    fixtures: Arc<FixtureSet>,
    down: AtomicBool,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedVlm {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        Self {
            fixtures,
            down: AtomicBool::new(false),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Same script for every image.
    pub fn with_steps(steps: Vec<VlmStep>) -> Self {
        Self::new(Arc::new(FixtureSet {
            default_vlm: steps,
            ..Default::default()
        }))
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn clear_requests(&self) {
        self.requests.lock().unwrap().clear();
    }
}

#[async_trait]
impl VlmClient for ScriptedVlm {
    async fn complete(&self, request: &ChatRequest) -> Result<ModelResponse, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        if self.down.load(Ordering::SeqCst) {
            return Err(BackendError::transport(self.name(), "connection refused"));
        }
        let steps = request
            .image_hash
            .as_ref()
            .and_then(|h| self.fixtures.by_hash.get(h))
            .map(|f| &f.vlm)
            .filter(|s| !s.is_empty())
            .unwrap_or(&self.fixtures.default_vlm);
        let Some(last) = steps.last() else {
            return Err(BackendError::malformed(self.name(), "no scripted reply for this image"));
        };
        let idx = (request.attempt.max(1) as usize - 1).min(steps.len() - 1);
        steps.get(idx).unwrap_or(last).run(self.name())
    }

    async fn ping(&self) -> Result<(), BackendError> {
        if self.down.load(Ordering::SeqCst) {
            Err(BackendError::transport(self.name(), "connection refused"))
        } else {
            Ok(())
        }
    }
}
