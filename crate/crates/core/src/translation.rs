//! Language decision for OCR text and translation into English.
//!
//! Chinese and Tamil script decide the language directly. Latin-script text
//! goes through a statistical detector; Indonesian is reported as Malay
//! because the two are close enough that detectors confuse them and the
//! detector has no Malay model.

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::ocr::{OcrOutcome, RoutedScript};

/// ISO 639-1 style language identifier (`en`, `ms`, `zh`, `ta`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: impl Into<String>) -> Self {
        Self(code.into().trim().to_ascii_lowercase())
    }

    pub fn en() -> Self {
        Self::new("en")
    }

    pub fn is_english(&self) -> bool {
        self.0 == "en"
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    ScriptDirect,
    LatinDetector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageDecision {
    pub language: LanguageCode,
    pub needs_translation: bool,
    pub source: DecisionSource,
}

impl LanguageDecision {
    fn new(language: LanguageCode, source: DecisionSource) -> Self {
        Self {
            needs_translation: !language.is_english(),
            language,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("language detection failed: {0}")]
pub struct DetectError(pub String);

pub trait LanguageDetector: Send + Sync {
    /// Returns an ISO 639-1 code.
    fn detect(&self, text: &str) -> Result<LanguageCode, DetectError>;
}

/// Trigram-statistics detector.
#[derive(Debug, Clone, Copy, Default)]
pub struct NgramDetector;

impl LanguageDetector for NgramDetector {
    fn detect(&self, text: &str) -> Result<LanguageCode, DetectError> {
        let info = whatlang::detect(text).ok_or_else(|| DetectError("no language identified".into()))?;
        Ok(LanguageCode::new(iso639_1(info.lang())))
    }
}

fn iso639_1(lang: whatlang::Lang) -> &'static str {
    use whatlang::Lang::*;
    match lang {
        Epo => "eo",
        Eng => "en",
        Rus => "ru",
        Cmn => "zh",
        Spa => "es",
        Por => "pt",
        Ita => "it",
        Ben => "bn",
        Fra => "fr",
        Deu => "de",
        Ukr => "uk",
        Kat => "ka",
        Ara => "ar",
        Hin => "hi",
        Jpn => "ja",
        Heb => "he",
        Yid => "yi",
        Pol => "pl",
        Amh => "am",
        Jav => "jv",
        Kor => "ko",
        Nob => "nb",
        Dan => "da",
        Swe => "sv",
        Fin => "fi",
        Tur => "tr",
        Nld => "nl",
        Hun => "hu",
        Ces => "cs",
        Ell => "el",
        Bul => "bg",
        Bel => "be",
        Mar => "mr",
        Kan => "kn",
        Ron => "ro",
        Slv => "sl",
        Hrv => "hr",
        Srp => "sr",
        Mkd => "mk",
        Lit => "lt",
        Lav => "lv",
        Est => "et",
        Tam => "ta",
        Vie => "vi",
        Urd => "ur",
        Tha => "th",
        Guj => "gu",
        Uzb => "uz",
        Pan => "pa",
        Aze => "az",
        Ind => "id",
        Tel => "te",
        Pes => "fa",
        Mal => "ml",
        Ori => "or",
        Mya => "my",
        Nep => "ne",
        Sin => "si",
        Khm => "km",
        Tuk => "tk",
        Aka => "ak",
        Zul => "zu",
        Sna => "sn",
        Afr => "af",
        Lat => "la",
        Slk => "sk",
        Cat => "ca",
        Tgl => "tl",
        Hye => "hy",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("OCR outcome has no text to classify")]
pub struct NoText;

pub fn decide_language(outcome: &OcrOutcome, detector: &dyn LanguageDetector) -> Result<LanguageDecision, NoText> {
    if !outcome.has_text {
        return Err(NoText);
    }
    Ok(decide_language_for(
        outcome.majority_script,
        outcome.unrouted_majority,
        &outcome.joined_text,
        detector,
    ))
}

/// Language decision for `text` recognized under `script`. Detector failures
/// fall back to English.
pub fn decide_language_for(
    script: RoutedScript,
    unrouted_majority: bool,
    text: &str,
    detector: &dyn LanguageDetector,
) -> LanguageDecision {
    match script {
        RoutedScript::Chinese => LanguageDecision::new(LanguageCode::new("zh"), DecisionSource::ScriptDirect),
        RoutedScript::Tamil => LanguageDecision::new(LanguageCode::new("ta"), DecisionSource::ScriptDirect),
        RoutedScript::Latin if unrouted_majority => {
            LanguageDecision::new(LanguageCode::en(), DecisionSource::ScriptDirect)
        }
        RoutedScript::Latin => {
            let language = match detector.detect(text) {
                Ok(code) if code.as_str() == "id" => LanguageCode::new("ms"),
                Ok(code) => code,
                Err(e) => {
                    tracing::warn!(error = %e, "language detection failed, assuming English");
                    LanguageCode::en()
                }
            };
            LanguageDecision::new(language, DecisionSource::LatinDetector)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub text: String,
    pub source_language: LanguageCode,
    pub target_language: LanguageCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationReply {
    pub text: String,
}

#[async_trait]
pub trait TranslationClient: Send + Sync {
    fn name(&self) -> &str {
        "translation"
    }

    async fn translate(&self, request: &TranslationRequest) -> Result<TranslationReply, BackendError>;

    async fn ping(&self) -> Result<(), BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranslationError {
    #[error("text is already English")]
    AlreadyEnglish,
    #[error("translating {text_len} chars from {language} failed: {source}")]
    Backend {
        language: LanguageCode,
        text_len: usize,
        #[source]
        source: BackendError,
    },
}

pub async fn translate_to_english(
    text: &str,
    language: &LanguageCode,
    client: &dyn TranslationClient,
) -> Result<String, TranslationError> {
    if language.is_english() {
        return Err(TranslationError::AlreadyEnglish);
    }
    if text.is_empty() {
        return Ok(String::new());
    }
    let request = TranslationRequest {
        text: text.to_string(),
        source_language: language.clone(),
        target_language: LanguageCode::en(),
    };
    client
        .translate(&request)
        .await
        .map(|reply| reply.text)
        .map_err(|source| TranslationError::Backend {
            language: language.clone(),
            text_len: text.chars().count(),
            source,
        })
}
