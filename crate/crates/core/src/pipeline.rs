//! One pipeline assembly shared by the CLI, the service and evaluation.
//!
//! OCR, abbreviation expansion, language decision, translation, prompt,
//! VLM with retry, verdict. Optional stages fail open: a broken OCR or
//! translation backend degrades the prompt instead of failing the request.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::abbrev::{expand_abbreviations, AbbrevDict};
use crate::media::Image;
use crate::ocr::{run_ocr, OcrClient, OcrOutcome, Recognizers};
use crate::translation::{
    decide_language_for, translate_to_english, LanguageCode, LanguageDecision, LanguageDetector,
    TranslationClient, TranslationError,
};
use crate::verdict::Verdict;
use crate::vlm::{
    build_prompt, classify_with_retry, DecodeMode, DecodeParams, DecodeSettings, InferError, RetryPolicy,
    VlmClient, CLASSIFICATION_TEMPLATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub ocr_enabled: bool,
    pub translation_enabled: bool,
    pub decode: DecodeSettings,
    pub retry: RetryPolicy,
    pub recognizers: Recognizers,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            ocr_enabled: true,
            translation_enabled: true,
            decode: DecodeSettings::default(),
            retry: RetryPolicy::default(),
            recognizers: Recognizers::default(),
        }
    }
}

/// Everything the pipeline saw and produced for one image, for audit and the
/// moderator view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub ocr: Option<OcrOutcome>,
    pub ocr_error: Option<String>,
    pub expanded_text: Option<String>,
    pub language: Option<LanguageDecision>,
    pub translated_text: Option<String>,
    pub translation_error: Option<String>,
    pub prompt: String,
    pub response_text: Option<String>,
    pub decode_modes: Vec<DecodeMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub verdict: Verdict,
    pub trace: PipelineTrace,
}

/// VLM failure after the pipeline ran as far as it could. `verdict` is the
/// Unresolved verdict to record.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub verdict: Verdict,
    pub trace: PipelineTrace,
    pub error: InferError,
}

/// What a run would do, without calling any backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub stages: Vec<String>,
    /// Final prompt when OCR is off; the template with its OCR slot otherwise.
    pub prompt: String,
    pub greedy: DecodeParams,
    pub sampling: DecodeParams,
    pub max_attempts: u32,
    pub recognizers: Recognizers,
    pub abbreviations: usize,
}

#[derive(Clone)]
pub struct Pipeline {
    pub ocr: Arc<dyn OcrClient>,
    pub detector: Arc<dyn LanguageDetector>,
    pub translator: Arc<dyn TranslationClient>,
    pub vlm: Arc<dyn VlmClient>,
    pub abbreviations: Arc<AbbrevDict>,
    pub options: PipelineOptions,
}

impl Pipeline {
    pub fn plan(&self) -> PipelinePlan {
        let o = &self.options;
        let mut stages = Vec::new();
        if o.ocr_enabled {
            stages.extend(["ocr", "abbreviations", "language"].map(String::from));
            if o.translation_enabled {
                stages.push("translation".into());
            }
        }
        stages.extend(["prompt", "vlm", "verdict"].map(String::from));
        let prompt = if o.ocr_enabled {
            CLASSIFICATION_TEMPLATE.to_string()
        } else {
            build_prompt(None).text
        };
        PipelinePlan {
            stages,
            prompt,
            greedy: DecodeParams::greedy(&o.decode),
            sampling: DecodeParams::sampling(&o.decode),
            max_attempts: o.retry.max_retries + 1,
            recognizers: o.recognizers.clone(),
            abbreviations: self.abbreviations.len(),
        }
    }

    pub async fn classify(&self, image: &Image) -> Result<PipelineRun, PipelineFailure> {
        let mut trace = PipelineTrace::default();
        let ocr_text = if self.options.ocr_enabled {
            self.text_segment(image, &mut trace).await
        } else {
            None
        };
        let prompt = build_prompt(ocr_text.as_ref().map(|(l, t)| (l, t.as_str()))).with_image(image.clone());
        trace.prompt = prompt.text.clone();

        match classify_with_retry(&prompt, self.vlm.as_ref(), &self.options.decode, self.options.retry).await {
            Ok(outcome) => {
                trace.response_text = Some(outcome.response.text);
                trace.decode_modes = outcome.modes;
                Ok(PipelineRun {
                    verdict: outcome.verdict,
                    trace,
                })
            }
            Err(error) => {
                let attempts = match &error {
                    InferError::Backend { attempt, .. } => *attempt,
                    InferError::Precondition(_) => 0,
                };
                trace.decode_modes = (1..=attempts)
                    .map(|a| if a == 1 { DecodeMode::Greedy } else { DecodeMode::Sampling })
                    .collect();
                tracing::warn!(%error, image = image.hash(), "VLM stage failed");
                Err(PipelineFailure {
                    verdict: Verdict::unresolved(attempts),
                    trace,
                    error,
                })
            }
        }
    }

    /// OCR through translation. Returns the language and text for the
    /// prompt's OCR segment, or `None` when no text was found.
    async fn text_segment(&self, image: &Image, trace: &mut PipelineTrace) -> Option<(LanguageCode, String)> {
        let outcome = match run_ocr(image, &self.options.recognizers, self.ocr.as_ref()).await {
            Ok(outcome) => outcome,
            Err(e) => {
                tracing::warn!(error = %e, "OCR failed, continuing without text");
                trace.ocr_error = Some(e.to_string());
                return None;
            }
        };
        let has_text = outcome.has_text;
        let (script, unrouted, raw) = (outcome.majority_script, outcome.unrouted_majority, outcome.joined_text.clone());
        trace.ocr = Some(outcome);
        if !has_text {
            return None;
        }

        let expanded = expand_abbreviations(&raw, &self.abbreviations);
        trace.expanded_text = Some(expanded.clone());
        let decision = decide_language_for(script, unrouted, &expanded, self.detector.as_ref());
        trace.language = Some(decision.clone());
        if !decision.needs_translation {
            return Some((LanguageCode::en(), expanded));
        }
        if !self.options.translation_enabled {
            return Some((LanguageCode::en(), expanded));
        }
        match translate_to_english(&expanded, &decision.language, self.translator.as_ref()).await {
            Ok(text) => {
                trace.translated_text = Some(text.clone());
                Some((decision.language, text))
            }
            Err(TranslationError::AlreadyEnglish) => Some((LanguageCode::en(), expanded)),
            Err(e) => {
                tracing::warn!(error = %e, "translation failed, sending original text");
                trace.translation_error = Some(e.to_string());
                Some((LanguageCode::en(), expanded))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::tiny_png;
    use crate::mock::{Fixture, FixtureSet, MockBackends, VlmStep};
    use crate::ocr::{polygon, TextBox};
    use crate::verdict::Harmfulness;

    fn canned(script: &str, text: &str) -> crate::mock::CannedBox {
        crate::mock::CannedBox {
            polygon: polygon([(0.0, 0.0), (10.0, 0.0), (10.0, 5.0), (0.0, 5.0)]),
            script: script.into(),
            text: text.into(),
            confidence: 0.9,
        }
    }

    fn pipeline(backends: &MockBackends, options: PipelineOptions) -> Pipeline {
        Pipeline {
            ocr: backends.ocr.clone(),
            detector: backends.detector.clone(),
            translator: backends.translator.clone(),
            vlm: backends.vlm.clone(),
            abbreviations: Arc::new(AbbrevDict::from_pairs([("NS", "National Service")]).unwrap()),
            options,
        }
    }

    fn setup(fixture: Fixture) -> (Image, MockBackends) {
        let image = Image::from_bytes(tiny_png(7)).unwrap();
        let mut set = FixtureSet::default();
        set.insert(image.hash(), fixture);
        (image, set.into_backends())
    }

    #[tokio::test]
    async fn english_text_is_expanded_and_not_translated() {
        let (image, b) = setup(Fixture {
            ocr: vec![canned("latin", "NS again")],
            language: Some("en".into()),
            vlm: vec![VlmStep::reply("description: x\nharmful: No", 0.2, 0.8)],
            ..Default::default()
        });
        let run = pipeline(&b, PipelineOptions::default()).classify(&image).await.unwrap();
        assert!(run.trace.prompt.contains("The text in this meme is:\nNational Service again\n"));
        assert_eq!(b.translator.calls(), 0);
        assert_eq!(run.verdict.harmful, Harmfulness::No);
        assert!((run.verdict.score - 0.2).abs() < 1e-12);
    }

    #[tokio::test]
    async fn ocr_failure_fails_open() {
        let (image, b) = setup(Fixture {
            vlm: vec![VlmStep::reply("harmful: Yes", 0.9, 0.1)],
            ..Default::default()
        });
        b.ocr.set_down(true);
        let run = pipeline(&b, PipelineOptions::default()).classify(&image).await.unwrap();
        assert!(run.trace.ocr_error.is_some());
        assert_eq!(run.trace.prompt, build_prompt(None).text);
        assert_eq!(run.verdict.harmful, Harmfulness::Yes);
    }

    #[tokio::test]
    async fn translation_failure_uses_english_form() {
        let (image, b) = setup(Fixture {
            ocr: vec![canned("chinese", "你好")],
            vlm: vec![VlmStep::reply("harmful: No", 0.1, 0.9)],
            ..Default::default()
        });
        b.translator.set_down(true);
        let run = pipeline(&b, PipelineOptions::default()).classify(&image).await.unwrap();
        assert!(run.trace.prompt.contains("The text in this meme is:\n你好\n"));
        assert!(run.trace.translation_error.is_some());
    }

    #[tokio::test]
    async fn disabled_ocr_skips_backend() {
        let (image, b) = setup(Fixture {
            ocr: vec![canned("latin", "hello")],
            vlm: vec![VlmStep::reply("harmful: No", 0.1, 0.9)],
            ..Default::default()
        });
        let opts = PipelineOptions {
            ocr_enabled: false,
            ..Default::default()
        };
        let p = pipeline(&b, opts);
        let run = p.classify(&image).await.unwrap();
        assert!(b.ocr.calls().is_empty());
        assert_eq!(run.trace.prompt, p.plan().prompt);
        assert!(!p.plan().stages.contains(&"ocr".to_string()));
    }

    #[tokio::test]
    async fn vlm_down_is_unresolved_failure() {
        let (image, b) = setup(Fixture::default());
        b.vlm.set_down(true);
        let err = pipeline(&b, PipelineOptions::default()).classify(&image).await.unwrap_err();
        assert_eq!(err.verdict.harmful, Harmfulness::Unresolved);
        assert_eq!(err.verdict.score, 0.5);
        assert_eq!(err.verdict.attempts, 1);
    }

    #[test]
    fn trace_round_trips() {
        let trace = PipelineTrace {
            ocr: Some(OcrOutcome {
                boxes: vec![TextBox {
                    polygon: polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
                    script: crate::ocr::Script::Latin,
                    text: Some("hi".into()),
                    confidence: 0.5,
                }],
                ..OcrOutcome::empty(&Recognizers::default())
            }),
            prompt: "p".into(),
            ..Default::default()
        };
        let json = serde_json::to_string(&trace).unwrap();
        assert_eq!(serde_json::from_str::<PipelineTrace>(&json).unwrap(), trace);
    }
}
