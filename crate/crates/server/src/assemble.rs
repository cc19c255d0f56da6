//! Builds the pipeline from configuration. The CLI and the service both go
//! through [`assemble`], so the two entry points cannot drift apart.

use std::sync::Arc;
use std::time::Duration;

use memesentinel::abbrev::AbbrevDict;
use memesentinel::http::{HttpOcrClient, HttpTranslationClient, HttpVlmClient};
use memesentinel::mock::{FixtureSet, MockBackends};
use memesentinel::ocr::OcrClient;
use memesentinel::translation::{NgramDetector, TranslationClient};
use memesentinel::vlm::VlmClient;
use memesentinel::{BackendError, Pipeline, PipelineOptions};
use serde::Serialize;

use crate::config::ServiceConfig;

#[derive(Clone)]
pub struct Assembled {
    pub pipeline: Pipeline,
    /// Present in mock mode, so tests can reach into the fakes.
    pub mock: Option<MockBackends>,
}

/// Backend endpoints and stage switches, for dry runs and health.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Endpoints {
    pub mock: bool,
    pub ocr: Option<String>,
    pub translation: Option<String>,
    pub vlm: Option<String>,
}

impl Endpoints {
    pub fn from_config(c: &ServiceConfig) -> Self {
        let url = |on: bool, url: &str| on.then(|| if c.backends.mock { "mock".to_string() } else { url.to_string() });
        Self {
            mock: c.backends.mock,
            ocr: url(c.stages.ocr, &c.backends.ocr_url),
            translation: url(c.stages.ocr && c.stages.translation, &c.backends.translation_url),
            vlm: url(c.stages.vlm, &c.backends.vlm_url),
        }
    }
}

pub fn options(c: &ServiceConfig) -> PipelineOptions {
    PipelineOptions {
        ocr_enabled: c.stages.ocr,
        translation_enabled: c.stages.translation,
        decode: c.decode,
        retry: c.retry,
        recognizers: c.recognizers.clone(),
    }
}

pub fn assemble(c: &ServiceConfig) -> anyhow::Result<Assembled> {
    let abbreviations = match &c.stages.abbreviations {
        Some(path) => AbbrevDict::load(path)?,
        None => AbbrevDict::singapore(),
    };
    let abbreviations = Arc::new(abbreviations);
    let options = options(c);

    if c.backends.mock {
        let fixtures = match &c.backends.fixtures {
            Some(dir) => FixtureSet::load_dir(dir)?,
            None => FixtureSet::default(),
        };
        let mock = fixtures.into_backends();
        let pipeline = Pipeline {
            ocr: mock.ocr.clone(),
            detector: mock.detector.clone(),
            translator: mock.translator.clone(),
            vlm: mock.vlm.clone(),
            abbreviations,
            options,
        };
        return Ok(Assembled {
            pipeline,
            mock: Some(mock),
        });
    }

    let timeout = Duration::from_secs(c.backends.timeout_secs.max(1));
    let b = &c.backends;
    let ocr: Arc<dyn OcrClient> = Arc::new(HttpOcrClient::new(&b.ocr_url, timeout).map_err(boxed)?);
    let translator: Arc<dyn TranslationClient> =
        Arc::new(HttpTranslationClient::new(&b.translation_url, timeout).map_err(boxed)?);
    let vlm: Arc<dyn VlmClient> = Arc::new(
        HttpVlmClient::new(&b.vlm_url, b.vlm_model.clone(), b.vlm_api_key.clone(), timeout).map_err(boxed)?,
    );
    Ok(Assembled {
        pipeline: Pipeline {
            ocr,
            detector: Arc::new(NgramDetector),
            translator,
            vlm,
            abbreviations,
            options,
        },
        mock: None,
    })
}

fn boxed(e: BackendError) -> anyhow::Error {
    anyhow::Error::new(e)
}
