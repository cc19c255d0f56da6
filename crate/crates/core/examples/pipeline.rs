//! The full moderation pipeline on deterministic mock backends: OCR,
//! abbreviation expansion, language detection, translation, prompting,
//! retrying inference and scoring.
//!
//! cargo run -p memesentinel --example pipeline

use std::sync::Arc;

use memesentinel::abbrev::AbbrevDict;
use memesentinel::media::tiny_png;
use memesentinel::mock::{CannedBox, Fixture, FixtureSet, VlmStep};
use memesentinel::ocr::polygon;
use memesentinel::{Image, Pipeline, PipelineOptions};

#[tokio::main]
async fn main() {
    let image = Image::from_bytes(tiny_png(7)).unwrap();
    let mut fixtures = FixtureSet::default();
    fixtures.insert(
        image.hash(),
        Fixture {
            ocr: vec![CannedBox {
                polygon: polygon([(0.0, 0.0), (200.0, 0.0), (200.0, 30.0), (0.0, 30.0)]),
                script: "chinese".into(),
                text: "这些外国人抢走了我们的工作".into(),
                confidence: 0.96,
            }],
            translation: Some("These foreigners took our jobs".into()),
            vlm: vec![VlmStep::reply(
                "description: a meme blaming foreigners for unemployment\nvictim_groups: [foreigners]\nmethods_of_attack: [stereotyping]\nharmful: Yes",
                0.88,
                0.12,
            )],
            ..Fixture::default()
        },
    );
    let mocks = fixtures.into_backends();
    let pipeline = Pipeline {
        ocr: mocks.ocr.clone(),
        detector: mocks.detector.clone(),
        translator: mocks.translator.clone(),
        vlm: mocks.vlm.clone(),
        abbreviations: Arc::new(AbbrevDict::singapore()),
        options: PipelineOptions::default(),
    };
    println!("stages: {}", pipeline.plan().stages.join(" -> "));
    let run = pipeline.classify(&image).await.unwrap();
    println!("prompt:\n{}\n", run.trace.prompt);
    println!("{}", serde_json::to_string_pretty(&run.verdict).unwrap());
    println!("ocr calls: {:?}", mocks.ocr.calls());
}
