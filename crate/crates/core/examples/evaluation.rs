//! Evaluate a labeled manifest end to end on mock backends and report
//! accuracy and AUROC.
//!
//! cargo run -p memesentinel --example evaluation

use std::sync::Arc;

use memesentinel::abbrev::AbbrevDict;
use memesentinel::dataset::{HarmLabel, MemeSample};
use memesentinel::eval::evaluate;
use memesentinel::media::{content_hash, tiny_png};
use memesentinel::mock::{Fixture, FixtureSet, VlmStep};
use memesentinel::{Pipeline, PipelineOptions};

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    // (truth, model P(Yes)); the last one never answers
    let cases = [(true, 0.91), (true, 0.55), (false, 0.60), (false, 0.12), (true, f64::NAN)];
    let mut fixtures = FixtureSet::default();
    let mut samples = Vec::new();
    for (i, (truth, p)) in cases.iter().enumerate() {
        let bytes = tiny_png(i as u8);
        std::fs::write(dir.path().join(format!("{i}.png")), &bytes).unwrap();
        let step = if p.is_nan() {
            VlmStep::reply("no idea", 0.0, 0.0)
        } else {
            let answer = if *p > 0.5 { "Yes" } else { "No" };
            VlmStep::reply(format!("description: meme {i}\nvictim_groups: []\nmethods_of_attack: []\nharmful: {answer}"), *p, 1.0 - p)
        };
        fixtures.insert(content_hash(&bytes), Fixture { vlm: vec![step], ..Fixture::default() });
        let mut s = MemeSample::new(format!("s{i}"), "demo", format!("{i}.png"));
        s.human_label = Some(HarmLabel { harmful: Some(*truth), ..HarmLabel::default() });
        samples.push(s);
    }
    let mocks = fixtures.into_backends();
    let pipeline = Pipeline {
        ocr: mocks.ocr,
        detector: mocks.detector,
        translator: mocks.translator,
        vlm: mocks.vlm,
        abbreviations: Arc::new(AbbrevDict::singapore()),
        options: PipelineOptions::default(),
    };
    let evaluation = evaluate(&samples, dir.path(), &pipeline, 2).await.unwrap();
    for r in &evaluation.records {
        println!("{} truth={} predicted={:?} score={:.2} attempts={}", r.sample_id, r.truth, r.predicted, r.score, r.attempts);
    }
    print!("\n{}", evaluation.report.render_table());
}
