//! Detect text boxes, vote on the majority script and route recognition to
//! the matching model, then decide the language.
//!
//! cargo run -p memesentinel --example ocr_routing

use memesentinel::media::tiny_png;
use memesentinel::mock::{CannedBox, Fixture, FixtureSet};
use memesentinel::ocr::{polygon, run_ocr, Recognizers};
use memesentinel::translation::decide_language;
use memesentinel::Image;

fn boxed(y: f64, script: &str, text: &str) -> CannedBox {
    CannedBox {
        polygon: polygon([(0.0, y), (100.0, y), (100.0, y + 20.0), (0.0, y + 20.0)]),
        script: script.into(),
        text: text.into(),
        confidence: 0.97,
    }
}

#[tokio::main]
async fn main() {
    let cases = [
        ("two chinese lines and an english tag", vec![boxed(40.0, "chinese", "抢走工作"), boxed(0.0, "chinese", "你们"), boxed(80.0, "latin", "lol")]),
        ("tamil caption", vec![boxed(0.0, "tamil", "வணக்கம்")]),
        ("mostly unrouted script", vec![boxed(0.0, "other", "สวัสดี"), boxed(30.0, "other", "ครับ"), boxed(60.0, "latin", "ok")]),
        ("malay in latin script", vec![boxed(0.0, "latin", "Abang jual nasi lemak mahal sangat")]),
    ];
    let recognizers = Recognizers::default();
    for (salt, (name, boxes)) in cases.into_iter().enumerate() {
        let image = Image::from_bytes(tiny_png(salt as u8)).unwrap();
        let mut set = FixtureSet::default();
        set.insert(
            image.hash(),
            Fixture {
                ocr: boxes,
                ..Fixture::default()
            },
        );
        let mocks = set.into_backends();
        let outcome = run_ocr(&image, &recognizers, mocks.ocr.as_ref()).await.unwrap();
        let language = decide_language(&outcome, mocks.detector.as_ref()).unwrap();
        println!(
            "{name}: majority {} via {}, language {} ({:?}), text {:?}",
            outcome.majority_script, outcome.routed_model, language.language, language.source, outcome.joined_text
        );
    }
}
