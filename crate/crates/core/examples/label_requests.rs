//! Compose the labeling request sent to a vision-capable chat model for one
//! sample, using whatever partial human label is available.
//!
//! cargo run -p memesentinel --example label_requests

use memesentinel::dataset::{HarmLabel, MemeSample};
use memesentinel::labeling::{build_label_request, compose_user_prompt};

fn main() {
    let partial = [
        None,
        Some(HarmLabel {
            harmful: Some(true),
            ..HarmLabel::default()
        }),
        Some(HarmLabel {
            harmful: None,
            victim_groups: vec!["women".into(), "foreigners".into()],
            ..HarmLabel::default()
        }),
        Some(HarmLabel {
            harmful: Some(true),
            victim_groups: vec!["racial minorities".into()],
            methods_of_attack: vec!["dehumanizing".into()],
            explanation: Some("compares a race to animals.".into()),
        }),
    ];
    for label in &partial {
        println!("--- {label:?}\n{}\n", compose_user_prompt(label.as_ref()));
    }

    let mut sample = MemeSample::new("fb-0042", "facebook-hateful", "facebook-hateful/0042.png");
    sample.human_label = partial[3].clone();
    let request = build_label_request(&sample);
    let body = request.to_chat_request("gpt-4-1106-vision-preview", "file:///data/facebook-hateful/0042.png");
    println!("{}", serde_json::to_string_pretty(&body).unwrap());
}
