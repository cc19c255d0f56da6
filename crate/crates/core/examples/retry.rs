//! Greedy first attempt, then min-p sampling retries until the reply
//! contains a locatable Yes/No token.
//!
//! cargo run -p memesentinel --example retry

use memesentinel::mock::{ScriptedVlm, VlmStep};
use memesentinel::vlm::{build_prompt, classify_with_retry, DecodeSettings, RetryPolicy};

#[tokio::main]
async fn main() {
    let vlm = ScriptedVlm::with_steps(vec![
        VlmStep::reply("Sorry, I can't describe this.", 0.0, 0.0),
        VlmStep::reply("The image shows a cat.", 0.0, 0.0),
        VlmStep::reply(
            "description: a cat mocking its owner\nvictim_groups: []\nmethods_of_attack: [mocking]\nharmful: No",
            0.3,
            0.7,
        ),
    ]);
    let out = classify_with_retry(&build_prompt(None), &vlm, &DecodeSettings::default(), RetryPolicy::default())
        .await
        .unwrap();
    for r in vlm.requests() {
        println!("attempt {}: temperature {} min_p {:?}", r.attempt, r.temperature, r.min_p);
    }
    println!("{:?} after {} attempts, score {:.3}", out.verdict.harmful, out.attempts, out.verdict.score);

    let stubborn = ScriptedVlm::with_steps(vec![VlmStep::reply("no comment from me", 0.0, 0.0)]);
    let out = classify_with_retry(&build_prompt(None), &stubborn, &DecodeSettings::default(), RetryPolicy::default())
        .await
        .unwrap();
    println!("{:?} after {} attempts, score {}", out.verdict.harmful, out.attempts, out.verdict.score);
}
