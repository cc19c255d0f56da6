//! Translate non-English OCR text before it goes into the prompt, and fall
//! back to the original text when the translator is unavailable.
//!
//! cargo run -p memesentinel --example translation

use std::collections::HashMap;

use memesentinel::mock::MockTranslator;
use memesentinel::translation::{translate_to_english, LanguageCode};
use memesentinel::vlm::build_prompt;

#[tokio::main]
async fn main() {
    let translator = MockTranslator::with_canned(HashMap::from([(
        "这些外国人抢走了我们的工作".to_string(),
        "These foreigners took our jobs".to_string(),
    )]));
    let zh = LanguageCode::new("zh");
    let text = "这些外国人抢走了我们的工作";

    let english = translate_to_english(text, &zh, &translator).await.unwrap();
    println!("{}\n", build_prompt(Some((&zh, &english))).text);

    // English text is never sent out
    println!("{:?}", translate_to_english("hello", &LanguageCode::en(), &translator).await);

    translator.set_down(true);
    match translate_to_english(text, &zh, &translator).await {
        Ok(_) => unreachable!(),
        Err(e) => {
            println!("translator down: {e}");
            println!("{}", build_prompt(Some((&LanguageCode::en(), text))).text);
        }
    }
}
