//! Turn encyclopedia articles into instruction-tuning conversations with a
//! fixed seed, so reruns give identical files.
//!
//! cargo run -p memesentinel --example wiki_qa

use memesentinel::wiki_qa::{build_all, InlineImage, WikiArticle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let articles = vec![
        WikiArticle {
            title: "Merlion".into(),
            body: "The Merlion is the official mascot of Singapore.".into(),
            cover_image: Some("merlion.jpg".into()),
            inline_images: vec![
                InlineImage {
                    path: "merlion_park.jpg".into(),
                    alt_text: "The Merlion statue spouting water at Marina Bay".into(),
                },
                // size placeholders are too short to be captions
                InlineImage {
                    path: "icon.png".into(),
                    alt_text: "150px x 150px".into(),
                },
            ],
        },
        WikiArticle {
            title: "Kopitiam".into(),
            body: "A kopitiam is a traditional coffee shop.".into(),
            cover_image: None,
            inline_images: Vec::new(),
        },
    ];
    let built = build_all(&articles, &mut ChaCha8Rng::seed_from_u64(2024));
    for (i, pair) in built.pairs.iter().enumerate() {
        println!("{}", serde_json::to_string(&pair.to_conversation(format!("wiki-{i:05}"))).unwrap());
    }
    println!("{:?}", built.summary);
}
