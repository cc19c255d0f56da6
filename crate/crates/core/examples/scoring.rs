//! Score a verdict from the log-probabilities at the Yes/No position:
//! the Yes mass over the Yes plus No mass among the captured candidates.
//!
//! cargo run -p memesentinel --example scoring

use memesentinel::verdict::{compute_score, locate_class_token, TokenWeightTable, WeightEntry};
use memesentinel::vlm::{GeneratedToken, ModelResponse, TokenAlternative};
use memesentinel::Decision;

fn main() {
    let tokens = ["harmful", ":", " Yes"]
        .iter()
        .map(|t| GeneratedToken {
            token_text: t.to_string(),
            chosen_weight: if *t == " Yes" { 0.62 } else { 1.0 },
            alternatives: if *t == " Yes" {
                vec![
                    TokenAlternative { token_text: " Yes".into(), weight: 0.62 },
                    TokenAlternative { token_text: " No".into(), weight: 0.30 },
                    TokenAlternative { token_text: " yes".into(), weight: 0.05 },
                    TokenAlternative { token_text: " Maybe".into(), weight: 0.03 },
                ]
            } else {
                Vec::new()
            },
        })
        .collect();
    let response = ModelResponse::from_tokens(tokens);
    let class = locate_class_token(&response).unwrap();
    let table = TokenWeightTable::from_response(&response, class.position).unwrap();
    println!("class token {:?} at {}", class.class, class.position);
    println!("P(Yes) = {:.4}", compute_score(&table, Decision::Yes).unwrap());
    println!("P(No)  = {:.4}", compute_score(&table, Decision::No).unwrap());

    let manual = TokenWeightTable::new(
        0,
        vec![
            WeightEntry { token_text: "▁No".into(), weight: 0.8 },
            WeightEntry { token_text: "▁Yes".into(), weight: 0.1 },
        ],
    );
    println!("sentencepiece markers: P(Yes) = {:.4}", compute_score(&manual, Decision::Yes).unwrap());
}
