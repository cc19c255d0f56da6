//! Deduplicate a meme manifest, carve out the Singapore hold-out accounts and
//! print per-dataset counts.
//!
//! cargo run -p memesentinel --example dataset_prep

use memesentinel::dataset::{
    build_validation_split, corpus_stats, dedup_by_filename, parse_manifest, SplitSpec, SG_VALIDATION_ACCOUNTS,
};

fn main() {
    let mut lines = Vec::new();
    let mut id = 0;
    let mut push = |dataset: &str, file: &str, sg: bool| {
        id += 1;
        lines.push(format!(
            r#"{{"id":"m{id}","dataset":"{dataset}","path":"{dataset}/{file}","sg_context":{sg}}}"#
        ));
    };
    for (i, account) in SG_VALIDATION_ACCOUNTS.iter().enumerate() {
        for k in 0..=i {
            push(account, &format!("{k}.jpg"), true);
        }
    }
    for k in 0..6 {
        push("reddit-memes", &format!("{k}.jpg"), false);
    }
    // a re-scraped file and a cross-dataset name collision
    push("reddit-memes", "0.jpg", false);
    push("facebook-hateful", "0.jpg", false);

    let (samples, diagnostics) = parse_manifest(&lines.join("\n"));
    println!("parsed {} samples, {} diagnostics", samples.len(), diagnostics.len());

    let dedup = dedup_by_filename(samples);
    println!("dedup removed {} within-dataset duplicate(s)", dedup.removed);

    let split = build_validation_split(dedup.samples, &SplitSpec::sg_holdout()).expect("hold-out accounts present");
    println!("train {} / validation {}\n", split.train.len(), split.validation.len());

    let all: Vec<_> = split.train.iter().chain(&split.validation).cloned().collect();
    print!("{}", corpus_stats(&all).render_table());
}
