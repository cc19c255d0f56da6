//! Expand Singapore abbreviations in OCR text before language detection.
//!
//! cargo run -p memesentinel --example abbreviations -- "NSF book BTO liao"

use memesentinel::abbrev::{expand_abbreviations, AbbrevDict};

fn main() {
    let dict = AbbrevDict::singapore();
    let input = std::env::args().nth(1).unwrap_or_else(|| "when NS ends and CPF is still locked".into());
    println!("{} entries loaded", dict.len());
    println!("in:  {input}");
    println!("out: {}", expand_abbreviations(&input, &dict));
    // keys only match whole alphanumeric runs
    println!("INSIDE -> {}", expand_abbreviations("INSIDE", &dict));

    let custom = AbbrevDict::parse("# custom\nCCB\tChinatown Complex Building\n").unwrap();
    println!("{}", expand_abbreviations("meet at CCB", &custom));
}
