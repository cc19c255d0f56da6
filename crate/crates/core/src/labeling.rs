//! Prompts for having a frontier VLM label memes, conditioned on whatever
//! partial human labels a source dataset provides, and parsing of the JSON it
//! answers with.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{HarmLabel, MemeSample};
use crate::decision::Decision;

/// Canonical labeling system prompt, byte-for-byte.
pub const LABEL_SYSTEM_PROMPT: &str = include_str!("../assets/label_system_prompt.txt");

pub const USER_PROMPT_PREFIX: &str = "I cannot see this picture.";
pub const TERMINAL_QUESTION: &str =
    "Could you describe this meme and tell me if and why this meme is harmful?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub image: String,
}

impl LabelRequest {
    /// Chat-completions request body: system turn, then a user turn with the
    /// image part ahead of the text part.
    pub fn to_chat_request(&self, model: &str, image_url: &str) -> Value {
        json!({
            "model": model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": [
                    {"type": "image_url", "image_url": {"url": image_url}},
                    {"type": "text", "text": self.user_prompt},
                ]},
            ],
        })
    }
}

/// Joins list items as `a`, `a and b`, `a, b and c`.
pub fn join_phrases(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// User prompt for a sample given its (possibly partial) human label.
///
/// Sentences are appended in a fixed order: rating, methods of attack, victim
/// groups, explanation. The closing question is only asked when no
/// harmful/not-harmful rating is known.
pub fn compose_user_prompt(label: Option<&HarmLabel>) -> String {
    user_prompt_parts(label).join(" ")
}

/// The individual sentences of [`compose_user_prompt`], in order.
pub fn user_prompt_parts(label: Option<&HarmLabel>) -> Vec<String> {
    let mut parts = vec![USER_PROMPT_PREFIX.to_string()];
    let empty = HarmLabel::default();
    let label = label.unwrap_or(&empty);
    if let Some(harmful) = label.harmful {
        let rating = if harmful { "harmful" } else { "not harmful" };
        parts.push(format!(
            "It's rated as {rating}. Could you describe this meme and explain why?"
        ));
    }
    if !label.methods_of_attack.is_empty() {
        parts.push(format!(
            "It uses {} to offend viewers.",
            join_phrases(&label.methods_of_attack)
        ));
    }
    if !label.victim_groups.is_empty() {
        parts.push(format!("It's targeted at {}", join_phrases(&label.victim_groups)));
    }
    if let Some(explanation) = &label.explanation {
        parts.push(format!("Others have said that it {explanation}"));
    }
    if label.harmful.is_none() {
        parts.push(TERMINAL_QUESTION.to_string());
    }
    parts
}

pub fn build_label_request(sample: &MemeSample) -> LabelRequest {
    LabelRequest {
        system_prompt: LABEL_SYSTEM_PROMPT.to_string(),
        user_prompt: compose_user_prompt(sample.human_label.as_ref()),
        image: sample.path.to_string_lossy().into_owned(),
    }
}

/// What the labeling model is asked to return.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GptLabelRecord {
    pub description: String,
    #[serde(default)]
    pub victim_groups: Vec<String>,
    #[serde(default)]
    pub methods_of_attack: Vec<String>,
    pub harmful: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable label response ({reason})")]
pub struct LabelParseError {
    pub reason: String,
    pub raw: String,
}

fn string_list(v: Option<&Value>) -> Result<Vec<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.clone()),
                other => Err(format!("list item is not a string: {other}")),
            })
            .collect(),
        Some(other) => Err(format!("expected a list, got {other}")),
    }
}

fn record_from_value(v: &Value) -> Result<GptLabelRecord, String> {
    let obj = v.as_object().ok_or("response is not a JSON object")?;
    let harmful = match obj.get("harmful") {
        Some(Value::String(s)) => s.parse::<Decision>().map_err(|e| e.to_string())?,
        Some(Value::Bool(b)) => Decision::from_bool(*b),
        Some(other) => return Err(format!("harmful has unexpected value {other}")),
        None => return Err("missing field harmful".into()),
    };
    let description = match obj.get("description") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(format!("description is not a string: {other}")),
    };
    Ok(GptLabelRecord {
        description,
        victim_groups: string_list(obj.get("victim_groups"))?,
        methods_of_attack: string_list(obj.get("methods_of_attack"))?,
        harmful,
    })
}

pub fn parse_label_response(text: &str) -> Result<GptLabelRecord, LabelParseError> {
    let fail = |reason: String| LabelParseError {
        reason,
        raw: text.to_string(),
    };
    let repaired = repair_json(text);
    let value: Value = serde_json::from_str(repaired.trim()).map_err(|e| fail(e.to_string()))?;
    record_from_value(&value).map_err(fail)
}

fn is_json_object(text: &str) -> bool {
    matches!(serde_json::from_str::<Value>(text.trim()), Ok(Value::Object(_)))
}

/// Best-effort deterministic repair of model-emitted JSON objects.
///
/// Handles unescaped double quotes inside string values, trailing commas,
/// raw control characters inside strings, and prose around the outermost
/// braces. If the result still does not parse as an object the input is
/// returned unchanged.
pub fn repair_json(text: &str) -> String {
    if is_json_object(text) {
        return text.to_string();
    }
    let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) else {
        return text.to_string();
    };
    if end < start {
        return text.to_string();
    }
    let candidate = &text[start..=end];
    if is_json_object(candidate) {
        return candidate.to_string();
    }
    let fixed = remove_trailing_commas(&escape_stray_quotes(candidate));
    if is_json_object(&fixed) {
        fixed
    } else {
        text.to_string()
    }
}

fn next_non_ws(chars: &[char], from: usize) -> Option<(usize, char)> {
    chars[from..]
        .iter()
        .enumerate()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, c)| (from + i, *c))
}

/// Can a JSON value (or the end of a container) start at `idx`?
fn value_starts_at(chars: &[char], idx: usize) -> bool {
    let Some(&c) = chars.get(idx) else {
        return false;
    };
    if matches!(c, '"' | '{' | '[' | '}' | ']' | '-') || c.is_ascii_digit() {
        return true;
    }
    let rest: String = chars[idx..].iter().take(5).collect();
    ["true", "false", "null"].iter().any(|lit| rest.starts_with(lit))
}

/// Inside a string, a quote closes it only when what follows looks like JSON
/// structure; otherwise it is escaped.
fn closes_string(chars: &[char], quote_idx: usize) -> bool {
    match next_non_ws(chars, quote_idx + 1) {
        None => true,
        Some((_, ':' | '}' | ']')) => true,
        Some((comma, ',')) => match next_non_ws(chars, comma + 1) {
            None => true,
            Some((idx, _)) => value_starts_at(chars, idx),
        },
        Some(_) => false,
    }
}

fn escape_stray_quotes(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            continue;
        }
        if escaped {
            escaped = false;
            out.push(c);
            continue;
        }
        match c {
            '\\' => {
                escaped = true;
                out.push(c);
            }
            '"' if closes_string(&chars, i) => {
                in_string = false;
                out.push(c);
            }
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn remove_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(c);
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' if matches!(next_non_ws(&chars, i + 1), Some((_, '}' | ']'))) => {}
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(harmful: Option<bool>, groups: &[&str], methods: &[&str], expl: Option<&str>) -> HarmLabel {
        HarmLabel {
            harmful,
            victim_groups: groups.iter().map(|s| s.to_string()).collect(),
            methods_of_attack: methods.iter().map(|s| s.to_string()).collect(),
            explanation: expl.map(str::to_string),
        }
    }

    #[test]
    fn unlabeled_sample_gets_prefix_and_question() {
        assert_eq!(
            compose_user_prompt(None),
            "I cannot see this picture. Could you describe this meme and tell me if and why this meme is harmful?"
        );
    }

    #[test]
    fn rating_suppresses_terminal_question() {
        let p = compose_user_prompt(Some(&label(Some(true), &["women"], &[], None)));
        assert_eq!(
            p,
            "I cannot see this picture. It's rated as harmful. Could you describe this meme and explain why? It's targeted at women"
        );
        assert!(!p.contains(TERMINAL_QUESTION));
    }

    #[test]
    fn explanation_only_keeps_question() {
        let p = compose_user_prompt(Some(&label(None, &[], &[], Some("mocks the elderly"))));
        assert_eq!(
            p,
            "I cannot see this picture. Others have said that it mocks the elderly Could you describe this meme and tell me if and why this meme is harmful?"
        );
    }

    #[test]
    fn phrase_joining() {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(join_phrases(&v(&[])), "");
        assert_eq!(join_phrases(&v(&["a"])), "a");
        assert_eq!(join_phrases(&v(&["a", "b"])), "a and b");
        assert_eq!(join_phrases(&v(&["a", "b", "c"])), "a, b and c");
    }

    #[test]
    fn adding_fields_only_drops_terminal_question() {
        let base = user_prompt_parts(Some(&label(None, &["women"], &[], None)));
        let richer = user_prompt_parts(Some(&label(Some(false), &["women"], &["shaming"], Some("x"))));
        for part in base.iter().filter(|p| *p != TERMINAL_QUESTION) {
            assert!(richer.contains(part), "{part:?} lost");
        }
    }

    #[test]
    fn repairs_inner_quotes() {
        assert_eq!(
            repair_json(r#"{"a": "he said "hi""}"#),
            r#"{"a": "he said \"hi\""}"#
        );
    }

    #[test]
    fn repair_is_identity_on_valid_and_braceless() {
        let valid = r#"{"a": [1, 2], "b": "x"}"#;
        assert_eq!(repair_json(valid), valid);
        assert_eq!(repair_json("no json here at all"), "no json here at all");
    }

    #[test]
    fn repairs_trailing_commas_and_surrounding_prose() {
        let raw = "Sure! Here you go:\n```json\n{\"a\": [1, 2,], \"b\": \"x\",}\n```\nHope it helps";
        assert_eq!(repair_json(raw), "{\"a\": [1, 2], \"b\": \"x\"}");
    }

    #[test]
    fn unrepairable_input_comes_back_unchanged() {
        let raw = "{ this is : not json }";
        assert_eq!(repair_json(raw), raw);
    }

    #[test]
    fn parses_well_formed_response() {
        let rec = parse_label_response(
            r#"{"description": "A cat", "victim_groups": [], "methods_of_attack": [], "harmful": "No"}"#,
        )
        .unwrap();
        assert_eq!(rec.description, "A cat");
        assert_eq!(rec.harmful, Decision::No);
    }

    #[test]
    fn parses_after_repair_and_normalizes_case() {
        let rec = parse_label_response(
            r#"{"description": "Text reads "go home"", "victim_groups": ["foreigners"], "methods_of_attack": ["xenophobia"], "harmful": "yes"}"#,
        )
        .unwrap();
        assert_eq!(rec.description, r#"Text reads "go home""#);
        assert_eq!(rec.harmful, Decision::Yes);
        assert_eq!(rec.victim_groups, vec!["foreigners"]);
    }

    #[test]
    fn unparseable_response_carries_raw_text() {
        let err = parse_label_response("I can't help with that.").unwrap_err();
        assert_eq!(err.raw, "I can't help with that.");
        let err = parse_label_response(r#"{"description": "x", "harmful": "perhaps"}"#).unwrap_err();
        assert!(err.reason.contains("perhaps"));
    }

    #[test]
    fn chat_request_puts_image_first() {
        let req = build_label_request(&MemeSample::new("1", "d", "a.png"));
        let body = req.to_chat_request("gpt-4-1106-vision-preview", "file://a.png");
        assert_eq!(body["messages"][0]["content"], LABEL_SYSTEM_PROMPT);
        assert_eq!(body["messages"][1]["content"][0]["type"], "image_url");
        assert_eq!(body["messages"][1]["content"][1]["text"], req.user_prompt);
    }
}
