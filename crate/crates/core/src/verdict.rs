//! Turning a model reply into a verdict: tolerant YAML field extraction,
//! locating the classification token, and the class-ratio harmfulness score.
//!
//! Token weights are probabilities (`exp` of the captured log-probabilities)
//! at the located position. The score of a class is the summed weight of that
//! class's token variants over the summed weight of all yes/no variants among
//! the captured alternatives; tokens of neither class are ignored.

use serde::{Deserialize, Serialize};

use crate::decision::Decision;
use crate::vlm::ModelResponse;

// ---------------------------------------------------------------------------
// class tokens

/// Leading markers tokenizers use for a preceding space or byte
/// (SentencePiece `▁`, byte-level BPE `Ġ`/`Ċ`/`ĉ`, and a plain underscore).
const SPACE_MARKERS: [char; 5] = ['▁', 'Ġ', 'Ċ', 'ĉ', '_'];

/// Strips whitespace and leading space markers, then lowercases.
pub fn normalize_token(token: &str) -> String {
    token
        .trim()
        .trim_start_matches(|c: char| c.is_whitespace() || SPACE_MARKERS.contains(&c))
        .trim_end()
        .to_lowercase()
}

pub fn token_class(token: &str) -> Option<Decision> {
    match normalize_token(token).as_str() {
        "yes" => Some(Decision::Yes),
        "no" => Some(Decision::No),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassToken {
    pub position: usize,
    pub class: Decision,
}

/// Last generated token that reads `yes` or `no` after normalization.
pub fn locate_class_token(response: &ModelResponse) -> Option<ClassToken> {
    response
        .tokens
        .iter()
        .enumerate()
        .rev()
        .find_map(|(position, t)| {
            token_class(&t.token_text).map(|class| ClassToken { position, class })
        })
}

// ---------------------------------------------------------------------------
// scoring

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub token_text: String,
    pub weight: f64,
}

/// Candidate tokens captured at one generation position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeightTable {
    pub position: usize,
    pub entries: Vec<WeightEntry>,
}

impl TokenWeightTable {
    pub fn new(position: usize, entries: Vec<WeightEntry>) -> Self {
        Self { position, entries }
    }

    /// Alternatives at `position`, plus the chosen token when the backend
    /// did not list it among them. `None` if the position is out of range.
    pub fn from_response(response: &ModelResponse, position: usize) -> Option<Self> {
        let token = response.tokens.get(position)?;
        let mut entries: Vec<WeightEntry> = token
            .alternatives
            .iter()
            .map(|a| WeightEntry {
                token_text: a.token_text.clone(),
                weight: a.weight,
            })
            .collect();
        if !entries.iter().any(|e| e.token_text == token.token_text) {
            entries.push(WeightEntry {
                token_text: token.token_text.clone(),
                weight: token.chosen_weight,
            });
        }
        Some(Self { position, entries })
    }

    pub fn class_entries(&self, class: Decision) -> impl Iterator<Item = &WeightEntry> {
        self.entries
            .iter()
            .filter(move |e| token_class(&e.token_text) == Some(class))
    }

    pub fn class_sum(&self, class: Decision) -> f64 {
        self.class_entries(class).map(|e| e.weight).sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("no yes/no weight at position {0}")]
    Degenerate(usize),
    #[error("token {token:?} has invalid weight {weight}")]
    InvalidWeight { token: String, weight: f64 },
}

/// Share of `class` among all yes/no weight in the table.
pub fn compute_score(table: &TokenWeightTable, class: Decision) -> Result<f64, ScoreError> {
    for e in &table.entries {
        if token_class(&e.token_text).is_some() && !(e.weight.is_finite() && e.weight >= 0.0) {
            return Err(ScoreError::InvalidWeight {
                token: e.token_text.clone(),
                weight: e.weight,
            });
        }
    }
    let yes = table.class_sum(Decision::Yes);
    let no = table.class_sum(Decision::No);
    let total = yes + no;
    if total <= 0.0 {
        return Err(ScoreError::Degenerate(table.position));
    }
    let share = match class {
        Decision::Yes => yes / total,
        Decision::No => no / total,
    };
    Ok(share.clamp(0.0, 1.0))
}

/// Probability-like score that the meme is harmful.
pub fn harmful_score(table: &TokenWeightTable) -> Result<f64, ScoreError> {
    compute_score(table, Decision::Yes)
}

/// Locates the class token and scores it. `None` means the response cannot
/// be classified (no class token, or no usable weights at its position).
pub fn score_response(response: &ModelResponse) -> Option<(ClassToken, f64)> {
    let located = locate_class_token(response)?;
    let table = TokenWeightTable::from_response(response, located.position)?;
    let score = harmful_score(&table).ok()?;
    Some((located, score))
}

// ---------------------------------------------------------------------------
// YAML extraction

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YamlVerdict {
    pub description: String,
    pub victim_groups: Vec<String>,
    pub methods_of_attack: Vec<String>,
    /// The `harmful` value exactly as written (unquoted, trimmed).
    pub harmful_field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no YAML mapping with a description or harmful key found")]
pub struct NoYaml;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Description,
    Harmful,
    VictimGroups,
    MethodsOfAttack,
}

fn field_for(key: &str) -> Option<Field> {
    match key {
        "description" | "meme_description" => Some(Field::Description),
        "harmful" | "is_harmful" | "harmfulness" => Some(Field::Harmful),
        "victim_groups" | "victim_group" | "victims" | "victim" | "target_groups" => Some(Field::VictimGroups),
        "methods_of_attack" | "method_of_attack" | "methods_of_attacks" | "attack_methods" | "methods"
        | "attack_method" => Some(Field::MethodsOfAttack),
        _ => None,
    }
}

fn indent_of(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 4 } else { 1 })
        .sum()
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// `key: value` split. Keys may be quoted or wrapped in markdown emphasis.
fn split_key(line: &str) -> Option<(String, &str)> {
    let content = line.trim_start();
    if content.starts_with('-') || content.starts_with('#') {
        return None;
    }
    let colon = content
        .char_indices()
        .find(|&(i, c)| c == ':' && content[i + 1..].chars().next().is_none_or(char::is_whitespace))
        .map(|(i, _)| i)?;
    let raw_key = content[..colon].trim().trim_matches(|c| c == '"' || c == '\'' || c == '*').trim();
    if raw_key.is_empty() {
        return None;
    }
    let key: String = raw_key
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect();
    if !key.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return None;
    }
    Some((key, content[colon + 1..].trim()))
}

fn is_list_item(line: &str) -> bool {
    let t = line.trim_start();
    t == "-" || t.starts_with("- ") || t.starts_with("-\t")
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    if s.len() >= 2 {
        let (first, last) = (s.as_bytes()[0], s.as_bytes()[s.len() - 1]);
        if first == b'"' && last == b'"' {
            return s[1..s.len() - 1].replace("\\\"", "\"").replace("\\n", "\n");
        }
        if first == b'\'' && last == b'\'' {
            return s[1..s.len() - 1].replace("''", "'");
        }
    }
    s.to_string()
}

fn is_null(s: &str) -> bool {
    matches!(
        s.trim().to_ascii_lowercase().as_str(),
        "" | "~" | "null" | "none" | "n/a" | "[]" | "nil" | "-"
    )
}

fn split_flow_list(s: &str) -> Vec<String> {
    let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
    let mut items = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    for c in inner.chars() {
        match (quote, c) {
            (Some(q), c) if c == q => {
                quote = None;
                current.push(c);
            }
            (None, '"' | '\'') => {
                quote = Some(c);
                current.push(c);
            }
            (None, ',') => items.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    items.push(current);
    items
        .into_iter()
        .map(|i| unquote(&i))
        .filter(|i| !is_null(i))
        .collect()
}

enum RawValue {
    Scalar(String),
    List(Vec<String>),
}

fn interpret(inline: &str, children: &[&str]) -> RawValue {
    let child_text = || {
        children
            .iter()
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .collect::<Vec<_>>()
    };
    if inline.starts_with('[') {
        let mut flow = inline.to_string();
        for c in children {
            flow.push(' ');
            flow.push_str(c.trim());
        }
        return RawValue::List(split_flow_list(&flow));
    }
    if inline.starts_with('|') || inline.starts_with('>') {
        let sep = if inline.starts_with('|') { "\n" } else { " " };
        return RawValue::Scalar(child_text().join(sep));
    }
    if inline.is_empty() {
        let lines = child_text();
        if lines.first().is_some_and(|l| is_list_item(l)) {
            let mut items: Vec<String> = Vec::new();
            for l in lines {
                if is_list_item(l) {
                    items.push(l.trim_start()[1..].trim().to_string());
                } else if let Some(last) = items.last_mut() {
                    last.push(' ');
                    last.push_str(l);
                }
            }
            return RawValue::List(
                items
                    .into_iter()
                    .map(|i| unquote(&i))
                    .filter(|i| !is_null(i))
                    .collect(),
            );
        }
        return RawValue::Scalar(lines.join(" "));
    }
    let mut scalar = inline.to_string();
    for c in child_text() {
        scalar.push(' ');
        scalar.push_str(c);
    }
    RawValue::Scalar(unquote(&scalar))
}

fn as_list(v: RawValue) -> Vec<String> {
    match v {
        RawValue::List(items) => items,
        RawValue::Scalar(s) if is_null(&s) => Vec::new(),
        RawValue::Scalar(s) if s.trim_start().starts_with('[') => split_flow_list(&s),
        RawValue::Scalar(s) => s
            .split(',')
            .map(unquote)
            .filter(|p| !is_null(p))
            .collect(),
    }
}

fn as_scalar(v: RawValue) -> String {
    match v {
        RawValue::Scalar(s) => s,
        RawValue::List(items) => items.join(" "),
    }
}

/// Mapping block starting at `start` whose keys sit at `base` indent.
fn block_end(lines: &[&str], start: usize, base: usize) -> usize {
    let mut end = start + 1;
    while end < lines.len() {
        let line = lines[end];
        if is_fence(line) {
            break;
        }
        if !line.trim().is_empty() {
            let indent = indent_of(line);
            if indent < base {
                break;
            }
            if indent == base && split_key(line).is_none() && !is_list_item(line) {
                break;
            }
        }
        end += 1;
    }
    end
}

fn parse_block(lines: &[&str], base: usize) -> (YamlVerdict, bool) {
    let mut verdict = YamlVerdict::default();
    let mut anchored = false;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let key = (indent_of(line) == base).then(|| split_key(line)).flatten();
        let Some((key, inline)) = key else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < lines.len() {
            let next = lines[j];
            let top_level_key = indent_of(next) == base && split_key(next).is_some();
            if top_level_key {
                break;
            }
            j += 1;
        }
        let children: Vec<&str> = lines[i + 1..j]
            .iter()
            .copied()
            .filter(|l| !l.trim_start().starts_with('#'))
            .collect();
        let value = interpret(inline, &children);
        match field_for(&key) {
            Some(Field::Description) => {
                anchored = true;
                verdict.description = as_scalar(value);
            }
            Some(Field::Harmful) => {
                anchored = true;
                let raw = as_scalar(value);
                verdict.harmful_field = (!raw.trim().is_empty()).then(|| raw.trim().to_string());
            }
            Some(Field::VictimGroups) => verdict.victim_groups = as_list(value),
            Some(Field::MethodsOfAttack) => verdict.methods_of_attack = as_list(value),
            None => {}
        }
        i = j;
    }
    (verdict, anchored)
}

/// Extracts the verdict fields from the first YAML mapping in `text` that
/// has a `description` or `harmful` key. Tab and space indentation are both
/// accepted; prose and code fences around the mapping are ignored; missing
/// fields come back empty.
pub fn parse_yaml_verdict(text: &str) -> Result<YamlVerdict, NoYaml> {
    let lines: Vec<&str> = text.lines().collect();
    for start in 0..lines.len() {
        let Some((key, _)) = split_key(lines[start]) else {
            continue;
        };
        if field_for(&key).is_none() {
            continue;
        }
        let base = indent_of(lines[start]);
        let end = block_end(&lines, start, base);
        let (verdict, anchored) = parse_block(&lines[start..end], base);
        if anchored {
            return Ok(verdict);
        }
    }
    Err(NoYaml)
}

// ---------------------------------------------------------------------------
// verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Harmfulness {
    Yes,
    No,
    Unresolved,
}

impl Harmfulness {
    pub fn decision(self) -> Option<Decision> {
        match self {
            Harmfulness::Yes => Some(Decision::Yes),
            Harmfulness::No => Some(Decision::No),
            Harmfulness::Unresolved => None,
        }
    }
}

impl From<Decision> for Harmfulness {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Yes => Harmfulness::Yes,
            Decision::No => Harmfulness::No,
        }
    }
}

pub const UNRESOLVED_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub harmful: Harmfulness,
    /// Harmful-class score in [0, 1].
    pub score: f64,
    pub description: String,
    pub victim_groups: Vec<String>,
    pub methods_of_attack: Vec<String>,
    /// Whether YAML fields were extracted, independent of token location.
    pub parse_ok: bool,
    pub attempts: u32,
}

impl Verdict {
    pub fn unresolved(attempts: u32) -> Self {
        assemble_verdict(None, None, attempts)
    }

    pub fn is_resolved(&self) -> bool {
        self.harmful != Harmfulness::Unresolved
    }
}

pub fn assemble_verdict(
    parsed: Option<YamlVerdict>,
    located: Option<(ClassToken, f64)>,
    attempts: u32,
) -> Verdict {
    let parse_ok = parsed.is_some();
    let fields = parsed.unwrap_or_default();
    let (harmful, score) = match located {
        Some((token, score)) => (Harmfulness::from(token.class), score),
        None => (Harmfulness::Unresolved, UNRESOLVED_SCORE),
    };
    Verdict {
        harmful,
        score,
        description: fields.description,
        victim_groups: fields.victim_groups,
        methods_of_attack: fields.methods_of_attack,
        parse_ok: located.is_some() && parse_ok,
        attempts,
    }
}
