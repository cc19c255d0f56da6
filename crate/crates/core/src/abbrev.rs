//! Singapore abbreviation expansion over OCR text.
//!
//! Keys match case-sensitively and only at token boundaries, where a token
//! boundary is a string edge or a switch between alphanumeric and
//! non-alphanumeric characters. Expansion is a single left-to-right pass;
//! at each position the longest matching key wins and produced text is never
//! rescanned.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Bundled dictionary of common Singapore abbreviations.
pub const SG_ABBREVIATIONS: &str = include_str!("../assets/sg_abbreviations.tsv");

#[derive(Debug, thiserror::Error)]
pub enum AbbrevError {
    #[error("cannot read dictionary {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected ABBREV<TAB>expansion")]
    MissingTab { line: usize },
    #[error("line {line}: empty abbreviation")]
    EmptyKey { line: usize },
    #[error("line {line}: {key:?} expands to itself")]
    SelfExpansion { line: usize, key: String },
    #[error("line {line}: duplicate abbreviation {key:?}")]
    DuplicateKey { line: usize, key: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbrevDict {
    entries: BTreeMap<String, String>,
    /// Keys grouped by first char, longest first.
    by_first: HashMap<char, Vec<String>>,
}

impl AbbrevDict {
    /// Builds a dictionary from pairs. Line numbers in errors are 1-based
    /// positions in `pairs`.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, AbbrevError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut dict = AbbrevDict::default();
        for (idx, (k, v)) in pairs.into_iter().enumerate() {
            dict.insert(idx + 1, k.into(), v.into())?;
        }
        Ok(dict)
    }

    fn insert(&mut self, line: usize, key: String, expansion: String) -> Result<(), AbbrevError> {
        if key.is_empty() {
            return Err(AbbrevError::EmptyKey { line });
        }
        if key == expansion {
            return Err(AbbrevError::SelfExpansion { line, key });
        }
        if self.entries.contains_key(&key) {
            return Err(AbbrevError::DuplicateKey { line, key });
        }
        let first = key.chars().next().expect("non-empty key");
        let bucket = self.by_first.entry(first).or_default();
        bucket.push(key.clone());
        bucket.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        self.entries.insert(key, expansion);
        Ok(())
    }

    /// Parses `ABBREV<TAB>expansion` lines. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, AbbrevError> {
        let mut dict = AbbrevDict::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (key, expansion) = raw.split_once('\t').ok_or(AbbrevError::MissingTab { line })?;
            dict.insert(line, key.trim().to_string(), expansion.trim().to_string())?;
        }
        Ok(dict)
    }

    /// The bundled Singapore dictionary.
    pub fn singapore() -> Self {
        Self::parse(SG_ABBREVIATIONS).expect("bundled dictionary is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AbbrevError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AbbrevError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Longest key that matches at byte offset `at` with valid boundaries on
    /// both sides.
    fn match_at(&self, text: &str, at: usize, prev: Option<char>) -> Option<&str> {
        let first = text[at..].chars().next()?;
        let candidates = self.by_first.get(&first)?;
        let left_ok = |key: &str| match prev {
            None => true,
            Some(p) => !(p.is_alphanumeric() && key.starts_with(char::is_alphanumeric)),
        };
        candidates
            .iter()
            .map(String::as_str)
            .filter(|key| text[at..].starts_with(key) && left_ok(key))
            .find(|key| {
                let end = at + key.len();
                match text[end..].chars().next() {
                    None => true,
                    Some(next) => {
                        let last = key.chars().next_back().expect("non-empty key");
                        !(next.is_alphanumeric() && last.is_alphanumeric())
                    }
                }
            })
    }
}

pub fn expand_abbreviations(text: &str, dict: &AbbrevDict) -> String {
    if dict.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut at = 0;
    while at < text.len() {
        if let Some(key) = dict.match_at(text, at, prev) {
            out.push_str(&dict.entries[key]);
            prev = key.chars().next_back();
            at += key.len();
        } else {
            let c = text[at..].chars().next().expect("in bounds");
            out.push(c);
            prev = Some(c);
            at += c.len_utf8();
        }
    }
    out
}
