//! Instruction-tuning question/answer pairs built from scraped encyclopedia
//! articles: text-only pairs, cover-image pairs and inline-image alt-text
//! captions.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TEXT_TEMPLATES: [&str; 8] = [
    "What is {title}?",
    "Explain {title} in detail.",
    "Can you explain {title} to me?",
    "What exactly does {title} entail?",
    "Could you provide some insight into {title}?",
    "I'm curious about {title}, could you shed some light on it?",
    "Could you elaborate on {title} for me?",
    "What's the story behind {title}?",
];

pub const IMAGE_TEMPLATES: [&str; 9] = [
    "What is in this image?",
    "What is the story behind this image?",
    "Can you explain this image to me?",
    "What exactly does this image entail?",
    "Could you provide some insight into this image?",
    "Could you elaborate on this image for me?",
    "Can you give me a detailed rundown of this image?",
    "I'm curious about this image, could you shed some light on it?",
    "Explain this image in detail.",
];

/// Alt-texts shorter than this (in Unicode scalar values) are size
/// placeholders such as `150px x 150px`.
pub const MIN_ALT_TEXT_CHARS: usize = 20;

/// Marker for the image slot in serialized prompts.
pub const IMAGE_SLOT: &str = "<image>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineImage {
    pub path: String,
    pub alt_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiArticle {
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub cover_image: Option<String>,
    #[serde(default)]
    pub inline_images: Vec<InlineImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    TextOnly,
    CoverImage,
    AltText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub image: Option<String>,
    pub kind: QaKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WikiError {
    #[error("article has an empty title")]
    EmptyTitle,
    #[error("article {0:?} has an empty body")]
    EmptyBody(String),
    #[error("article {0:?} has no cover image")]
    MissingCover(String),
}

fn check_title(article: &WikiArticle) -> Result<(), WikiError> {
    if article.title.trim().is_empty() {
        Err(WikiError::EmptyTitle)
    } else {
        Ok(())
    }
}

fn pick<'a, R: Rng + ?Sized>(templates: &[&'a str], rng: &mut R) -> &'a str {
    templates[rng.random_range(0..templates.len())]
}

pub fn build_text_qa<R: Rng + ?Sized>(article: &WikiArticle, rng: &mut R) -> Result<QaPair, WikiError> {
    check_title(article)?;
    if article.body.trim().is_empty() {
        return Err(WikiError::EmptyBody(article.title.clone()));
    }
    Ok(QaPair {
        question: pick(&TEXT_TEMPLATES, rng).replace("{title}", &article.title),
        answer: article.body.clone(),
        image: None,
        kind: QaKind::TextOnly,
    })
}

pub fn build_cover_qa<R: Rng + ?Sized>(article: &WikiArticle, rng: &mut R) -> Result<QaPair, WikiError> {
    check_title(article)?;
    let cover = article
        .cover_image
        .as_ref()
        .ok_or_else(|| WikiError::MissingCover(article.title.clone()))?;
    if article.body.trim().is_empty() {
        return Err(WikiError::EmptyBody(article.title.clone()));
    }
    Ok(QaPair {
        question: pick(&IMAGE_TEMPLATES, rng).to_string(),
        answer: article.body.clone(),
        image: Some(cover.clone()),
        kind: QaKind::CoverImage,
    })
}

pub fn build_alt_text_qa<R: Rng + ?Sized>(article: &WikiArticle, rng: &mut R) -> Vec<QaPair> {
    article
        .inline_images
        .iter()
        .filter(|img| img.alt_text.chars().count() >= MIN_ALT_TEXT_CHARS)
        .map(|img| QaPair {
            question: pick(&IMAGE_TEMPLATES, rng).to_string(),
            answer: img.alt_text.clone(),
            image: Some(img.path.clone()),
            kind: QaKind::AltText,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSummary {
    pub text_only: usize,
    pub cover_image: usize,
    pub alt_text: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QaBuild {
    pub pairs: Vec<QaPair>,
    pub summary: QaSummary,
    /// Articles that yielded nothing, with the reason.
    pub skipped: Vec<WikiError>,
}

/// Runs all three constructors over every article. An article contributes a
/// cover pair when it has a cover image and a text-only pair otherwise, plus
/// one pair per qualifying inline image.
pub fn build_all<R: Rng + ?Sized>(articles: &[WikiArticle], rng: &mut R) -> QaBuild {
    let mut out = QaBuild::default();
    for article in articles {
        let main = if article.cover_image.is_some() {
            build_cover_qa(article, rng)
        } else {
            build_text_qa(article, rng)
        };
        let alt = if check_title(article).is_ok() {
            build_alt_text_qa(article, rng)
        } else {
            Vec::new()
        };
        match main {
            Ok(pair) => out.pairs.push(pair),
            Err(e) if alt.is_empty() => out.skipped.push(e),
            Err(_) => {}
        }
        out.pairs.extend(alt);
    }
    for p in &out.pairs {
        match p.kind {
            QaKind::TextOnly => out.summary.text_only += 1,
            QaKind::CoverImage => out.summary.cover_image += 1,
            QaKind::AltText => out.summary.alt_text += 1,
        }
    }
    out.summary.total = out.pairs.len();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

/// Single-turn fine-tuning record; when an image is attached the human turn
/// starts with the image slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub conversations: Vec<Turn>,
}

impl QaPair {
    pub fn prompt(&self) -> String {
        match self.image {
            Some(_) => format!("{IMAGE_SLOT}\n{}", self.question),
            None => self.question.clone(),
        }
    }

    pub fn to_conversation(&self, id: impl Into<String>) -> ConversationRecord {
        ConversationRecord {
            id: id.into(),
            image: self.image.clone(),
            conversations: vec![
                Turn {
                    from: "human".into(),
                    value: self.prompt(),
                },
                Turn {
                    from: "gpt".into(),
                    value: self.answer.clone(),
                },
            ],
        }
    }
}
