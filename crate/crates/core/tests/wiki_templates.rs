use memesentinel::wiki_qa::{
    build_all, build_cover_qa, build_text_qa, InlineImage, QaKind, WikiArticle, IMAGE_SLOT, IMAGE_TEMPLATES,
    TEXT_TEMPLATES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn article(title: &str, cover: bool, alts: &[String]) -> WikiArticle {
    WikiArticle {
        title: title.to_string(),
        body: format!("{title} is in Singapore."),
        cover_image: cover.then(|| "cover.jpg".to_string()),
        inline_images: alts
            .iter()
            .enumerate()
            .map(|(i, a)| InlineImage {
                path: format!("{i}.jpg"),
                alt_text: a.clone(),
            })
            .collect(),
    }
}

/// Pearson chi-square statistic against a uniform distribution.
fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn text_templates_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let a = article("Merlion", false, &[]);
    let mut counts = [0usize; TEXT_TEMPLATES.len()];
    for _ in 0..10_000 {
        let q = build_text_qa(&a, &mut rng).unwrap().question;
        let idx = TEXT_TEMPLATES.iter().position(|t| t.replace("{title}", "Merlion") == q).unwrap();
        counts[idx] += 1;
    }
    // 7 degrees of freedom, p = 0.001
    assert!(chi_square(&counts) < 24.32, "{counts:?}");
}

#[test]
fn image_templates_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_001);
    let a = article("Merlion", true, &[]);
    let mut counts = [0usize; IMAGE_TEMPLATES.len()];
    for _ in 0..10_000 {
        let q = build_cover_qa(&a, &mut rng).unwrap().question;
        counts[IMAGE_TEMPLATES.iter().position(|t| *t == q).unwrap()] += 1;
    }
    // 8 degrees of freedom, p = 0.001
    assert!(chi_square(&counts) < 26.12, "{counts:?}");
}

fn alt() -> impl Strategy<Value = String> {
    prop_oneof![Just("150px x 150px".to_string()), "[a-zé ]{0,40}"]
}

proptest! {
    #[test]
    fn same_seed_same_pairs(
        titles in proptest::collection::vec("[A-Z][a-z]{1,10}", 1..8),
        alts in proptest::collection::vec(alt(), 0..6),
        seed in any::<u64>(),
    ) {
        let articles: Vec<WikiArticle> =
            titles.iter().enumerate().map(|(i, t)| article(t, i % 2 == 0, &alts)).collect();
        let a = build_all(&articles, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = build_all(&articles, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.summary.total, a.pairs.len());
        prop_assert_eq!(a.summary.cover_image + a.summary.text_only, articles.len());
        let eligible = alts.iter().filter(|x| x.chars().count() >= 20).count();
        prop_assert_eq!(a.summary.alt_text, eligible * articles.len());
    }

    #[test]
    fn questions_come_from_templates(title in "[A-Za-z ]{1,30}", seed in any::<u64>()) {
        prop_assume!(!title.trim().is_empty());
        let built = build_all(
            &[article(&title, false, &["A very long alternative text here".into()]), article(&title, true, &[])],
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        for p in &built.pairs {
            match p.kind {
                QaKind::TextOnly => {
                    let known = TEXT_TEMPLATES.iter().any(|t| t.replace("{title}", &title) == p.question);
                    prop_assert!(known, "unexpected question {:?}", p.question);
                    prop_assert!(!p.prompt().starts_with(IMAGE_SLOT));
                }
                QaKind::CoverImage | QaKind::AltText => {
                    prop_assert!(IMAGE_TEMPLATES.contains(&p.question.as_str()));
                    prop_assert_eq!(p.prompt(), format!("{IMAGE_SLOT}\n{}", p.question));
                }
            }
        }
    }
}
