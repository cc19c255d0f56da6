use std::collections::HashSet;

use memesentinel::dataset::{
    build_validation_split, corpus_stats, dedup_by_filename, parse_manifest, CorpusStats, HarmLabel, MemeSample,
    SplitSpec,
};
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = MemeSample> {
    (0u32..1000, 0usize..5, 0u32..12, any::<bool>(), proptest::option::of(any::<bool>())).prop_map(
        |(id, ds, file, sg, harmful)| {
            let dataset = format!("ds{ds}");
            let mut s = MemeSample::new(format!("id{id}"), dataset.clone(), format!("{dataset}/img{file}.jpg"));
            s.sg_context = sg;
            s.human_label = harmful.map(|h| HarmLabel {
                harmful: Some(h),
                ..HarmLabel::default()
            });
            s
        },
    )
}

fn corpus() -> impl Strategy<Value = Vec<MemeSample>> {
    proptest::collection::vec(sample_strategy(), 0..80)
}

fn key(s: &MemeSample) -> (String, String) {
    (s.dataset.clone(), s.file_name())
}

proptest! {
    #[test]
    fn dedup_is_idempotent(samples in corpus()) {
        let once = dedup_by_filename(samples);
        let twice = dedup_by_filename(once.samples.clone());
        prop_assert_eq!(twice.removed, 0);
        prop_assert_eq!(twice.samples, once.samples);
    }

    #[test]
    fn dedup_keeps_first_of_each_key_in_order(samples in corpus()) {
        let n = samples.len();
        let distinct: HashSet<_> = samples.iter().map(key).collect();
        let mut seen = HashSet::new();
        let expected: Vec<MemeSample> = samples.iter().filter(|s| seen.insert(key(s))).cloned().collect();
        let out = dedup_by_filename(samples);
        prop_assert_eq!(out.samples.len(), distinct.len());
        prop_assert_eq!(out.removed, n - distinct.len());
        prop_assert_eq!(out.samples, expected);
    }

    #[test]
    fn split_is_a_partition(samples in corpus(), held in proptest::collection::btree_set(0usize..5, 0..3)) {
        let names: Vec<String> = held.iter().map(|d| format!("ds{d}")).collect();
        let present: HashSet<&str> = samples.iter().map(|s| s.dataset.as_str()).collect();
        let spec = SplitSpec::new(names.clone());
        let result = build_validation_split(samples.clone(), &spec);
        if names.iter().all(|n| present.contains(n.as_str())) {
            let split = result.unwrap();
            prop_assert_eq!(split.train.len() + split.validation.len(), samples.len());
            prop_assert!(split.validation.iter().all(|s| names.contains(&s.dataset)));
            prop_assert!(split.train.iter().all(|s| !names.contains(&s.dataset)));
            // relative order survives on both sides
            let ids: Vec<&MemeSample> = samples.iter().filter(|s| names.contains(&s.dataset)).collect();
            prop_assert_eq!(split.validation.iter().collect::<Vec<_>>(), ids);
        } else {
            prop_assert!(result.is_err());
        }
    }

    #[test]
    fn stats_conserve_counts(samples in corpus()) {
        let stats = corpus_stats(&samples);
        prop_assert_eq!(stats.total, samples.len());
        prop_assert_eq!(stats.sg_total, samples.iter().filter(|s| s.sg_context).count());
        prop_assert_eq!(stats.rows.iter().map(|r| r.count).sum::<usize>(), stats.total);
        prop_assert!(stats.rows.iter().all(|r| r.sg_count <= r.count && r.count > 0));
        prop_assert!(stats.rows.windows(2).all(|w| w[0].dataset < w[1].dataset));
        prop_assert_eq!(CorpusStats::parse_table(&stats.render_table()), Some(stats));
    }

    #[test]
    fn manifest_lines_round_trip(samples in corpus()) {
        let text: String = samples.iter().map(|s| s.to_manifest_line() + "\n").collect();
        let (parsed, diagnostics) = parse_manifest(&text);
        prop_assert!(diagnostics.is_empty());
        prop_assert_eq!(parsed, samples);
    }
}

#[test]
fn cross_dataset_name_collisions_survive() {
    let samples = vec![
        MemeSample::new("a", "one", "one/meme.jpg"),
        MemeSample::new("b", "two", "two/meme.jpg"),
        MemeSample::new("c", "one", "elsewhere/meme.jpg"),
    ];
    let out = dedup_by_filename(samples);
    assert_eq!(out.removed, 1);
    assert_eq!(out.samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
}

#[test]
fn bad_lines_are_reported_with_line_numbers() {
    let text = "{\"id\":\"a\",\"dataset\":\"d\",\"path\":\"d/a.png\",\"sg_context\":false}\nnot json\n\n{\"id\":\"\",\"dataset\":\"d\",\"path\":\"x\",\"sg_context\":true}\n";
    let (samples, diagnostics) = parse_manifest(text);
    assert_eq!(samples.len(), 1);
    assert_eq!(diagnostics.iter().map(|d| d.line).collect::<Vec<_>>(), [2, 4]);
}
