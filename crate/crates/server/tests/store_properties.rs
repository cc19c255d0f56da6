use chrono::{TimeZone, Utc};
use memesentinel::{Decision, Harmfulness, Verdict};
use memesentinel_server::store::{ModerationRecord, Override, Store};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Step {
    Insert(Option<bool>),
    Override(usize, bool),
    Compact,
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    proptest::collection::vec(
        prop_oneof![
            4 => proptest::option::of(any::<bool>()).prop_map(Step::Insert),
            4 => (any::<usize>(), any::<bool>()).prop_map(|(i, d)| Step::Override(i, d)),
            1 => Just(Step::Compact),
        ],
        0..40,
    )
}

fn verdict(harmful: Option<bool>) -> Verdict {
    match harmful {
        None => Verdict::unresolved(4),
        Some(h) => Verdict {
            harmful: if h { Harmfulness::Yes } else { Harmfulness::No },
            score: if h { 0.9 } else { 0.1 },
            ..Verdict::unresolved(1)
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Replaying the log rebuilds exactly the state that was served, and the
    /// effective decision is always the latest override or the model verdict.
    #[test]
    fn reopen_reproduces_state(steps in steps(), compact_every in 0usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Store::open(&path, compact_every).unwrap();
        let mut ids: Vec<String> = Vec::new();
        for (n, step) in steps.iter().enumerate() {
            let at = Utc.timestamp_opt(1_700_000_000 + n as i64, 0).unwrap();
            match step {
                Step::Insert(h) => {
                    let r = store.insert(ModerationRecord::new(format!("h{n}"), verdict(*h), at)).unwrap();
                    ids.push(r.record_id);
                }
                Step::Override(i, d) if !ids.is_empty() => {
                    let entry = Override { decision: Decision::from_bool(*d), moderator_id: "m".into(), note: String::new(), at };
                    let r = store.add_override(&ids[i % ids.len()], entry).unwrap();
                    prop_assert_eq!(r.effective_decision, Decision::from_bool(*d).into());
                }
                Step::Override(..) => {}
                Step::Compact => store.compact().unwrap(),
            }
        }
        let live = store.snapshot();
        prop_assert_eq!(live.len(), ids.len());
        for r in &live {
            prop_assert_eq!(r.effective_decision, r.effective());
        }
        drop(store);
        let reopened = Store::open(&path, compact_every).unwrap();
        prop_assert_eq!(reopened.snapshot(), live);
    }
}
