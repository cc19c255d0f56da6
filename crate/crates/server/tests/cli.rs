//! The command-line front end, run in-process with captured stdio.

use std::path::{Path, PathBuf};

use clap::Parser;
use memesentinel::dataset::CorpusStats;
use memesentinel_server::cli::{run, Cli, Console, EXIT_DIAGNOSTICS, EXIT_ERROR, EXIT_OK, EXIT_UNRESOLVED};
use serde_json::Value;

struct Output {
    code: i32,
    out: String,
    err: String,
}

async fn cli(args: &[&str], stdin: &str, env: &[(&str, &str)]) -> Output {
    let parsed = Cli::try_parse_from(std::iter::once("memesentinel").chain(args.iter().copied())).unwrap();
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut con = Console {
        stdin: &mut input,
        out: &mut out,
        err: &mut err,
        env: env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    };
    let code = run(parsed, &mut con).await;
    Output {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

fn fx(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[tokio::test]
async fn classify_exit_codes() {
    let dir = fx("");
    let ok = cli(&["--mock", "--fixtures", &dir, "classify", &fx("chinese.png")], "", &[]).await;
    assert_eq!(ok.code, EXIT_OK, "{}", ok.err);
    assert!(ok.out.contains("harmful: Yes"), "{}", ok.out);
    assert!(ok.out.contains("score: 0.9000"));

    let unresolved = cli(&["--mock", "--fixtures", &dir, "classify", &fx("retry.png")], "", &[]).await;
    assert_eq!(unresolved.code, EXIT_OK, "the retry fixture resolves on attempt two");

    let failure = cli(&["--mock", "--fixtures", &dir, "--json", "classify", &fx("failure.png")], "", &[]).await;
    assert_eq!(failure.code, EXIT_ERROR);
    let body: Value = serde_json::from_str(&failure.out).unwrap();
    assert_eq!(body["verdict"]["harmful"], "Unresolved");

    let missing = cli(&["--mock", "classify", "/no/such/file.png"], "", &[]).await;
    assert_eq!(missing.code, EXIT_ERROR);
    assert!(!missing.err.is_empty());
}

#[tokio::test]
async fn exhausted_retries_exit_unresolved() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("default.json"),
        r#"{"vlm": [{"reply": "I cannot help with that.", "yes": 0, "no": 0}]}"#,
    )
    .unwrap();
    let out = cli(&["--mock", "--fixtures", &s(tmp.path()), "classify", &fx("no_text.png")], "", &[]).await;
    // no_text has its own fixture in the pipeline set, not here, so the default applies
    assert_eq!(out.code, EXIT_UNRESOLVED, "{}{}", out.out, out.err);
    assert!(out.out.contains("attempts: 4"));
}

#[tokio::test]
async fn dry_run_shows_plan_without_calls() {
    let out = cli(&["--mock", "--dry-run", "--json", "classify", "--no-ocr", &fx("english.png")], "", &[]).await;
    assert_eq!(out.code, EXIT_OK, "{}", out.err);
    let plan: Value = serde_json::from_str(&out.out).unwrap();
    assert_eq!(plan["endpoints"]["ocr"], Value::Null);
    assert_eq!(plan["plan"]["stages"], serde_json::json!(["prompt", "vlm", "verdict"]));
    assert!(!plan["plan"]["prompt"].as_str().unwrap().contains("The text in this meme"));
    assert_eq!(plan["plan"]["max_attempts"], 4);
}

#[tokio::test]
async fn expand_reads_stdin() {
    let out = cli(&["expand"], "NS", &[]).await;
    assert_eq!((out.code, out.out.as_str()), (EXIT_OK, "National Service\n"));
    let out = cli(&["expand", "-"], "INSIDE the MRT\n", &[]).await;
    assert_eq!(out.out, "INSIDE the Mass Rapid Transit\n");
    let out = cli(&["expand", "book BTO"], "", &[]).await;
    assert_eq!(out.out, "book Build-To-Order flat\n");
}

fn write_articles(dir: &Path) -> PathBuf {
    let path = dir.join("articles.jsonl");
    let lines = [
        r#"{"title": "Merlion", "body": "A statue.", "cover_image": "m.jpg", "inline_images": [{"path": "a.jpg", "alt_text": "The Merlion spouting water at dusk"}, {"path": "b.jpg", "alt_text": "150px x 150px"}]}"#,
        r#"{"title": "Kopitiam", "body": "A coffee shop."}"#,
    ];
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[tokio::test]
async fn wiki_qa_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let articles = s(&write_articles(tmp.path()));
    let (a, b) = (s(&tmp.path().join("a.jsonl")), s(&tmp.path().join("b.jsonl")));
    let first = cli(&["wiki-qa", &articles, "--seed", "42", "--out", &a], "", &[]).await;
    let second = cli(&["wiki-qa", &articles, "--seed", "42", "--out", &b], "", &[]).await;
    assert_eq!((first.code, second.code), (EXIT_OK, EXIT_OK));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(first.out, "text_only 1\ncover_image 1\nalt_text 1\ntotal 3\n");

    let ci = cli(&["wiki-qa", &articles, "--out", &a], "", &[("CI", "true")]).await;
    assert_eq!(ci.code, EXIT_ERROR);
    let unseeded = cli(&["wiki-qa", &articles, "--out", &a], "", &[]).await;
    assert_eq!(unseeded.code, EXIT_OK);
    assert!(unseeded.err.contains("using seed"));
}

fn line(id: &str, dataset: &str, file: &str, harmful: Option<&str>) -> String {
    let mut v = serde_json::json!({"id": id, "dataset": dataset, "path": file, "sg_context": dataset.starts_with('@')});
    if let Some(h) = harmful {
        v["harmful"] = h.into();
    }
    v.to_string()
}

#[tokio::test]
async fn dataset_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    let lines = [
        line("1", "@tkk.jc", "x/a.jpg", None),
        line("2", "@tkk.jc", "y/a.jpg", None),
        line("3", "general", "a.jpg", None),
        line("4", "general", "b.jpg", None),
    ];
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let m = s(&manifest);

    let stats = cli(&["dataset", "stats", &m], "", &[]).await;
    assert_eq!(stats.code, EXIT_OK);
    let table = CorpusStats::parse_table(&stats.out).unwrap();
    assert_eq!((table.total, table.sg_total, table.rows.len()), (4, 2, 2));

    let dedup_out = s(&tmp.path().join("dedup.jsonl"));
    let dedup = cli(&["dataset", "dedup", &m, "--out", &dedup_out], "", &[]).await;
    assert_eq!(dedup.out, "kept 3\nremoved 1\n");
    assert_eq!(std::fs::read_to_string(&dedup_out).unwrap().lines().count(), 3);

    let split_dir = tmp.path().join("split");
    let split = cli(&["dataset", "split", &dedup_out, "--validation", "@tkk.jc", "--out", &s(&split_dir)], "", &[]).await;
    assert_eq!(split.out, "train 2\nvalidation 1\n");
    assert_eq!(std::fs::read_to_string(split_dir.join("validation.jsonl")).unwrap().lines().count(), 1);

    // the default hold-out needs all four accounts
    assert_eq!(cli(&["dataset", "split", &m], "", &[]).await.code, EXIT_ERROR);

    std::fs::write(&manifest, format!("{}\nbroken\n", lines.join("\n"))).unwrap();
    let strict = cli(&["dataset", "stats", &m], "", &[]).await;
    assert_eq!(strict.code, EXIT_DIAGNOSTICS);
    assert!(strict.err.contains(":5:"), "{}", strict.err);
    assert_eq!(cli(&["dataset", "stats", &m, "--lenient"], "", &[]).await.code, EXIT_OK);
    assert_eq!(cli(&["dataset", "stats", "/no/such.jsonl"], "", &[]).await.code, EXIT_ERROR);
}

#[tokio::test]
async fn eval_with_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("eval.jsonl");
    let lines = [
        line("e", "general", &fx("english.png"), Some("no")),
        line("c", "general", &fx("chinese.png"), Some("yes")),
        line("m", "general", &fx("malay.png"), Some("yes")),
    ];
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let out_dir = tmp.path().join("report");
    let out = cli(
        &["--mock", "--fixtures", &fx(""), "--json", "eval", &s(&manifest), "--limit", "2", "--out", &s(&out_dir)],
        "",
        &[],
    )
    .await;
    assert_eq!(out.code, EXIT_OK, "{}", out.err);
    let body: Value = serde_json::from_str(&out.out).unwrap();
    assert_eq!(body["report"]["n"], 2);
    assert_eq!(body["report"]["accuracy"], 1.0);
    assert_eq!(body["report"]["auroc"], 1.0);
    assert_eq!(std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap().lines().count(), 2);
    assert!(out_dir.join("report.txt").exists() && out_dir.join("report.json").exists());

    let all = cli(&["--mock", "--fixtures", &fx(""), "--json", "eval", &s(&manifest)], "", &[]).await;
    let body: Value = serde_json::from_str(&all.out).unwrap();
    assert_eq!(body["report"]["n"], 3);
    assert!((body["report"]["accuracy"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[tokio::test]
async fn label_gen_writes_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    std::fs::write(&manifest, [line("a/1", "general", &fx("english.png"), Some("yes"))].join("\n")).unwrap();
    let out_dir = tmp.path().join("req");
    let out = cli(&["label-gen", &s(&manifest), "--out", &s(&out_dir), "--embed"], "", &[]).await;
    assert_eq!(out.code, EXIT_OK, "{}", out.err);
    let body: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("a_1.json")).unwrap()).unwrap();
    assert_eq!(body["request"]["model"], "gpt-4-1106-vision-preview");
    let text = body.to_string();
    assert!(text.contains("data:image/png;base64,"));
    assert!(text.contains("I cannot see this picture."));

    let dry = cli(&["--dry-run", "label-gen", &s(&manifest), "--out", &s(&tmp.path().join("none"))], "", &[]).await;
    assert_eq!(dry.code, EXIT_OK);
    assert!(!tmp.path().join("none").exists());
}

#[tokio::test]
async fn serve_dry_run_prints_config() {
    let out = cli(&["--mock", "--dry-run", "serve", "--bind", "127.0.0.1:9999"], "", &[]).await;
    assert_eq!(out.code, EXIT_OK, "{}", out.err);
    assert!(out.out.contains("bind = \"127.0.0.1:9999\""), "{}", out.out);
    assert!(out.out.contains("mock = true"));
}
