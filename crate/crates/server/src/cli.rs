//! Command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 unresolved verdict (`classify`),
//! 3 completed with manifest diagnostics (without `--lenient`).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use memesentinel::abbrev::{expand_abbreviations, AbbrevDict};
use memesentinel::dataset::{
    build_validation_split, corpus_stats, dedup_by_filename, load_manifest, Manifest, SplitSpec,
};
use memesentinel::eval::evaluate;
use memesentinel::labeling::build_label_request;
use memesentinel::wiki_qa::{build_all, WikiArticle};
use memesentinel::{Harmfulness, Image, Verdict};
use rand::SeedableRng;
use serde_json::json;

use crate::api::{router, AppState};
use crate::assemble::{assemble, Endpoints};
use crate::config::{ConfigLayers, ServiceConfig};
use crate::store::Store;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNRESOLVED: i32 = 2;
pub const EXIT_DIAGNOSTICS: i32 = 3;

pub const DEFAULT_LABEL_MODEL: &str = "gpt-4-1106-vision-preview";

#[derive(Debug, Parser)]
#[command(name = "memesentinel", version, about = "Singapore-context meme moderation")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "MEMESENTINEL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Config override, e.g. `--set backends.vlm_url=http://host:8000`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Use fixture-driven mock backends.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Fixture directory for --mock.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Print the resolved plan and stop before any backend call or write.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one image.
    Classify {
        image: PathBuf,
        /// Leave OCR text out of the prompt.
        #[arg(long)]
        no_ocr: bool,
    },
    /// Evaluate a labeled manifest.
    Eval {
        manifest: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        /// Directory for report.json, report.txt and records.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        parallel: usize,
        #[arg(long)]
        lenient: bool,
    },
    /// Corpus operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Write one labeling request per sample.
    LabelGen {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_LABEL_MODEL)]
        model: String,
        /// Inline images as data URLs instead of file URLs.
        #[arg(long)]
        embed: bool,
        #[arg(long)]
        lenient: bool,
    },
    /// Build Wikipedia QA conversations from a JSONL file of articles.
    WikiQa {
        articles: PathBuf,
        /// Required when the CI environment variable is set.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand abbreviations in text, or stdin when the text is `-` or absent.
    Expand {
        #[arg(long)]
        dict: Option<PathBuf>,
        text: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    Dedup {
        manifest: PathBuf,
        /// Write the surviving records here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    Split {
        manifest: PathBuf,
        /// Validation datasets; the four Singapore hold-out accounts by default.
        #[arg(long = "validation", value_delimiter = ',')]
        validation: Vec<String>,
        /// Directory for train.jsonl and validation.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    Stats {
        manifest: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
}

/// Process-facing handles, injectable for tests.
pub struct Console<'a> {
    pub stdin: &'a mut dyn Read,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub env: Vec<(String, String)>,
}

impl Console<'_> {
    fn env_var(&self, name: &str) -> Option<&str> {
        self.env.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn fail(&mut self, message: impl std::fmt::Display) -> i32 {
        let _ = writeln!(self.err, "error: {message}");
        EXIT_ERROR
    }

    fn emit_json(&mut self, value: &serde_json::Value) {
        let _ = writeln!(self.out, "{}", serde_json::to_string_pretty(value).unwrap_or_default());
    }
}

fn in_ci(con: &Console<'_>) -> bool {
    con.env_var("CI").is_some_and(|v| !v.is_empty() && v != "0" && !v.eq_ignore_ascii_case("false"))
}

fn service_config(cli: &Cli, con: &Console<'_>, extra: &[String]) -> Result<ServiceConfig, crate::config::ConfigError> {
    let mut overrides = Vec::new();
    if cli.mock {
        overrides.push("backends.mock=true".to_string());
    }
    if let Some(f) = &cli.fixtures {
        overrides.push(format!("backends.fixtures={}", toml_string(&f.display().to_string())));
    }
    overrides.extend(cli.set.iter().cloned());
    overrides.extend(extra.iter().cloned());
    ConfigLayers::new()
        .file(cli.config.as_ref())
        .env(con.env.clone())
        .overrides(overrides)
        .build()
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub async fn run(cli: Cli, con: &mut Console<'_>) -> i32 {
    match &cli.command {
        Command::Classify { image, no_ocr } => classify(&cli, image, *no_ocr, con).await,
        Command::Eval {
            manifest,
            limit,
            out,
            parallel,
            lenient,
        } => eval(&cli, manifest, *limit, out.as_deref(), *parallel, *lenient, con).await,
        Command::Dataset { action } => dataset(&cli, action, con),
        Command::LabelGen {
            manifest,
            out,
            model,
            embed,
            lenient,
        } => label_gen(&cli, manifest, out, model, *embed, *lenient, con),
        Command::WikiQa { articles, seed, out } => wiki_qa(&cli, articles, *seed, out, con),
        Command::Expand { dict, text } => expand(&cli, dict.as_deref(), text.as_deref(), con),
        Command::Serve { bind } => serve_cmd(&cli, bind.as_deref(), con).await,
    }
}

/// Parses process arguments and runs against real stdio.
pub async fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
    let (mut stdin, mut out, mut err) = (std::io::stdin(), std::io::stdout(), std::io::stderr());
    let mut con = Console {
        stdin: &mut stdin,
        out: &mut out,
        err: &mut err,
        env: std::env::vars().collect(),
    };
    let code = run(cli, &mut con).await;
    std::process::ExitCode::from(code as u8)
}

// ---------------------------------------------------------------------------

fn render_verdict(v: &Verdict) -> String {
    let list = |xs: &[String]| if xs.is_empty() { "[]".to_string() } else { xs.join(", ") };
    format!(
        "harmful: {:?}\nscore: {:.4}\nattempts: {}\nparse_ok: {}\ndescription: {}\nvictim_groups: {}\nmethods_of_attack: {}\n",
        v.harmful,
        v.score,
        v.attempts,
        v.parse_ok,
        v.description,
        list(&v.victim_groups),
        list(&v.methods_of_attack),
    )
}

async fn classify(cli: &Cli, image: &Path, no_ocr: bool, con: &mut Console<'_>) -> i32 {
    let extra = if no_ocr { vec!["stages.ocr=false".to_string()] } else { Vec::new() };
    let config = match service_config(cli, con, &extra) {
        Ok(c) => c,
        Err(e) => return con.fail(e),
    };
    let bytes = match std::fs::read(image) {
        Ok(b) => b,
        Err(e) => return con.fail(format!("{}: {e}", image.display())),
    };
    let image = match Image::from_bytes(bytes) {
        Ok(i) => i,
        Err(e) => return con.fail(e),
    };
    let assembled = match assemble(&config) {
        Ok(a) => a,
        Err(e) => return con.fail(e),
    };
    if cli.dry_run {
        let plan = json!({
            "image_hash": image.hash(),
            "endpoints": Endpoints::from_config(&config),
            "plan": assembled.pipeline.plan(),
        });
        if cli.json {
            con.emit_json(&plan);
        } else {
            let p = assembled.pipeline.plan();
            let _ = writeln!(con.out, "image: {}\nstages: {}", image.hash(), p.stages.join(" -> "));
            let _ = writeln!(con.out, "endpoints: {}", serde_json::to_string(&plan["endpoints"]).unwrap_or_default());
            let _ = writeln!(
                con.out,
                "greedy: temperature {} max_tokens {} top_logprobs {}",
                p.greedy.temperature, p.greedy.max_new_tokens, p.greedy.logprob_depth
            );
            let _ = writeln!(
                con.out,
                "retry: up to {} attempts, sampling min_p {} temperature {}",
                p.max_attempts, p.sampling.min_p, p.sampling.temperature
            );
            let _ = writeln!(con.out, "prompt:\n{}", p.prompt);
        }
        return EXIT_OK;
    }
    if !config.stages.vlm {
        return con.fail("vlm stage is disabled");
    }
    match assembled.pipeline.classify(&image).await {
        Ok(run) => {
            if cli.json {
                con.emit_json(&json!({ "image_hash": image.hash(), "verdict": run.verdict, "trace": run.trace }));
            } else {
                let _ = write!(con.out, "{}", render_verdict(&run.verdict));
            }
            if run.verdict.harmful == Harmfulness::Unresolved {
                EXIT_UNRESOLVED
            } else {
                EXIT_OK
            }
        }
        Err(f) => {
            if cli.json {
                con.emit_json(&json!({ "image_hash": image.hash(), "verdict": f.verdict, "trace": f.trace, "error": f.error.to_string() }));
            }
            con.fail(f.error)
        }
    }
}

fn load(path: &Path, lenient: bool, con: &mut Console<'_>) -> Result<Manifest, i32> {
    let manifest = load_manifest(path).map_err(|e| con.fail(e))?;
    for d in &manifest.diagnostics {
        let _ = writeln!(con.err, "{}:{}: {}", path.display(), d.line, d.message);
    }
    if !manifest.diagnostics.is_empty() && !lenient {
        let _ = writeln!(
            con.err,
            "{} malformed line(s); rerun with --lenient to continue without them",
            manifest.diagnostics.len()
        );
        return Err(EXIT_DIAGNOSTICS);
    }
    Ok(manifest)
}

async fn eval(
    cli: &Cli,
    manifest_path: &Path,
    limit: Option<usize>,
    out: Option<&Path>,
    parallel: usize,
    lenient: bool,
    con: &mut Console<'_>,
) -> i32 {
    let config = match service_config(cli, con, &[]) {
        Ok(c) => c,
        Err(e) => return con.fail(e),
    };
    let manifest = match load(manifest_path, lenient, con) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let mut samples = manifest.samples.clone();
    if let Some(n) = limit {
        samples.truncate(n);
    }
    if let Some(s) = samples.iter().find(|s| s.ground_truth().is_none()) {
        return con.fail(format!("sample {} has no ground-truth harmful label", s.id));
    }
    let assembled = match assemble(&config) {
        Ok(a) => a,
        Err(e) => return con.fail(e),
    };
    if cli.dry_run {
        let plan = json!({
            "samples": samples.len(),
            "parallel": parallel,
            "endpoints": Endpoints::from_config(&config),
            "plan": assembled.pipeline.plan(),
            "out": out,
        });
        con.emit_json(&plan);
        return EXIT_OK;
    }
    let evaluation = match evaluate(&samples, &manifest.base_dir, &assembled.pipeline, parallel).await {
        Ok(e) => e,
        Err(e) => return con.fail(e),
    };
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| evaluation.write_log(dir.join("records.jsonl")))
            .and_then(|_| std::fs::write(dir.join("report.txt"), evaluation.report.render_table()))
            .and_then(|_| {
                let body = serde_json::to_string_pretty(&evaluation.report).unwrap_or_default();
                std::fs::write(dir.join("report.json"), body + "\n")
            });
        if let Err(e) = written {
            return con.fail(format!("{}: {e}", dir.display()));
        }
    }
    if cli.json {
        con.emit_json(&json!({ "report": evaluation.report, "records": evaluation.records }));
    } else {
        let _ = write!(con.out, "{}", evaluation.report.render_table());
    }
    EXIT_OK
}

fn write_manifest(path: &Path, samples: &[memesentinel::dataset::MemeSample]) -> std::io::Result<()> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&s.to_manifest_line());
        text.push('\n');
    }
    std::fs::write(path, text)
}

fn dataset(cli: &Cli, action: &DatasetAction, con: &mut Console<'_>) -> i32 {
    let (path, lenient) = match action {
        DatasetAction::Dedup { manifest, lenient, .. }
        | DatasetAction::Split { manifest, lenient, .. }
        | DatasetAction::Stats { manifest, lenient } => (manifest, *lenient),
    };
    let manifest = match load(path, lenient, con) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let n_diag = manifest.diagnostics.len();
    match action {
        DatasetAction::Dedup { out, .. } => {
            let dedup = dedup_by_filename(manifest.samples);
            if cli.json {
                con.emit_json(&json!({ "kept": dedup.samples.len(), "removed": dedup.removed, "diagnostics": n_diag, "out": out }));
            } else {
                let _ = writeln!(con.out, "kept {}\nremoved {}", dedup.samples.len(), dedup.removed);
            }
            if let (Some(out), false) = (out, cli.dry_run) {
                if let Err(e) = write_manifest(out, &dedup.samples) {
                    return con.fail(format!("{}: {e}", out.display()));
                }
            }
        }
        DatasetAction::Split { validation, out, .. } => {
            let spec = if validation.is_empty() {
                SplitSpec::sg_holdout()
            } else {
                SplitSpec::new(validation.iter().cloned())
            };
            let split = match build_validation_split(manifest.samples, &spec) {
                Ok(s) => s,
                Err(e) => return con.fail(e),
            };
            if cli.json {
                con.emit_json(&json!({
                    "validation_datasets": spec.validation_datasets,
                    "train": split.train.len(),
                    "validation": split.validation.len(),
                    "out": out,
                }));
            } else {
                let _ = writeln!(con.out, "train {}\nvalidation {}", split.train.len(), split.validation.len());
            }
            if let (Some(dir), false) = (out, cli.dry_run) {
                let written = std::fs::create_dir_all(dir)
                    .and_then(|_| write_manifest(&dir.join("train.jsonl"), &split.train))
                    .and_then(|_| write_manifest(&dir.join("validation.jsonl"), &split.validation));
                if let Err(e) = written {
                    return con.fail(format!("{}: {e}", dir.display()));
                }
            }
        }
        DatasetAction::Stats { .. } => {
            let stats = corpus_stats(&manifest.samples);
            if cli.json {
                con.emit_json(&serde_json::to_value(&stats).unwrap_or_default());
            } else {
                let _ = write!(con.out, "{}", stats.render_table());
            }
        }
    }
    EXIT_OK
}

fn file_url(path: &Path) -> String {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    format!("file://{}", abs.display())
}

fn label_gen(
    cli: &Cli,
    manifest_path: &Path,
    out: &Path,
    model: &str,
    embed: bool,
    lenient: bool,
    con: &mut Console<'_>,
) -> i32 {
    let manifest = match load(manifest_path, lenient, con) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if !cli.dry_run {
        if let Err(e) = std::fs::create_dir_all(out) {
            return con.fail(format!("{}: {e}", out.display()));
        }
    }
    let mut errors = Vec::new();
    let mut written = 0usize;
    let mut flagged = 0usize;
    for sample in &manifest.samples {
        let request = build_label_request(sample);
        let path = manifest.resolve(sample);
        let url = if embed {
            match std::fs::read(&path).map_err(|e| e.to_string()).and_then(|b| Image::from_bytes(b).map_err(|e| e.to_string())) {
                Ok(img) => img.data_url(),
                Err(e) => {
                    errors.push(format!("{}: {}: {e}", sample.id, path.display()));
                    continue;
                }
            }
        } else {
            file_url(&path)
        };
        if sample.human_label.as_ref().is_some_and(|l| !l.non_canonical_groups().is_empty()) {
            flagged += 1;
        }
        if cli.dry_run {
            written += 1;
            continue;
        }
        let body = json!({
            "sample_id": sample.id,
            "request": request.to_chat_request(model, &url),
        });
        let file = out.join(format!("{}.json", sanitize(&sample.id)));
        match std::fs::write(&file, serde_json::to_string_pretty(&body).unwrap_or_default() + "\n") {
            Ok(()) => written += 1,
            Err(e) => errors.push(format!("{}: {e}", file.display())),
        }
    }
    for e in &errors {
        let _ = writeln!(con.err, "error: {e}");
    }
    if cli.json {
        con.emit_json(&json!({ "written": written, "errors": errors.len(), "non_canonical_labels": flagged, "model": model, "dry_run": cli.dry_run }));
    } else {
        let verb = if cli.dry_run { "would write" } else { "wrote" };
        let _ = writeln!(con.out, "{verb} {written} request(s) to {}", out.display());
        if flagged > 0 {
            let _ = writeln!(con.out, "{flagged} label(s) use non-canonical victim groups");
        }
    }
    if errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_ERROR
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn wiki_qa(cli: &Cli, articles: &Path, seed: Option<u64>, out: &Path, con: &mut Console<'_>) -> i32 {
    let seed = match seed {
        Some(s) => s,
        None if in_ci(con) => return con.fail("--seed is required when CI is set"),
        None => {
            let s = rand::random::<u64>();
            let _ = writeln!(con.err, "using seed {s}");
            s
        }
    };
    let text = match std::fs::read_to_string(articles) {
        Ok(t) => t,
        Err(e) => return con.fail(format!("{}: {e}", articles.display())),
    };
    let mut parsed = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<WikiArticle>(line) {
            Ok(a) => parsed.push(a),
            Err(e) => errors.push(format!("{}:{}: {e}", articles.display(), i + 1)),
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let build = build_all(&parsed, &mut rng);
    errors.extend(build.skipped.iter().map(|e| format!("skipped: {e}")));
    if !cli.dry_run {
        let mut body = String::new();
        for (i, pair) in build.pairs.iter().enumerate() {
            body.push_str(&serde_json::to_string(&pair.to_conversation(format!("wiki-{i:05}"))).unwrap_or_default());
            body.push('\n');
        }
        if let Err(e) = std::fs::write(out, body) {
            return con.fail(format!("{}: {e}", out.display()));
        }
    }
    for e in &errors {
        let _ = writeln!(con.err, "{e}");
    }
    if cli.json {
        con.emit_json(&json!({ "seed": seed, "summary": build.summary, "errors": errors.len(), "dry_run": cli.dry_run }));
    } else {
        let s = build.summary;
        let _ = writeln!(
            con.out,
            "text_only {}\ncover_image {}\nalt_text {}\ntotal {}",
            s.text_only, s.cover_image, s.alt_text, s.total
        );
    }
    if errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_ERROR
    }
}

fn expand(cli: &Cli, dict: Option<&Path>, text: Option<&str>, con: &mut Console<'_>) -> i32 {
    let dictionary = match dict {
        Some(p) => match AbbrevDict::load(p) {
            Ok(d) => d,
            Err(e) => return con.fail(e),
        },
        None => AbbrevDict::singapore(),
    };
    let input = match text {
        Some(t) if t != "-" => t.to_string(),
        _ => {
            let mut buf = String::new();
            if let Err(e) = con.stdin.read_to_string(&mut buf) {
                return con.fail(format!("stdin: {e}"));
            }
            buf
        }
    };
    if cli.dry_run {
        let source = dict.map_or("bundled".to_string(), |p| p.display().to_string());
        con.emit_json(&json!({ "dictionary": source, "entries": dictionary.len(), "input_chars": input.chars().count() }));
        return EXIT_OK;
    }
    let output = expand_abbreviations(&input, &dictionary);
    if cli.json {
        con.emit_json(&json!({ "input": input, "output": output }));
    } else {
        let _ = write!(con.out, "{output}");
        if !output.ends_with('\n') {
            let _ = writeln!(con.out);
        }
    }
    EXIT_OK
}

async fn serve_cmd(cli: &Cli, bind: Option<&str>, con: &mut Console<'_>) -> i32 {
    let extra: Vec<String> = bind.map(|b| format!("server.bind={}", toml_string(b))).into_iter().collect();
    let config = match service_config(cli, con, &extra) {
        Ok(c) => c,
        Err(e) => return con.fail(e),
    };
    if cli.dry_run {
        if cli.json {
            con.emit_json(&json!({ "config": config, "endpoints": Endpoints::from_config(&config) }));
        } else {
            let _ = write!(con.out, "{}", config.to_toml());
        }
        return EXIT_OK;
    }
    match serve(config).await {
        Ok(()) => EXIT_OK,
        Err(e) => con.fail(e),
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let assembled = assemble(&config)?;
    let store = Arc::new(Store::open(&config.store.path, config.store.compact_every)?);
    let listener = tokio::net::TcpListener::bind(&config.server.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, records = store.len(), "listening");
    let app = router(AppState::new(assembled.pipeline, store, config));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
