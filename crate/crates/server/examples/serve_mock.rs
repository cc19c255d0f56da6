//! Start the moderation service on fixture-driven mock backends, classify
//! one image over real HTTP, then list the stored records.
//!
//! cargo run -p memesentinel-server --example serve_mock

use std::path::PathBuf;
use std::sync::Arc;

use memesentinel_server::api::{router, AppState};
use memesentinel_server::assemble::assemble;
use memesentinel_server::config::ServiceConfig;
use memesentinel_server::store::Store;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline");
    let dir = std::env::temp_dir().join(format!("memesentinel-demo-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let mut config = ServiceConfig::default();
    config.backends.mock = true;
    config.backends.fixtures = Some(fixtures.clone());
    config.store.path = dir.join("store.jsonl");

    let assembled = assemble(&config)?;
    let store = Arc::new(Store::open(&config.store.path, config.store.compact_every)?);
    let app = router(AppState::new(assembled.pipeline, store, config));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, app).await });
    println!("serving on {base}");

    let client = reqwest::Client::new();
    let health: serde_json::Value = client.get(format!("{base}/v1/health")).send().await?.json().await?;
    println!("health: {health}");

    let image = std::fs::read(fixtures.join("chinese.png"))?;
    let resp = client.post(format!("{base}/v1/classify")).body(image).send().await?;
    println!("classify: HTTP {}", resp.status());
    let record: serde_json::Value = resp.json().await?;
    println!("verdict: {}", serde_json::to_string_pretty(&record["verdict"])?);

    let page: serde_json::Value = client.get(format!("{base}/v1/records?decision=yes")).send().await?.json().await?;
    println!("records flagged harmful: {}", page["total"]);

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
