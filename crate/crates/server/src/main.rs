#[tokio::main]
async fn main() -> std::process::ExitCode {
    memesentinel_server::cli::main_entry().await
}
