use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use parking_lot::RwLock;

use themescope_server::{load_config, load_session, router, AppState};

/// Serve one theme-discovery session over HTTP/JSON.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON-lines corpus: {id, text, concepts?, embedding?, source_meta?} per line.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON concept schema: {"concepts": {name: {"values": [..]}}}.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// TOML session config (k, tau, K, seed, stopwords, [embedder]).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Persist the session here; an existing session in the directory is reopened.
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// Static bearer token required on every request.
    #[arg(long, env = "THEMESCOPE_TOKEN")]
    token: Option<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let config = load_config(args.config.as_deref())?;
    let session = tokio::task::spawn_blocking(move || {
        load_session(&args.corpus, &args.schema, config, args.session_dir.as_deref())
    })
    .await??;
    let embedder = session.config().embedder.clone();
    let dim = session.store().dim();
    let state = Arc::new(AppState { session: RwLock::new(session), token: args.token, embedder, dim });

    let addr = format!("{}:{}", args.host, args.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
