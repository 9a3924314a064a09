use std::path::PathBuf;

use clap::Parser;

use areval_server::{AppState, ServerConfig};

#[derive(Parser)]
#[command(name = "areval-server", version, about = "Capture ingest, compositing and replay server")]
struct Args {
    /// TOML config file; environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides bind_address.
    #[arg(long)]
    bind: Option<String>,
    /// Overrides storage_root.
    #[arg(long)]
    storage_root: Option<PathBuf>,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = match ServerConfig::load(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    if let Some(b) = args.bind {
        config.bind_address = b;
    }
    if let Some(r) = args.storage_root {
        config.storage_root = r;
    }
    let bind = config.bind_address.clone();
    let state = match AppState::new(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot open storage: {e}");
            std::process::exit(1);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {bind}: {e}");
            std::process::exit(1);
        }
    };
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(bind));
    if let Err(e) = areval_server::serve(state, listener).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
