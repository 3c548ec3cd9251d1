use std::io::Write;
use std::path::PathBuf;

use mivs_server::config::ENV_CONFIG;
use mivs_server::{AppState, Config, ConfigError, ServerError};

use crate::CliError;

#[derive(clap::Args)]
pub struct Args {
    /// TOML configuration file.
    #[arg(long, env = ENV_CONFIG)]
    config: PathBuf,
    /// Overrides `listen` from the file and the environment.
    #[arg(long)]
    listen: Option<String>,
}

fn server_error(e: ServerError) -> CliError {
    match e {
        ServerError::Config(ConfigError::Io { .. }) | ServerError::Io(_) => CliError::Io(e.to_string()),
        ServerError::Config(_) | ServerError::Auth(_) => CliError::Invalid(e.to_string()),
        ServerError::Store(_) => CliError::Io(e.to_string()),
    }
}

pub fn run(a: Args) -> Result<(), CliError> {
    let mut config = Config::load(&a.config).map_err(|e| server_error(e.into()))?;
    if let Some(listen) = a.listen {
        config.listen = listen;
    }
    let state = AppState::new(config).map_err(server_error)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let scan_state = state.clone();
        tokio::task::spawn_blocking(move || scan_state.scan_sources())
            .await
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(&state.config.listen)
            .await
            .map_err(|e| CliError::Io(format!("bind {}: {e}", state.config.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        mivs_server::run(state, listener, shutdown_signal()).await.map_err(server_error)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
