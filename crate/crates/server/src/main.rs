use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use classaid_core::config::ServiceConfig;
use classaid_core::session::clock::{Clock, ManualClock, SystemClock};
use classaid_core::session::{backend_from_config, log_path, Service};
use classaid_server::{router, AppState};

/// Serves one classroom session over HTTP.
#[derive(Parser, Debug)]
#[command(name = "classaid-server", version)]
struct Args {
    /// Session config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory holding `<session_id>.log`; an existing log is resumed.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Run on a manual clock starting at this epoch-millisecond value.
    #[arg(long)]
    manual_clock: Option<i64>,
    /// Seconds between background inactivity checks; 0 disables them.
    /// Ignored on a manual clock, where clients call the tick route.
    #[arg(long, default_value_t = 10)]
    tick_secs: u64,
    /// Instructor token, overriding the config file.
    #[arg(long, env = "CLASSAID_INSTRUCTOR_TOKEN")]
    token: Option<String>,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Args::parse()).await {
        log::error!("{e}");
        std::process::exit(1);
    }
}

async fn run(args: Args) -> Result<(), String> {
    let mut cfg = ServiceConfig::load(&args.config).map_err(|e| e.to_string())?;
    if args.token.is_some() {
        cfg.session.instructor_token = args.token.clone();
    }
    let backend = backend_from_config(&cfg.llm).map_err(|e| e.to_string())?;
    let manual = args.manual_clock.map(|t| Arc::new(ManualClock::new(t)));
    let clock: Arc<dyn Clock> = match &manual {
        Some(m) => m.clone(),
        None => Arc::new(SystemClock),
    };
    std::fs::create_dir_all(&args.data_dir).map_err(|e| format!("{}: {e}", args.data_dir.display()))?;
    let path = log_path(&args.data_dir, cfg.session.session_id.as_str());
    let service = Service::open(cfg, &path, backend, clock).map_err(|e| e.to_string())?;
    log::info!("session {} logging to {}", service.session_id(), path.display());

    let state = AppState::new(service, manual.clone());
    if manual.is_none() && args.tick_secs > 0 {
        let svc = state.service.clone();
        let every = Duration::from_secs(args.tick_secs);
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(every);
            loop {
                interval.tick().await;
                let svc = svc.clone();
                match tokio::task::spawn_blocking(move || svc.tick_now()).await {
                    Ok(Ok(reports)) if !reports.is_empty() => log::debug!("tick fired for {} students", reports.len()),
                    Ok(Err(e)) => log::warn!("tick failed: {e}"),
                    _ => {}
                }
            }
        });
    }

    let listener = tokio::net::TcpListener::bind(args.bind).await.map_err(|e| e.to_string())?;
    log::info!("listening on {}", args.bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
