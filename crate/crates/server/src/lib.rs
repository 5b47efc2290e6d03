//! Live differential-test sessions over HTTP.

pub mod api;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use session::{Session, SessionError, SessionView};
pub use store::Store;

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Address to bind.
    #[arg(long, env = "BADS_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Directory holding one event log per session.
    #[arg(long, env = "BADS_DATA_DIR", default_value = "bads-data")]
    pub data_dir: PathBuf,
    /// Built web UI to serve under `/`.
    #[arg(long, env = "BADS_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

pub async fn serve(args: ServeArgs) -> std::io::Result<()> {
    let store = Store::open(&args.data_dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let app = router(Arc::new(store), args.static_dir);
    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    eprintln!("listening on http://{} (data in {})", listener.local_addr()?, args.data_dir.display());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
