use std::net::SocketAddr;

use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let addr: SocketAddr = std::env::var("SWARMTUNE_ADDR")
        .unwrap_or_else(|_| "127.0.0.1:8707".into())
        .parse()
        .map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("SWARMTUNE_ADDR: {e}"),
            )
        })?;
    swarmtune_server::serve(addr).await
}
