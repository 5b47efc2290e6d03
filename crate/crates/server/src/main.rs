use clap::Parser;

#[derive(Parser)]
#[command(name = "bads-server", about = "HTTP session service for differential audiometry")]
struct Cli {
    #[command(flatten)]
    serve: bads_server::ServeArgs,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    bads_server::serve(Cli::parse().serve).await
}
