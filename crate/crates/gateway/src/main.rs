use clap::Parser;
use noft_gateway::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Err(e) = run(cli) {
        let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
        let body = serde_json::json!({"error": {"message": e.to_string(), "chain": chain}});
        eprintln!("{body}");
        std::process::exit(1);
    }
}
