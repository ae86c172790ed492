use clap::Parser;

use crowdflow::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CROWDFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // ignore a pool that is already set up
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    if let Err(e) = run(cli) {
        let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
