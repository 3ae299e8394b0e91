use std::io::Write;

use clap::Parser;
use lqdst_cli::{run_experiment, Cli, ExperimentConfig};

fn main() {
    let cli = Cli::parse();
    let code = match ExperimentConfig::from_cli(cli).and_then(|cfg| run_experiment(&cfg, std::io::stdout().lock())) {
        Ok(summary) => {
            let code = summary.exit_code();
            if code != 0 {
                eprintln!("error: an iterate left the stable set; see summary.txt");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
