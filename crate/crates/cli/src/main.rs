use clap::Parser;
use synthpanel_cli::{run_cli, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run_cli(&cli) {
        eprintln!("synthpanel: {e}");
        std::process::exit(e.exit_code());
    }
}
