use clap::Parser;
use physio_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("physio: {e}");
        std::process::exit(e.exit_code());
    }
}
