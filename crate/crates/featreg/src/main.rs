use clap::Parser;
use featreg::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("featreg: {e}");
        std::process::exit(e.exit_code());
    }
}
