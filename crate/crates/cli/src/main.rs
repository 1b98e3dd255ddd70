use clap::Parser;
use frisim_cli::{execute, Cli};

fn main() {
    std::process::exit(execute(Cli::parse()));
}
