use clap::Parser;

use cmat::cli::{execute, Cli};

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    std::process::exit(execute(&cli));
}
