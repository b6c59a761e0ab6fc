use clap::Parser;
use stein_fclt::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
