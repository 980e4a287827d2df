use clap::Parser;

use jump_mppi::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(execute(&cli) as i32);
}
