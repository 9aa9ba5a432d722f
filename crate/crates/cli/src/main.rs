use clap::Parser;

fn main() {
    std::process::exit(survplan_cli::run(survplan_cli::Cli::parse()));
}
