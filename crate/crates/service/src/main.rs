use clap::Parser;
use realign_service::cli::{init_logging, main_with, Cli};

fn main() -> std::process::ExitCode {
    init_logging();
    main_with(Cli::parse())
}
