use clap::Parser;

fn main() {
    let cli = ontime_cli::Cli::parse();
    if let Err(error) = ontime_cli::run(cli) {
        eprintln!("error[{}]: {error}", error.category());
        std::process::exit(error.exit_code());
    }
}
