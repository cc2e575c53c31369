use clap::Parser;

fn main() {
    let cli = daegc::cli::Cli::parse();
    if let Err(e) = daegc::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
