use clap::Parser;

fn main() {
    let cli = ddup::cli::Cli::parse();
    if let Err(e) = ddup::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
