use clap::Parser;

fn main() {
    let cli = mdcf::cli::Cli::parse();
    if let Err(e) = mdcf::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
