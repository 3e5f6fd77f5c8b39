use clap::Parser;

fn main() {
    let cli = psolv_cli::Cli::parse();
    std::process::exit(psolv_cli::run(&cli));
}
