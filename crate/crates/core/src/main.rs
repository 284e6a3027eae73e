use clap::Parser;

fn main() {
    let cli = hs_lift::cli::Cli::parse();
    std::process::exit(hs_lift::cli::run(cli));
}
