use clap::Parser;

fn main() {
    let args = homog::cli::Args::parse();
    std::process::exit(homog::cli::run(args));
}
