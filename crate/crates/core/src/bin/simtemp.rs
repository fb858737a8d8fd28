use clap::Parser;

fn main() {
    let args = simtemp::cli::Args::parse();
    std::process::exit(simtemp::cli::main_with_args(args));
}
