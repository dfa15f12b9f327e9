use clap::Parser;

fn main() {
    let cli = qcinf_cli::args::Cli::parse();
    std::process::exit(qcinf_cli::run(cli));
}
