use clap::Parser;
use zoomrds::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(&cli.config, cli.command, &cli.out, cli.seed, cli.strict));
}
