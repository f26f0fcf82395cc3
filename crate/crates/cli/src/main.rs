use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    rawtobit_cli::run(rawtobit_cli::Cli::parse())
}
