use clap::Parser;
use twotower_cli::args::Cli;
use twotower_cli::CliError;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let err = CliError::Usage(e.to_string().lines().next().unwrap_or("invalid arguments").to_string());
            eprintln!("{}", err.line());
            std::process::exit(err.code());
        }
    };
    if let Err(e) = twotower_cli::run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.code());
    }
}
