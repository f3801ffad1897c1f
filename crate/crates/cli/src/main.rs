use clap::Parser;

fn main() {
    let cli = otj_cli::Cli::parse();
    if let Err(e) = otj_cli::run(cli) {
        eprintln!("otj: {e}");
        std::process::exit(e.exit_code());
    }
}
