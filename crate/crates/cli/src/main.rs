use clap::Parser;
use fdmimo_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            std::process::exit(1);
        }
    }
}
