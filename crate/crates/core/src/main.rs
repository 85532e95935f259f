use clap::Parser;
use mongeflow::cli::{execute, exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    let result = execute(&cli);
    match &result {
        Ok(f) => match &f.failure {
            Some(e) => eprintln!("mongeflow: {e}"),
            None => println!("{}", f.manifest.manifest_hash),
        },
        Err(e) => eprintln!("mongeflow: {e}"),
    }
    std::process::exit(exit_code(&result));
}
