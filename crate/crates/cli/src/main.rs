use clap::Parser;
use mdsinfer_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(&cli, &mut stdout) {
        eprintln!("mdsinfer: {e}");
        std::process::exit(e.exit_code());
    }
}
