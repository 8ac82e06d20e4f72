use clap::Parser;

fn main() {
    let cli = ksgdiff::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    if let Err(e) = ksgdiff::run(cli, &mut stdout, &mut stderr) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
