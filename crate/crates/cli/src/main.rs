use clap::Parser;

fn main() {
    let cli = mrcal_cli::Cli::parse();
    if let Err(e) = mrcal_cli::run(&cli) {
        eprintln!("mrcal: {e}");
        std::process::exit(e.exit_code());
    }
}
