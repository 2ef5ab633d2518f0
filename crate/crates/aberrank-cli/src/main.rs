use clap::Parser;

fn main() {
    let cli = aberrank_cli::Cli::parse();
    match aberrank_cli::run(cli) {
        Ok(record) => std::process::exit(if record.solver_fallback { 3 } else { 0 }),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}
