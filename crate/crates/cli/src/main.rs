use std::io::Write;

use clap::Parser;

use mpdc_cli::{run, Cli};

// A closed pipe (`mpdc ... | head`) is not an error worth a panic.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => emit(&out.to_string()),
        Err(e) => {
            eprintln!("mpdc: {e}");
            emit(&serde_json::json!({ "error": e.to_string(), "kind": e.kind() }).to_string());
            std::process::exit(1);
        }
    }
}
