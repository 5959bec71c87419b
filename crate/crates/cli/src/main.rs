use clap::Parser;
use slidemil_cli::commands::{run, Cli};

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.value)?);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            Ok(())
        }
        Err(e) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&e.to_json())?);
            } else {
                eprintln!("error [{}]: {}", e.code, e.message);
            }
            std::process::exit(1);
        }
    }
}
