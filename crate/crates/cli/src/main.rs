use clap::Parser;

use pcluster::Cli;

fn main() {
    let cli = Cli::parse();
    match pcluster::run(&cli, std::env::vars()) {
        Ok((manifest, summary)) => {
            println!("{summary}");
            println!("wrote {} files to {}", manifest.files.len() + 1, manifest.config.output_dir.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
