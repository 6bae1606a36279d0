use clap::Parser;
use idla_lab::cli::{run_from_args, Args};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run_from_args(&args) {
        Ok(out) => {
            println!("{}", out.csv_path.display());
            std::process::exit(out.status.exit_code());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
