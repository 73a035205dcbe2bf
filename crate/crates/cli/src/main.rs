use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

mod config;
mod report;
mod run;

use config::Mode;

/// Off-policy evaluation of pricing policies: benchmarks, bounds and checks.
#[derive(Debug, Parser)]
#[command(name = "pricing-ope", version)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,

    /// Flat `key = value` config file. `PRICING_OPE_*` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match config::load(args.mode, args.config.as_deref(), args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let start = Instant::now();
    match run::run(&cfg, &args.out) {
        Ok((csv, json, summary)) => {
            println!("{summary}");
            println!("wrote {} and {}", csv.display(), json.display());
            eprintln!("wall time {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
