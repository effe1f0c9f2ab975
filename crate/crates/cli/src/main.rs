use clap::Parser;
use germcanop_cli::{config, exit_code, load_config, run_scenario};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run a germcanop scenario from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "germcanop", version)]
struct Args {
    /// Scenario config (JSON).
    #[arg(long, required_unless_present = "print_schema")]
    config: Option<PathBuf>,
    /// Directory for tables, dumps and the summary.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for randomized test points; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for inner parallel loops.
    #[arg(long, env = "GERMCANOP_THREADS")]
    threads: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
    /// Print the config JSON schema and exit.
    #[arg(long)]
    print_schema: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().filter_level(if args.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn }).init();
    if args.print_schema {
        println!("{}", config::schema_json());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("config error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    }
    let config_path = args.config.expect("clap enforces --config");
    let result = load_config(&config_path).and_then(|cfg| {
        let seed = args.seed.or(cfg.seed).unwrap_or(0);
        log::info!("running {} with seed {seed}", cfg.scenario.name());
        run_scenario(&cfg, &args.out, seed)
    });
    match &result {
        Ok(summary) => {
            for c in &summary.checks {
                println!("{} {}: {:.3e} (bound {:.3e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
            }
            println!("{}: {}", summary.scenario, if summary.passed { "pass" } else { "fail" });
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
