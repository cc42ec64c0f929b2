use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protegi::bandits::render_bench_table;
use protegi::report::{load_report, render_comparison, render_summary};
use protegi::runner::execute;
use protegi::{bench_bandits, BanditBenchConfig, Config, RunReport};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "protegi", version, about = "Prompt optimization with textual gradients and beam search")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). PROTEGI_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a prompt and write the run directory.
    Run(RunArgs),
    /// Summarize one report, or compare several.
    Report(ReportArgs),
    /// Compare the selection algorithms on synthetic arms.
    BenchBandits(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `selection.algorithm=sr`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// sim or remote.
    #[arg(long)]
    backend: Option<String>,
    /// protegi, flat, greedy or mc.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    /// JSONL dataset with `text` and `label` fields.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use this many synthetic examples instead of a dataset.
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// uniform, ucb, ucb-e, sr or sh.
    #[arg(long)]
    selector: Option<String>,
    #[arg(long)]
    budget_per_prompt: Option<u64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    exploration: Option<f64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files or run directories. A directory of replicates expands
    /// to its `rep-*` reports.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML file with any of the benchmark settings.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated arm accuracies.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<f64>>,
    /// Comma-separated per-prompt budgets.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<u64>>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Also write the full result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// An error with its exit status.
struct Failure(u8, String);

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn path_str(p: &Path) -> String {
    quoted(&p.display().to_string())
}

impl RunArgs {
    /// `--set` values first, then the dedicated flags.
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                o.push(format!("{key}={v}"));
            }
        };
        push("backend.kind", self.backend.as_deref().map(quoted));
        push("mode", self.mode.as_deref().map(quoted));
        push("seed", self.seed.map(|v| v.to_string()));
        push("out_dir", self.out_dir.as_deref().map(path_str));
        push("run_name", self.run_name.as_deref().map(quoted));
        push("replicates", self.replicates.map(|v| v.to_string()));
        push("data.path", self.data.as_deref().map(path_str));
        push("data.synthetic", self.synthetic.map(|v| v.to_string()));
        push("search.beam_width", self.beam_width.map(|v| v.to_string()));
        push("search.depth", self.depth.map(|v| v.to_string()));
        push("selection.algorithm", self.selector.as_deref().map(quoted));
        push("selection.budget_per_prompt", self.budget_per_prompt.map(|v| v.to_string()));
        push("selection.sample_size", self.sample_size.map(|v| v.to_string()));
        push("selection.exploration", self.exploration.map(|v| format!("{v:?}")));
        push("backend.cache_dir", self.cache_dir.as_deref().map(path_str));
        o
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = Config::load(args.config.as_deref(), &args.overrides()).map_err(|e| Failure(2, e.to_string()))?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let summary = execute(&cfg).map_err(|e| Failure(e.exit_code() as u8, e.to_string()))?;
    match summary.reports.as_slice() {
        [one] => print!("{}", render_summary(one)),
        many => print!("{}", render_comparison(many)),
    }
    println!("wrote {}", summary.run_dir.display());
    Ok(())
}

/// A report file, a run directory, or a directory of `rep-*` runs.
fn collect_reports(path: &Path) -> Result<Vec<RunReport>, Failure> {
    let load = |p: &Path| load_report(p).map_err(|e| Failure(2, e.to_string()));
    if !path.is_dir() || path.join("report.json").is_file() {
        return Ok(vec![load(path)?]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
    let mut reps: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("rep-")) && p.is_dir())
        .collect();
    if reps.is_empty() {
        return Err(Failure(2, format!("{}: no report.json and no rep-* runs", path.display())));
    }
    reps.sort();
    reps.iter().map(|p| load(p)).collect()
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for p in &args.paths {
        reports.extend(collect_reports(p)?);
    }
    match reports.as_slice() {
        [one] => print!("{}", render_summary(one)),
        many => print!("{}", render_comparison(many)),
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
            toml::from_str::<BanditBenchConfig>(&text).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?
        }
        None => BanditBenchConfig::default(),
    };
    if let Some(v) = args.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.arms {
        cfg.arms = v;
    }
    if let Some(v) = args.budgets {
        cfg.budgets_per_prompt = v;
    }
    if let Some(v) = args.beam_width {
        cfg.beam_width = v;
    }
    let result = bench_bandits(&cfg).map_err(|e| Failure(2, e.to_string()))?;
    println!(
        "identification rate over {} seeds, arms {:?}, keeping {}",
        cfg.seeds, cfg.arms, cfg.beam_width
    );
    print!("{}", render_bench_table(&result));
    if let Some(path) = &args.json {
        let mut body = serde_json::to_vec_pretty(&result).expect("bench result serializes");
        body.push(b'\n');
        std::fs::write(path, body).map_err(|e| Failure(1, format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("PROTEGI_LOG").unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::BenchBandits(a) => bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
