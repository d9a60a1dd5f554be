use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rismeta_harness::report::{parse_report, render_table, results_csv, timing_csv};
use rismeta_harness::train::write_training;
use rismeta_harness::{run_sweep, train_agents, ExperimentSpec, HarnessError, Policies, Preset};

#[derive(Parser)]
#[command(name = "rismeta", about = "RIS MU-MIMO experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every method of a spec and write results_<name>.csv.
    Run(Common),
    /// Train the learned methods and write checkpoints plus metrics CSVs.
    Train(Common),
    /// Print the results CSVs found in the output directory as tables.
    Report {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Parse and validate a spec, then print it with defaults filled in.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    /// ExperimentSpec JSON file.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Overrides the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel realizations (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match (&self.spec, self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentSpec::from_json(&text)?
            }
            (None, Some(p)) => ExperimentSpec::preset(p, self.seed.unwrap_or(0)),
            (None, None) => bail!("pass --spec <file> or --preset <desk|table1>"),
        };
        if let Some(seed) = self.seed {
            spec.master_seed = seed;
        }
        if let Some(out) = &self.out {
            spec.output = out.clone();
        }
        spec.validate()?;
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        Ok(spec)
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let spec = c.load()?;
            let policies = if spec.learned_methods().is_empty() {
                Policies::new()
            } else if spec.train_inline {
                train_agents(&spec, &mut |line| eprintln!("{line}"))?.policies
            } else {
                Policies::load(&spec, &spec.output)?
            };
            let rows = run_sweep(&spec, &policies)?;
            fs::create_dir_all(&spec.output)?;
            let results = results_csv(&rows)?;
            write(&spec.output.join(format!("results_{}.csv", spec.name)), &results)?;
            write(&spec.output.join(format!("timing_{}.csv", spec.name)), &timing_csv(&rows)?)?;
            print!("{}", render_table(&parse_report(&results)?));
        }
        Command::Train(c) => {
            let spec = c.load()?;
            let out = train_agents(&spec, &mut |line| eprintln!("{line}"))?;
            for path in write_training(&spec, &out, &spec.output)? {
                println!("{}", path.display());
            }
        }
        Command::Report { out } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&out)
                .with_context(|| format!("listing {}", out.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with("results_") && name.ends_with(".csv")
                })
                .collect();
            paths.sort();
            for p in paths {
                let rows = parse_report(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?;
                println!("{}", p.display());
                print!("{}", render_table(&rows));
            }
        }
        Command::ValidateConfig(c) => {
            let spec = c.load()?;
            println!("{}", serde_json::to_string_pretty(&spec)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err.downcast_ref::<HarnessError>().map_or("error", HarnessError::kind);
            let body = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
