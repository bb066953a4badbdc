use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use uuscout::commands::{self, GeneratorKind};
use uuscout::pipeline::{self, load_inputs, write_files, Inputs};
use uuscout::service::{self, Service, DATA_DIR_ENV, DEFAULT_PORT, PORT_ENV};
use uuscout::SessionConfig;
use uuscout_core::bandit::PolicyKind;
use uuscout_core::eval::{regret_svg, DEFAULT_RUNS};

#[derive(Parser)]
#[command(name = "uuscout", version, about = "Find high-confidence mistakes of a black-box classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Session config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Absolute number of oracle queries.
    #[arg(long)]
    budget: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SessionConfig> {
        let mut c = SessionConfig::load(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(t) = self.tau {
            c.tau = t;
        }
        if let Some(p) = self.policy {
            c.policy = p;
        }
        if let Some(b) = self.budget {
            c.budget = Some(b);
            c.budget_fraction = None;
        }
        c.validate()?;
        Ok(c)
    }

    fn inputs(&self) -> Result<(SessionConfig, Inputs)> {
        let c = self.load()?;
        let inputs = load_inputs(&c)?;
        for w in &inputs.warnings {
            log::warn!("{w}");
        }
        Ok((c, inputs))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition, explore with the simulated oracle, and write the partition
    /// report, trace and summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "uuscout-out")]
        out: PathBuf,
    },
    /// Write only the partition report.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "uuscout-out")]
        out: PathBuf,
    },
    /// Entropy of unknown unknowns across DSP partitions and baseline groupings.
    EvalEntropy {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = commands::DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Cumulative regret of bandit policies against the optimal policy.
    EvalRegret {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated, e.g. uub,random,ucb1,discounted_ucb:0.5
        #[arg(long, default_value = "uub,random,ucb1")]
        policies: String,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        /// Also write the curves as an SVG chart.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// The configured pipeline against the partition-free baselines.
    EvalBaselines {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
    },
    /// Write a synthetic dataset with planted unknown unknowns.
    Generate {
        /// bias | skewed
        #[arg(long, default_value = "bias")]
        kind: GeneratorKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a regret table as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Serve the session HTTP API.
    Serve {
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, env = DATA_DIR_ENV, default_value = "uuscout-data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

fn print_or_write(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let (c, inputs) = config.inputs()?;
            let result = pipeline::run_simulated(&c, &inputs)?;
            pipeline::write_run(&out, &result)?;
            let s = &result.summary;
            println!(
                "{} partitions, {} of {} queries found {} unknown unknowns (utility {:.3}); wrote {}",
                s.partitions.len(),
                s.steps,
                s.budget,
                s.discovered,
                s.cumulative_utility,
                out.display()
            );
        }
        Command::Partition { config, out } => {
            let (c, inputs) = config.inputs()?;
            let p = pipeline::partition_inputs(&c, &inputs)?;
            write_files(&out, &[(pipeline::PARTITIONS_FILE, p.partitioning.report(&p.space))])?;
            println!("{} partitions over {} instances; wrote {}", p.partitioning.len(), p.space.len(), out.display());
        }
        Command::EvalEntropy { config, trials } => {
            let (c, inputs) = config.inputs()?;
            let report = commands::eval_entropy(&c, &inputs, trials)?;
            print_or_write(&commands::entropy_table(&report), None)?;
        }
        Command::EvalRegret { config, policies, runs, svg } => {
            let (c, inputs) = config.inputs()?;
            let kinds = commands::parse_policies(&policies)?;
            let curves = commands::eval_regret(&c, &inputs, &kinds, runs)?;
            print_or_write(&commands::regret_report(&curves), None)?;
            if let Some(path) = svg {
                print_or_write(&regret_svg(&curves), Some(&path))?;
            }
        }
        Command::EvalBaselines { config, runs } => {
            let (c, inputs) = config.inputs()?;
            let results = commands::eval_baselines(&c, &inputs, runs)?;
            print_or_write(&commands::baselines_table(&results), None)?;
        }
        Command::Generate { kind, seed, out } => {
            for p in commands::generate(kind, seed, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Plot { input, output } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let curves = commands::parse_regret_table(&text)?;
            print_or_write(&regret_svg(&curves), Some(&output))?;
        }
        Command::Serve { port, data_dir, host } => {
            let svc = Service::open(&data_dir)?;
            log::info!("{} sessions restored from {}", svc.session_ids().len(), data_dir.display());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(svc, (host, port).into()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
