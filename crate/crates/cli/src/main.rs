use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use saug_core::config::RunConfig;
use saug_core::pipeline::{
    input_pagerank, run_pipeline, run_stage, sweep, sweep_csv, PipelineError, Stage, SweepAxis, DEFAULT_RUN_ROOT,
    RUN_ROOT_ENV,
};

#[derive(Parser)]
#[command(name = "saug", version, about = "Selective structural augmentation for long-tailed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration. Omitted fields keep their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set augment.hub_threshold=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root under which run directories are created.
    #[arg(long, env = RUN_ROOT_ENV, default_value = DEFAULT_RUN_ROOT)]
    run_root: PathBuf,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Seed to run; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// PageRank of the input graph as JSON.
    Pagerank {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Hub/tail partition and task split.
    Sample(StageArgs),
    /// Pretrain the link predictor and label classifier.
    Pretrain(StageArgs),
    /// Denoise hubs and discover tail neighbors.
    Augment(StageArgs),
    /// Resample tails and attach pseudo neighbors.
    Generate(StageArgs),
    /// Train the backbone on the augmented graph.
    Train(StageArgs),
    /// Evaluate the trained backbone on the test split.
    Eval(StageArgs),
    /// All stages for every configured seed, or just `--seed`.
    Pipeline(StageArgs),
    /// One pipeline run per value and seed; CSV of metric vs value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of K, M, L, P, Q.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> std::result::Result<RunConfig, PipelineError> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path, &common.overrides),
        None => RunConfig::from_toml_with_overrides("", &common.overrides),
    };
    cfg.map_err(|e| PipelineError { stage: Stage::Config, message: e.to_string() })
}

fn stage_run(args: &StageArgs, stage: Stage) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let dir = run_stage(&cfg, seed, &args.common.run_root, stage)?;
    println!("{}", dir.path.display());
    Ok(())
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pagerank { common, out } => {
            let pr = input_pagerank(&load_config(&common)?)?;
            write_or_print(out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&pr)?))
        }
        Command::Sample(a) => stage_run(&a, Stage::Sample),
        Command::Pretrain(a) => stage_run(&a, Stage::Pretrain),
        Command::Augment(a) => stage_run(&a, Stage::Augment),
        Command::Generate(a) => stage_run(&a, Stage::Generate),
        Command::Train(a) => stage_run(&a, Stage::Train),
        Command::Eval(a) => stage_run(&a, Stage::Eval),
        Command::Pipeline(a) => {
            let mut cfg = load_config(&a.common)?;
            if let Some(seed) = a.seed {
                cfg.seeds = vec![seed];
            }
            let report = run_pipeline(&cfg, &a.common.run_root)?;
            for r in &report.runs {
                let auc = r.metrics.auc.map(|x| format!(" auc={x:.4}")).unwrap_or_default();
                println!(
                    "seed={} macro={:.4} micro={:.4}{auc} secs={:.1}",
                    r.seed, r.metrics.macro_f1, r.metrics.micro_f1, r.metrics.wall_clock_secs
                );
            }
            let agg = &report.aggregate;
            let auc = agg.auc.map(|m| format!(" auc={m}")).unwrap_or_default();
            println!("config={} macro={} micro={}{auc}", &report.config_hash[..16], agg.macro_f1, agg.micro_f1);
            Ok(())
        }
        Command::Sweep { common, axis, values, out } => {
            let cfg = load_config(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(&cfg, axis, &values, &common.run_root)?;
            write_or_print(out.as_ref(), &sweep_csv(&rows))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("saug: {e:#}");
            ExitCode::FAILURE
        }
    }
}
