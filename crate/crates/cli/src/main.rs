use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sam_core::envs::{generate_demos, DemoDataset, EnvKind};
use sam_core::trainer::{
    bc_baseline, eval_seed, evaluate_actor, load_actor, onpolicy_ablation, train_with,
    RunMetrics, TrainerConfig,
};
use sam_core::Error;

#[derive(Parser)]
#[command(name = "sam", version, about = "Adversarial imitation from few demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the scripted expert out and write a demonstration file.
    GenDemos {
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train the off-policy adversarial learner.
    Train(RunArgs),
    /// Train the on-policy ablation.
    Onpolicy(RunArgs),
    /// Print return statistics of a saved actor.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvKind,
        /// Episodes.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the cloning baseline on demonstrations and evaluate it.
    Bc(RunArgs),
    /// Flatten metrics files into one CSV of evaluation returns.
    ExportCurves {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// KEY=VALUE override, repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    demos: PathBuf,
    /// Use only the first N demonstrations.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    env: Option<EnvKind>,
    /// Base seed; workers get consecutive seeds from `seed · 1000`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> sam_core::Result<(TrainerConfig, DemoDataset)> {
        let base = match &self.config {
            Some(path) => TrainerConfig::from_json(&read_input(path)?)?,
            None => TrainerConfig::default(),
        };
        let mut config = base.with_overrides(&self.overrides)?;
        if let Some(env) = self.env {
            config.env = env;
        }
        if let Some(seed) = self.seed {
            config = config.with_base_seed(seed);
        }
        config.validate()?;
        if !self.demos.exists() {
            return Err(missing(&self.demos));
        }
        let mut demos = DemoDataset::load(&self.demos)?;
        if let Some(n) = self.n {
            demos = demos.take(n)?;
        }
        Ok((config, demos))
    }
}

fn missing(path: &Path) -> Error {
    Error::Config(format!("{} does not exist", path.display()))
}

fn read_input(path: &Path) -> sam_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => missing(path),
        _ => e.into(),
    })
}

#[derive(Serialize)]
struct CurveRow<'a> {
    run_id: &'a str,
    seed: u64,
    interactions: u64,
    #[serde(rename = "return")]
    ret: f64,
}

fn run_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    match path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
        Some(dir) if stem == "metrics" => dir.to_string(),
        _ => stem.to_string(),
    }
}

fn export_curves(files: &[PathBuf], out: Option<&Path>) -> sam_core::Result<()> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::fs::File::create(p)?)
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    for file in files {
        let metrics = RunMetrics::from_jsonl(&read_input(file)?)?;
        let id = run_id(file);
        for e in &metrics.evals {
            for (seed, stats) in e.seeds.iter().zip(&e.per_seed) {
                w.serialize(CurveRow {
                    run_id: &id,
                    seed: *seed,
                    interactions: e.interactions,
                    ret: stats.mean,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> sam_core::Result<()> {
    match cli.command {
        Command::GenDemos { env, n, seed, out } => {
            let demos = generate_demos(env, n, seed)?;
            std::fs::create_dir_all(&out)?;
            demos.save(out.join("demos.jsonl"))?;
            let resolved = serde_json::json!({ "env": env, "n": n, "seed": seed });
            std::fs::write(out.join("gen_demos.json"), serde_json::to_string_pretty(&resolved)?)?;
            println!("{}", serde_json::to_string(&demos.return_stats())?);
        }
        Command::Train(args) => {
            let (config, demos) = args.resolve()?;
            let outcome = train_with(&config, &demos, Some(&args.out))?;
            let last = outcome.metrics.evals.last();
            println!(
                "{}",
                serde_json::json!({
                    "interactions": outcome.interactions(),
                    "final_mean": last.map(|e| e.mean),
                    "metrics": args.out.join("metrics.jsonl"),
                })
            );
        }
        Command::Onpolicy(args) => {
            let (config, demos) = args.resolve()?;
            let outcome = onpolicy_ablation(&config, &demos, Some(&args.out))?;
            let last = outcome.metrics.evals.last();
            println!(
                "{}",
                serde_json::json!({
                    "interactions": outcome.interactions,
                    "final_mean": last.map(|e| e.mean),
                    "metrics": args.out.join("metrics.jsonl"),
                })
            );
        }
        Command::Evaluate { checkpoint, env, n, seed } => {
            if !checkpoint.exists() {
                return Err(missing(&checkpoint));
            }
            let actor = load_actor(&checkpoint, env)?;
            let stats = evaluate_actor(&actor, env, n, seed)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Bc(args) => {
            let (config, demos) = args.resolve()?;
            std::fs::create_dir_all(&args.out)?;
            std::fs::write(args.out.join("config.json"), config.to_json()?)?;
            let actor = bc_baseline(&demos, config.bc_epochs, &config)?;
            let dir = args.out.join("checkpoints").join("final");
            std::fs::create_dir_all(&dir)?;
            actor.net().save(dir.join("actor.json"))?;
            let mut scores = Vec::new();
            for &seed in &config.seeds {
                let stats = evaluate_actor(&actor, config.env, config.eval_episodes, eval_seed(seed))?;
                scores.push(serde_json::json!({ "seed": seed, "stats": stats }));
            }
            let report = serde_json::json!({ "demos": demos.len(), "evaluations": scores });
            std::fs::write(args.out.join("bc_eval.json"), serde_json::to_string_pretty(&report)?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::ExportCurves { metrics, out } => export_curves(&metrics, out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is_config() { ("config", 2) } else { ("runtime", 3) };
            let line = serde_json::json!({ "error": kind, "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
