use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use diflo::TaskKind;
use diflo_cli::run::{DEFAULT_SWEEP_ALPHAS, SWEEP_FILE};
use diflo_cli::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_landscape, cmd_predict, cmd_repro_table1, cmd_sweep, cmd_train,
    ExperimentConfig, Method, ScoreKind,
};

#[derive(Parser)]
#[command(
    name = "diflo",
    version,
    about = "Diverging-flow training, scoring and conformal evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Full-width network and the long schedule
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true)]
    task: Option<TaskKind>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    score: Option<ScoreKind>,
    /// Miscoverage level of the conformal interval
    #[arg(long, global = true)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/cal/test/ood split files
    GenData,
    /// Train a velocity field and write checkpoint and loss history
    Train,
    /// Score, calibrate and write metrics
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full model against λ=0, β=0 and uniform-negative variants
    Ablate {
        /// Also train the flow-matching baseline
        #[arg(long)]
        with_baselines: bool,
    },
    /// Coverage and FPR over several miscoverage levels
    Sweep {
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// DOT scores over a grid of conditions on [-1, 1]^2
    Landscape {
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Every synthetic benchmark row plus acceptance checks
    ReproTable1,
    /// Mean prediction, DOT score and accept flag for one condition (JSON on stdout)
    Predict {
        /// Comma-separated condition values
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        cond: Vec<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self, task: Option<TaskKind>) -> Result<ExperimentConfig> {
        let task = task.or(self.task);
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, task, self.paper_scale)?,
            None => ExperimentConfig::parse_with_task("", task, self.paper_scale)?,
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.score {
            cfg.score = s;
        }
        if let Some(a) = self.alpha {
            cfg.train.alpha = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DIFLO_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("DIFLO_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let c = &cli.common;
    match &cli.command {
        Command::GenData => {
            for p in cmd_gen_data(&c.load(None)?)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Train => {
            cmd_train(&c.load(None)?)?;
        }
        Command::Eval { checkpoint } => {
            cmd_eval(&c.load(None)?, checkpoint.as_deref())?;
        }
        Command::Ablate { with_baselines } => {
            for (name, m) in cmd_ablate(&c.load(None)?, *with_baselines)? {
                eprintln!(
                    "{name:>18}: auroc={:.4} fpr={:.4} coverage={:.4}",
                    m.auroc, m.fpr, m.empirical_coverage
                );
            }
        }
        Command::Sweep { alphas } => {
            let cfg = c.load(None)?;
            let alphas = alphas.clone().unwrap_or_else(|| DEFAULT_SWEEP_ALPHAS.to_vec());
            for r in cmd_sweep(&cfg, &alphas, cfg.score, SWEEP_FILE)? {
                eprintln!("alpha={:.3} coverage={:.4} fpr={:.4}", r.alpha, r.coverage, r.fpr);
            }
        }
        Command::Landscape { resolution, checkpoint } => {
            let n = cmd_landscape(&c.load(None)?, checkpoint.as_deref(), *resolution)?;
            log::info!("wrote {n} grid cells");
        }
        Command::ReproTable1 => {
            let reg = c.load(Some(TaskKind::Regression))?;
            let mut gen = c.load(Some(TaskKind::Generation))?;
            gen.out = reg.out.clone();
            let report = cmd_repro_table1(&reg, &gen)?;
            for r in &report.rows {
                eprintln!(
                    "{:<10} {:<28} auroc={:.4} (ref {:.3}) fpr={:.4} (ref {:.4})",
                    r.task, r.method, r.auroc, r.reference_auroc, r.fpr, r.reference_fpr
                );
            }
            for cr in &report.criteria {
                eprintln!(
                    "criterion {}: {} ... {}",
                    cr.id,
                    cr.name,
                    if cr.pass { "PASS" } else { "FAIL" }
                );
                eprintln!("    {}", cr.detail);
            }
            return Ok(report.all_pass());
        }
        Command::Predict { cond, checkpoint } => {
            let p = cmd_predict(&c.load(None)?, checkpoint.as_deref(), cond)?;
            println!("{}", serde_json::to_string(&p)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
