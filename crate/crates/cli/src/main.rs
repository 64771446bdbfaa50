use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dprandp_core::experiment::Method;
use dprandp_core::pipeline::{LedgerMechanism, PrivacyLedger};
use dprandp_core::random_prior::{generate, save_dataset, DatasetMeta};
use dprandp_privacy::{calibrate_sigma, epsilon_of, GaussianMechanismSpec, SubsampledGaussianSpec};

mod error;
mod report;
mod runs;
mod workspace;

use error::{usage, CliError, Result};

/// Differentially private training from random-process priors.
#[derive(Parser)]
#[command(name = "dprandp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest noise multiplier on the 0.1 grid meeting (ε, δ).
    Calibrate(CalibrateArgs),
    /// ε of a run at a given noise multiplier.
    Account(AccountArgs),
    /// Write the Phase I and private datasets to disk.
    GenData(GenDataArgs),
    /// Phase I: pretrain the encoder on synthetic images.
    Pretrain(ConfigArgs),
    /// Private training, one run per seed.
    Train(TrainArgs),
    /// DP-RandP over a list of Phase II lengths.
    Sweep(SweepArgs),
    /// CSV tables and SVG plots over finished runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    /// Poisson sampling rate.
    #[arg(long)]
    q: f64,
    #[arg(long)]
    steps: u64,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    delta: f64,
    /// Noise multiplier of a feature-mean release composed with the run.
    #[arg(long)]
    mean_sigma: Option<f64>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Images per Phase I generator.
    #[arg(long, default_value_t = 512)]
    count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    DpRandp,
    Cold,
    ColdTwoStage,
    LpOnly,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::DpRandp => Method::DpRandp,
            MethodArg::Cold => Method::Cold,
            MethodArg::ColdTwoStage => Method::ColdTwoStage,
            MethodArg::LpOnly => Method::LpOnly,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "dp-randp")]
    method: MethodArg,
    /// Encoder checkpoint; defaults to the one in the output directory,
    /// pretraining first if it is missing or stale.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated Phase II lengths; defaults to a spread over [0, T].
    #[arg(long, value_delimiter = ',')]
    n1: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory holding `runs/` and/or `sweep.csv`.
    #[arg(long)]
    runs: PathBuf,
}

fn print_record(record: serde_json::Value) {
    println!("{record}");
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let acct = Default::default();
    let sigma = calibrate_sigma(a.eps, a.delta, a.q, a.steps, &acct)?;
    let eps = epsilon_of(&SubsampledGaussianSpec::new(sigma, a.q, a.steps)?, a.delta, &acct)?;
    println!("sigma = {sigma}");
    print_record(serde_json::json!({
        "command": "calibrate",
        "target_epsilon": a.eps,
        "delta": a.delta,
        "q": a.q,
        "steps": a.steps,
        "sigma": sigma,
        "epsilon": eps,
    }));
    Ok(())
}

fn account(a: &AccountArgs) -> Result<()> {
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return usage("delta must lie in (0, 1)");
    }
    let mut ledger = PrivacyLedger::new(a.delta, Default::default());
    let run = if a.q == 1.0 {
        LedgerMechanism::Gaussian(GaussianMechanismSpec::new(a.sigma, a.steps)?)
    } else {
        LedgerMechanism::Subsampled(SubsampledGaussianSpec::new(a.sigma, a.q, a.steps)?)
    };
    ledger.record(run, "run");
    if let Some(s) = a.mean_sigma {
        ledger.record(LedgerMechanism::Gaussian(GaussianMechanismSpec::new(s, 1)?), "feature_mean");
    }
    let eps = ledger.closed_epsilon()?;
    let accountant = if a.q == 1.0 { "gdp" } else { "pld" };
    println!("epsilon = {eps}");
    print_record(serde_json::json!({
        "command": "account",
        "sigma": a.sigma,
        "q": a.q,
        "steps": a.steps,
        "delta": a.delta,
        "mean_sigma": a.mean_sigma,
        "accountant": accountant,
        "epsilon": eps,
    }));
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = workspace::load_config(&a.cfg.config, a.cfg.output_dir.as_deref())?;
    if a.count == 0 {
        return usage("--count must be positive");
    }
    let dir = cfg.output_dir.join("data");
    workspace::ensure_dir(&dir)?;
    for (i, g) in cfg.generator.iter().enumerate() {
        let images: Vec<Vec<f64>> = generate(g, a.count)?.into_iter().map(|t| t.data).collect();
        let path = dir.join(format!("pretrain_{i}.dpri"));
        let meta = DatasetMeta {
            generators: vec![g.clone()],
            seed: g.seed,
            labels: None,
            nuisance: 0.0,
        };
        save_dataset(&path, &images, g.image_size, g.channels, &meta)?;
        println!("{}", path.display());
    }
    let (train, eval) = cfg.private_dataset.build()?;
    let g0 = &cfg.private_dataset.classes[0];
    for (name, split, seed) in [
        ("private_train", &train, cfg.private_dataset.seed),
        ("private_eval", &eval, dprandp_core::rng::derive_seed(cfg.private_dataset.seed, &[1])),
    ] {
        let path = dir.join(format!("{name}.dpri"));
        let images: Vec<Vec<f64>> = split.iter().map(|e| e.input.clone()).collect();
        let meta = DatasetMeta {
            generators: cfg.private_dataset.classes.clone(),
            seed,
            labels: Some(split.iter().map(|e| e.label).collect()),
            nuisance: cfg.private_dataset.nuisance,
        };
        save_dataset(&path, &images, g0.image_size, g0.channels, &meta)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn pretrain(a: &ConfigArgs) -> Result<()> {
    let cfg = workspace::load_config(&a.config, a.output_dir.as_deref())?;
    let (_, path) = workspace::pretrain(&cfg)?;
    println!("{}", path.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = workspace::load_config(&a.cfg.config, a.cfg.output_dir.as_deref())?;
    let method: Method = a.method.into();
    let prep = runs::prepare(&cfg, method, a.encoder.as_deref())?;
    for &seed in &cfg.seeds.runs {
        let out = runs::train_one(&cfg, method, &prep, seed)?;
        let r = &out.report;
        println!(
            "{} seed {seed}: accuracy {:.4} ema {:.4} epsilon {:.4} hash {} -> {}",
            r.method,
            r.final_accuracy,
            r.ema_accuracy,
            r.closed_epsilon,
            out.report_hash,
            out.dir.display()
        );
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = workspace::load_config(&a.cfg.config, a.cfg.output_dir.as_deref())?;
    let n1 = if a.n1.is_empty() { runs::default_sweep(cfg.plan.t_total) } else { a.n1.clone() };
    if let Some(&bad) = n1.iter().find(|&&n| n > cfg.plan.t_total) {
        return usage(format!("N1 = {bad} exceeds T = {}", cfg.plan.t_total));
    }
    let prep = runs::prepare(&cfg, Method::DpRandp, a.encoder.as_deref())?;
    let (rows, path) = runs::sweep(&cfg, &n1, &prep, a.jobs.max(1))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} rows ({failed} failed) -> {}", rows.len(), path.display());
    if failed == rows.len() {
        return Err(CliError::Numerical("every sweep row failed".into()));
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    for p in report::report(Path::new(&a.runs))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Account(a) => account(a),
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dprandp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
