//! Private runs, sweeps and their on-disk records.

use std::fs;
use std::path::{Path, PathBuf};

use dprandp_core::dp_optimizer::write_metrics_csv;
use dprandp_core::experiment::{default_n1, ExperimentConfig, Method};
use dprandp_core::models::{Example, ParameterVector};
use dprandp_core::pipeline::{sweep_allocation, PhasePlan, RunReport, SweepRow};
use serde::Serialize;

use crate::error::{usage, CliError, Result};
use crate::workspace::{encoder, ensure_dir, json_bytes, sha256_hex, write_json};

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::DpRandp => "dp_randp",
        Method::Cold => "cold",
        Method::ColdTwoStage => "cold_two_stage",
        Method::LpOnly => "lp_only",
    }
}

pub fn plan_for(cfg: &ExperimentConfig, method: Method) -> Result<PhasePlan> {
    Ok(match method {
        Method::LpOnly => cfg.lp_plan()?,
        _ => cfg.phase_plan()?,
    })
}

fn needs_pretrained(method: Method) -> bool {
    matches!(method, Method::DpRandp | Method::LpOnly)
}

fn epsilon_label(eps: f64) -> String {
    if eps.is_finite() {
        format!("{eps}")
    } else {
        "inf".into()
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    method: &'a str,
    run_seed: u64,
    pretrain_seed: u64,
    data_seed: u64,
    /// Hash of the resolved config, method, seed and encoder checkpoint.
    input_hash: &'a str,
    /// Hash of the report with its wall time zeroed.
    report_hash: &'a str,
    files: &'a [String],
}

/// Hash of a report that ignores wall-clock time.
pub fn report_hash(report: &RunReport) -> Result<String> {
    let mut r = report.clone();
    r.wall_time_s = 0.0;
    Ok(sha256_hex(&[&json_bytes(&r)?]))
}

pub struct Prepared {
    pub encoder: ParameterVector,
    pub encoder_bytes: Vec<u8>,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

pub fn prepare(cfg: &ExperimentConfig, method: Method, encoder_ckpt: Option<&Path>) -> Result<Prepared> {
    let (encoder, encoder_bytes) = if needs_pretrained(method) {
        encoder(cfg, encoder_ckpt)?
    } else {
        (ParameterVector::zeros(cfg.encoder.layout()), Vec::new())
    };
    let (train, eval) = cfg.private_dataset.build()?;
    Ok(Prepared {
        encoder,
        encoder_bytes,
        train,
        eval,
    })
}

pub struct RunOutcome {
    pub report: RunReport,
    pub dir: PathBuf,
    pub report_hash: String,
}

/// One seeded run, written to its own directory under `output_dir/runs`.
pub fn train_one(cfg: &ExperimentConfig, method: Method, prep: &Prepared, seed: u64) -> Result<RunOutcome> {
    let plan = plan_for(cfg, method)?;
    let mut report = cfg.run(method, &plan, &prep.encoder, &prep.train, &prep.eval, seed)?;
    if !(report.final_accuracy.is_finite() && report.ema_accuracy.is_finite()) {
        return Err(CliError::Numerical("run finished with a non-finite accuracy".into()));
    }
    let name = method_name(method);
    let dir = cfg.output_dir.join("runs").join(format!(
        "{name}_eps{}_n1{}_seed{seed}",
        epsilon_label(plan.epsilon_total),
        report.plan.n1
    ));
    ensure_dir(&dir)?;

    let mut resolved = cfg.clone();
    resolved.seeds.runs = vec![seed];
    let input_hash = sha256_hex(&[
        &json_bytes(&resolved)?,
        name.as_bytes(),
        &seed.to_le_bytes(),
        &prep.encoder_bytes,
    ]);

    let mut files = vec!["config.json".to_string(), "report.json".to_string()];
    for (file, log) in [("phase2.csv", &report.phase2_metrics), ("phase3.csv", &report.phase3_metrics)] {
        if !log.is_empty() {
            let mut out = Vec::new();
            write_metrics_csv(&mut out, log)?;
            fs::write(dir.join(file), out)?;
            report.metric_files.push(file.into());
            files.push(file.into());
        }
    }
    let hash = report_hash(&report)?;
    files.push("manifest.json".into());
    write_json(&dir.join("config.json"), &resolved)?;
    write_json(&dir.join("report.json"), &report)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            method: name,
            run_seed: seed,
            pretrain_seed: cfg.seeds.pretrain,
            data_seed: cfg.private_dataset.seed,
            input_hash: &input_hash,
            report_hash: &hash,
            files: &files,
        },
    )?;
    Ok(RunOutcome {
        report,
        dir,
        report_hash: hash,
    })
}

/// Default sweep points: both extremes and a spread of interior splits.
pub fn default_sweep(t_total: u64) -> Vec<u64> {
    let mut v = vec![0, t_total / 20, default_n1(t_total), t_total / 4, t_total / 2, t_total];
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct SweepCsvRow {
    pub seed: u64,
    pub n1: u64,
    pub epsilon1_fraction: Option<f64>,
    pub accuracy: Option<f64>,
    pub ema_accuracy: Option<f64>,
    pub closed_epsilon: Option<f64>,
    pub error: Option<String>,
}

/// DP-RandP at every N₁ for every seed; seeds are spread over `jobs`
/// threads. Row order is fixed by (seed, N₁) whatever the thread count.
pub fn sweep(cfg: &ExperimentConfig, n1_list: &[u64], prep: &Prepared, jobs: usize) -> Result<(Vec<SweepCsvRow>, PathBuf)> {
    if n1_list.is_empty() {
        return usage("the sweep needs at least one N1 value");
    }
    let base = cfg.phase_plan()?;
    let seeds = &cfg.seeds.runs;
    let jobs = jobs.clamp(1, seeds.len());
    let per_seed: Vec<Vec<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let base = &base;
                s.spawn(move || {
                    seeds
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % jobs == j)
                        .map(|(i, &seed)| {
                            let rows = sweep_allocation(base, n1_list, &cfg.accounting, &mut |p| {
                                cfg.run(Method::DpRandp, p, &prep.encoder, &prep.train, &prep.eval, seed)
                            });
                            (i, rows)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(usize, Vec<SweepRow>)> =
            handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, r)| r).collect()
    });
    let rows: Vec<SweepCsvRow> = seeds
        .iter()
        .zip(per_seed)
        .flat_map(|(&seed, rows)| {
            rows.into_iter().map(move |r| SweepCsvRow {
                seed,
                n1: r.n1,
                epsilon1_fraction: r.epsilon1_fraction,
                accuracy: r.accuracy,
                ema_accuracy: r.ema_accuracy,
                closed_epsilon: r.closed_epsilon,
                error: r.error,
            })
        })
        .collect();

    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(
        &cfg.output_dir.join("sweep_manifest.json"),
        &serde_json::json!({
            "config": cfg,
            "n1": n1_list,
            "input_hash": sha256_hex(&[&json_bytes(cfg)?, &json_bytes(&n1_list)?, &prep.encoder_bytes]),
            "files": ["sweep.csv", "sweep_manifest.json"],
        }),
    )?;
    Ok((rows, path))
}
