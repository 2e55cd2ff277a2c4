use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use semsync_core::ctde::{read_dataset, write_dataset};
use semsync_core::harness::{
    self, ablate, collect, export, export_from, load_config, load_model, structural_checks, sweep, train_model, Check,
    RunConfig,
};
use semsync_core::policies::{OffloadPolicy, UpdatePolicy};
use semsync_core::sim::EventTrace;

/// Edge state-synchronization simulator: collect traces, train the learned
/// policies, and run evaluation sweeps.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set workload.lambda_in=55`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one closed-loop episode and print its metrics as JSON.
    Simulate {
        /// Write every processed event as a JSON line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Collect exploring-expert traces and write the labeled dataset.
    Collect {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train encoder and heads on a dataset and save the parameters.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep arrival rates, policies and seeds, then export the results.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain for each semantic dimension and evaluate at one arrival rate.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render results, histograms and the manifest from a saved runs.json.
    Export {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref(), &cli.overrides).context("loading configuration")?;
    match cli.cmd {
        Cmd::Simulate { trace } => {
            let needs = cfg.policy.update.needs_encoder() || cfg.policy.offload == OffloadPolicy::Semantic;
            let model = if needs { Some(load_model(&cfg)?) } else { None };
            let mut tr = match &trace {
                Some(p) => Some(EventTrace::new(BufWriter::new(
                    File::create(p).with_context(|| format!("creating {}", p.display()))?,
                ))),
                None => None,
            };
            let out = harness::simulate(&cfg, model.as_ref(), tr.as_mut())?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
            Ok(true)
        }
        Cmd::Collect { out } => {
            let path = out.unwrap_or_else(|| cfg.output.dataset.clone());
            let data = collect(&cfg)?;
            ensure_parent(&path)?;
            write_dataset(BufWriter::new(File::create(&path)?), &data)?;
            let pos = data.iter().filter(|s| s.y_sn).count();
            let local = data.iter().filter(|s| s.y_ap).count();
            eprintln!(
                "{} samples -> {} ({} update labels, {} local labels)",
                data.len(),
                path.display(),
                pos,
                local
            );
            Ok(true)
        }
        Cmd::Train { data, out } => {
            let data_path = data.unwrap_or_else(|| cfg.output.dataset.clone());
            let data = read_dataset(BufReader::new(
                File::open(&data_path).with_context(|| format!("opening {}", data_path.display()))?,
            ))?;
            let t = train_model(&cfg, cfg.encoder, &data, |e, l| {
                eprintln!("epoch {:>3}  loss {l:.5}", e + 1)
            })?;
            let path = out.unwrap_or_else(|| cfg.output.params.clone());
            ensure_parent(&path)?;
            t.model.save(&path)?;
            let report_path = path.with_extension("report.json");
            fs::write(
                &report_path,
                serde_json::to_string_pretty(&serde_json::json!({ "train": t.report, "holdout": t.holdout }))?,
            )?;
            eprintln!(
                "saved {} (holdout: update recall {:.3}, offload accuracy {:.3})",
                path.display(),
                t.holdout.sn_positive_recall,
                t.holdout.ap_accuracy
            );
            let converged = match (t.report.curve.first(), t.report.curve.last()) {
                (Some(a), Some(b)) => *b <= 0.5 * a,
                _ => false,
            };
            report(&[Check::new(
                "training convergence",
                converged,
                format!("first {:?} last {:?}", t.report.curve.first(), t.report.curve.last()),
            )])
        }
        Cmd::Sweep { out } => {
            let needs = cfg.sweep.policies.contains(&UpdatePolicy::Semantic)
                || cfg.sweep.policies.iter().any(|p| p.needs_encoder());
            let model = if needs { Some(load_model(&cfg)?) } else { None };
            let set = sweep(&cfg, model.as_ref())?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            write_all(&dir, &cfg, &set, "sweep")
        }
        Cmd::Ablate { data, out } => {
            let data_path = data.unwrap_or_else(|| cfg.output.dataset.clone());
            let data = read_dataset(BufReader::new(
                File::open(&data_path).with_context(|| format!("opening {}", data_path.display()))?,
            ))?;
            let set = ablate(&cfg, &data, |m| eprintln!("{m}"))?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.join("ablation"));
            write_all(&dir, &cfg, &set, "ablate")
        }
        Cmd::Export { runs, out } => {
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let files = export_from(&runs, &dir, &cfg)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
            Ok(true)
        }
    }
}

fn write_all(dir: &Path, cfg: &RunConfig, set: &harness::RunSet, command: &str) -> Result<bool> {
    let files = export(dir, cfg, set, command)?;
    for s in harness::summarize(&set.rows) {
        println!(
            "lambda {:>5}  {:<14} d={}  success {:.4} ± {:.4}  updates/s {:>7.3} ± {:.3}",
            s.lambda, s.policy, s.d_sem, s.success_rate_mean, s.success_rate_std, s.update_freq_mean, s.update_freq_std
        );
    }
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    report(&structural_checks(cfg, set))
}

fn report(checks: &[Check]) -> Result<bool> {
    let mut ok = true;
    for c in checks {
        eprintln!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}
