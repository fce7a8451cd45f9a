use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orpose::config::ExperimentConfig;
use orpose::error::{Error, Result};
use orpose::fsutil::prepare_out_dir;
use orpose::pipeline::{self, Run, SPLIT_TARGET_EVAL};
use orpose::report::ResultTable;

/// Synthetic occluded-pose benchmark: data generation, training, adaptation and reports.
#[derive(Parser, Debug)]
#[command(name = "orpose", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the source, preview, target-adapt and target-eval splits.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write target-eval variants at severities 1..5.
        #[arg(long)]
        severity_sweep: bool,
    },
    /// Train the pose network on the labeled source split.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Build prior training samples and fit the anatomical prior.
    TrainPrior {
        #[command(flatten)]
        common: Common,
    },
    /// Adapt the pretrained network to the target domain.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// mean_teacher, with_prior or full.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate a checkpoint on a labeled split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; the full variant's best teacher by default.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split name under the run's data directory.
        #[arg(long, default_value = SPLIT_TARGET_EVAL)]
        split: String,
        /// Output subdirectory name under eval/.
        #[arg(long)]
        name: Option<String>,
    },
    /// Source-only and all adaptation variants, with seed-aggregated tables.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Plots and a text summary from finished runs.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Generate { common, .. }
            | Cmd::Pretrain { common }
            | Cmd::TrainPrior { common }
            | Cmd::Adapt { common, .. }
            | Cmd::Evaluate { common, .. }
            | Cmd::Ablate { common }
            | Cmd::Report { common } => common,
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.cmd.common().clone();
    let mut cfg = load_config(&common)?;
    let force = common.force;
    let mut sink = |m: &str| log(m);
    match &cli.cmd {
        Cmd::Generate { severity_sweep, .. } => {
            if *severity_sweep {
                cfg.data.severity_sweep = true;
            }
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                prepare_out_dir(&r.paths.data(), force)?;
                for m in pipeline::generate(&r, &mut sink)? {
                    println!("{}/{}: {} samples", r.paths.data().display(), m.split, m.count);
                }
            }
        }
        Cmd::Pretrain { .. } => {
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                prepare_out_dir(&r.paths.pretrain(), force)?;
                let s = pipeline::pretrain(&r, &mut sink)?;
                println!("{}: best epoch {} holdout pck {:.4}", r.paths.pretrain_ckpt().display(), s.best_epoch, s.best_holdout_pck);
            }
        }
        Cmd::TrainPrior { .. } => {
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                prepare_out_dir(&r.paths.prior(), force)?;
                let (_, s) = pipeline::train_prior_stage(&r, &mut sink)?;
                println!("{}: holdout mse {:.5}", r.paths.prior_ckpt().display(), s.report.holdout_mse);
            }
        }
        Cmd::Adapt { variant, .. } => {
            let v = pipeline::parse_variant(variant)?;
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                prepare_out_dir(&r.paths.adapt(v), force)?;
                let s = pipeline::adapt_stage(&r, v, &mut sink)?;
                for w in &s.warnings {
                    log(&format!("warning: {w}"));
                }
                println!("{}: best epoch {:?}", r.paths.adapt(v).display(), s.best_epoch);
            }
        }
        Cmd::Evaluate { checkpoint, split, name, .. } => {
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                let ckpt = checkpoint.clone().unwrap_or_else(|| r.paths.adapt(orpose_core::adapt::AdaptVariant::Full).join("best.ckpt"));
                let label = name.clone().unwrap_or_else(|| {
                    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let parent = ckpt.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    format!("{parent}_{stem}_{split}")
                });
                let out = r.paths.eval(&label);
                prepare_out_dir(&out, force)?;
                let (row, _) = pipeline::evaluate_stage(&ckpt, &r.paths.split(split), &out, &label, &r.skel, cfg.eval.overlays)?;
                let mut t = ResultTable::new(&r.skel);
                t.rows.push(row);
                print!("{}", t.to_text());
            }
        }
        Cmd::Ablate { .. } => {
            let mut per_seed = Vec::new();
            let mut skel = None;
            for &seed in &cfg.seeds {
                let r = Run::new(&cfg, seed)?;
                per_seed.push(pipeline::ablate_seed(&r, force, &mut sink)?);
                skel = Some(r.skel);
            }
            let skel = skel.expect("validated config has seeds");
            let (table, sev) = pipeline::aggregate_tables(&skel, &per_seed)?;
            table.write(&cfg.out, "ablation")?;
            print!("{}", table.to_text());
            if !sev.rows.is_empty() {
                sev.write(&cfg.out, "severity")?;
                print!("\n{}", sev.to_text());
            }
            if table.rows.iter().any(|r| r.failed.is_some()) {
                return Err(Error::Refused("some ablation variants failed; see the table".into()));
            }
        }
        Cmd::Report { .. } => {
            prepare_out_dir(&cfg.out.join("report"), force)?;
            let rep = pipeline::report(&cfg.out, &mut sink)?;
            for f in &rep.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error kind=usage message={}", serde_json::to_string(&first).unwrap());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(1)
        }
    }
}
