use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lsdm::data::{sample_circle_model, write_csv};
use lsdm::harness::{
    run_ablation, run_verification_suite, save_checkpoint, AblationGrid, Checkpoint, ExperimentConfig, HarnessError,
    LatentModel, Scope, VerifyOptions,
};
use lsdm::lsdm::{generate_conditional, load_bundle, risk_decomposition, train_autoencoder, Divergence, Variant};
use lsdm::Rng;

#[derive(Parser)]
#[command(name = "lsdm", version, about = "Latent space distribution matching on the circle model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only, instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn first_seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }
}

#[derive(Subcommand)]
enum Command {
    /// Step 1 only: fit the autoencoder and save encoder/decoder checkpoints.
    TrainAe(Common),
    /// Full run with the adversarial latent generator, one per seed.
    TrainGen {
        #[command(flatten)]
        common: Common,
        /// clsdm matches decoded pairs, dlsdm matches latent pairs.
        #[arg(long)]
        variant: Option<Variant>,
        /// Critic objective: w1, js or kl.
        #[arg(long)]
        divergence: Option<Divergence>,
    },
    /// Full run with the latent score model, one per seed.
    TrainDiffusion(Common),
    /// Evaluate a saved bundle on freshly sampled test data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Run every cell of a grid file for every seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: PathBuf,
        /// Also write SVG line charts next to the plot data.
        #[arg(long)]
        svg: bool,
    },
    /// Randomized property checks; writes report.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to these scopes (repeat or comma-separate). Default: all.
        #[arg(long, value_delimiter = ',')]
        scope: Vec<Scope>,
    },
    /// Write a sampled circle dataset as CSV.
    ExportData(Common),
}

fn single_cell(name: &str, cfg: &ExperimentConfig) -> AblationGrid {
    serde_json::from_value(json!({
        "name": name,
        "base": serde_json::to_value(cfg).expect("config serializes"),
        "cells": [{"x": 0.0}],
    }))
    .expect("grid shape")
}

fn print_records(out: &Path, outcome: &lsdm::harness::AblationOutcome) {
    for (_, r) in &outcome.records {
        println!(
            "{} seed={} status={:?} w1_joint_test={} recon_test={}",
            r.run_id,
            r.seed,
            r.status,
            r.w1_joint_test.map_or("-".into(), |v| format!("{v:.4}")),
            r.recon_test.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    println!("wrote {}", out.join("metrics.csv").display());
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::TrainAe(c) => {
            let cfg = c.config()?;
            cfg.validate()?;
            for &seed in &cfg.seeds {
                let rng = Rng::new(seed);
                let data = sample_circle_model(&cfg.data, &rng.child("data"))?;
                let (ae, history) = train_autoencoder(&data.all_responses(), &cfg.step_one, &rng.child("step_one"))?;
                let dir = c.out.join("checkpoints");
                let id = format!("{}-{seed}", cfg.hash());
                save_checkpoint(&Checkpoint::Mlp(ae.encoder.clone(), None), &dir.join(format!("{id}.encoder.json")))?;
                save_checkpoint(&Checkpoint::Mlp(ae.decoder.clone(), None), &dir.join(format!("{id}.decoder.json")))?;
                println!(
                    "{id} recon_train={:.4} recon_test={:.4} final_loss={:.4}",
                    ae.recon_error(&data.all_responses())?,
                    ae.recon_error(&data.test.y)?,
                    history.recon.last().copied().unwrap_or(f64::NAN)
                );
            }
            Ok(true)
        }
        Command::TrainGen {
            common,
            variant,
            divergence,
        } => {
            let mut cfg = common.config()?;
            cfg.latent_model = LatentModel::Adversarial;
            if let Some(v) = variant {
                cfg.step_two.variant = v;
            }
            if let Some(d) = divergence {
                cfg.step_two.divergence = d;
            }
            let outcome = run_ablation(&single_cell("train-gen", &cfg), common.jobs(), &common.out, false)?;
            print_records(&common.out, &outcome);
            Ok(true)
        }
        Command::TrainDiffusion(c) => {
            let mut cfg = c.config()?;
            cfg.latent_model = LatentModel::Diffusion;
            let outcome = run_ablation(&single_cell("train-diffusion", &cfg), c.jobs(), &c.out, false)?;
            print_records(&c.out, &outcome);
            Ok(true)
        }
        Command::Eval { common, bundle } => {
            let cfg = common.config()?;
            let seed = common.first_seed(&cfg);
            let bundle = load_bundle(&bundle)?;
            let rng = Rng::new(seed);
            let data = sample_circle_model(&cfg.data, &rng.child("data"))?;
            let generated = generate_conditional(&bundle, &data.test.x, 1, &mut rng.child("eval"))?;
            let risk = risk_decomposition(&bundle.ae, &data.test, &generated)?;
            let report = json!({
                "seed": seed,
                "test_size": data.test.len(),
                "w1_joint_test": risk.joint_w1,
                "recon_term": risk.recon_term,
                "matched_w1": risk.matched_w1,
                "split_holds": risk.holds,
                "recon_test": bundle.ae.recon_error(&data.test.y)?,
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(true)
        }
        Command::Ablate { common, grid, svg } => {
            let mut grid = AblationGrid::load(&grid)?;
            if let Some(s) = common.seed {
                grid.base = lsdm::harness::merge_json(grid.base, json!({"seeds": [s]}));
            }
            let outcome = run_ablation(&grid, common.jobs(), &common.out, svg)?;
            for row in &outcome.summary {
                println!(
                    "cell {} x={} ok={}/{} median_w1_joint_test={}",
                    row.cell,
                    row.x,
                    row.ok,
                    row.runs,
                    row.median_w1_joint_test.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
            println!("wrote {}", common.out.join("summary.csv").display());
            Ok(true)
        }
        Command::Verify { common, scope } => {
            let opts = VerifyOptions {
                scopes: if scope.is_empty() { Scope::ALL.to_vec() } else { scope },
                seed: common.seed.unwrap_or(0),
                ..Default::default()
            };
            let report = run_verification_suite(&opts);
            for c in &report.checks {
                let mark = if c.ok() { "PASS" } else { "FAIL" };
                println!(
                    "{mark} {:<10} {:<28} {:>5}/{:<5} worst slack {:.3e} ({:.2}s){}",
                    c.scope.to_string(),
                    c.name,
                    c.passed,
                    c.trials,
                    c.worst_slack,
                    c.seconds,
                    c.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
                );
            }
            let path = common.out.join("report.json");
            report.write(&path)?;
            println!("wrote {}", path.display());
            Ok(report.all_passed())
        }
        Command::ExportData(c) => {
            let cfg = c.config()?;
            let seed = c.first_seed(&cfg);
            let data = sample_circle_model(&cfg.data, &Rng::new(seed).child("data"))?;
            let path = c.out.join(format!("circle-{seed}.csv"));
            write_csv(&data, &path)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
