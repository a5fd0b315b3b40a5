//! Command-line entry points for the lab.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clicklab::data::{gen_synthetic, load_csv, write_csv_path};
use clicklab::runner::{
    apply_variant, evaluate_checkpoint, load_checkpoint, one_epoch, scale_sweep, train,
    write_sweep_csv, AblationVariant, GenDataConfig, SweepMode, TrainConfig,
};

#[derive(Parser)]
#[command(name = "clicklab", about = "Collaborative-ensemble CTR training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CTR dataset and write it as CSV.
    GenData {
        /// TOML file with [schema] and [synthetic] sections.
        spec: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per a TOML config.
    Train {
        config: PathBuf,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a CSV dataset.
    Evaluate {
        checkpoint: PathBuf,
        csv: PathBuf,
    },
    /// Train the base config plus ablation variants.
    Ablate {
        config: PathBuf,
        /// Comma-separated variant names, or "all".
        #[arg(long, default_value = "all")]
        variants: String,
        /// Comma-separated seeds; defaults to the config's seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding-scale sweep over modes and multipliers.
    ScaleSweep {
        config: PathBuf,
        /// Comma-separated multipliers.
        #[arg(long, default_value = "1,2,3,4,10")]
        multipliers: String,
        /// Comma-separated modes among se,me,ours_sum,ours_concat.
        #[arg(long, default_value = "se,me,ours_sum,ours_concat")]
        modes: String,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single pass in stored order with an NE learning curve.
    OneEpoch {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { spec, out } => {
            let cfg = GenDataConfig::load(&spec).map_err(|e| e.to_string())?;
            let ds = gen_synthetic(&cfg.spec()).map_err(|e| e.to_string())?;
            write_csv_path(&ds, &out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} rows ({} positive rate) to {}",
                ds.len(),
                ds.positive_rate(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config, out } => {
            let mut cfg = TrainConfig::load(&config).map_err(|e| e.to_string())?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let (record, _) = train(&cfg).map_err(|e| e.to_string())?;
            print_record_summary(&record);
            Ok(())
        }
        Command::Evaluate { checkpoint, csv } => {
            let ckpt = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
            let tm_cfg: TrainConfig =
                serde_json::from_str(&ckpt.config_json).map_err(|e| e.to_string())?;
            let ds = load_csv(&csv, &tm_cfg.data.schema).map_err(|e| e.to_string())?;
            if ds.oov_mapped > 0 {
                eprintln!("warning: {} out-of-vocabulary ids mapped to 0", ds.oov_mapped);
            }
            let (eval, _) = evaluate_checkpoint(&checkpoint, &ds).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&eval).expect("serializes"));
            Ok(())
        }
        Command::Ablate {
            config,
            variants,
            seeds,
            out,
        } => {
            let mut base = TrainConfig::load(&config).map_err(|e| e.to_string())?;
            if out.is_some() {
                base.out_dir = out;
            }
            let variants: Vec<AblationVariant> = if variants.trim() == "all" {
                AblationVariant::all().to_vec()
            } else {
                parse_list(&variants)?
            };
            let seeds: Vec<u64> = match seeds {
                Some(s) => parse_list(&s)?,
                None => vec![base.seed],
            };
            for variant in variants {
                for &seed in &seeds {
                    let mut cfg = apply_variant(&base, variant);
                    cfg.seed = seed;
                    if let Some(dir) = &base.out_dir {
                        cfg.out_dir = Some(dir.join(format!("{variant}_s{seed}")));
                    }
                    let (record, _) = train(&cfg).map_err(|e| e.to_string())?;
                    let eval = record.primary_eval().expect("run produced an eval");
                    println!(
                        "{variant} seed={seed} auc={:.6} gauc={:.6} logloss={:.6} ne={:.6}",
                        eval.fused.auc, eval.fused.gauc, eval.fused.logloss, eval.fused.ne
                    );
                }
            }
            Ok(())
        }
        Command::ScaleSweep {
            config,
            multipliers,
            modes,
            seeds,
            out,
        } => {
            let mut base = TrainConfig::load(&config).map_err(|e| e.to_string())?;
            if out.is_some() {
                base.out_dir = out;
            }
            let multipliers: Vec<usize> = parse_list(&multipliers)?;
            let modes: Vec<SweepMode> = parse_list(&modes)?;
            let seeds: Vec<u64> = match seeds {
                Some(s) => parse_list(&s)?,
                None => vec![base.seed],
            };
            let outcomes =
                scale_sweep(&base, &multipliers, &modes, &seeds).map_err(|e| e.to_string())?;
            for o in &outcomes {
                let eval = o.record.primary_eval().expect("run produced an eval");
                println!(
                    "{} x{} seed={} auc={:.6}",
                    o.mode, o.multiplier, o.seed, eval.fused.auc
                );
            }
            if let Some(dir) = base.resolved_out_dir(None) {
                let path = dir.join("sweep.csv");
                write_sweep_csv(&outcomes, &path).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::OneEpoch { config, out } => {
            let mut cfg = TrainConfig::load(&config).map_err(|e| e.to_string())?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let (record, _) = one_epoch(&cfg).map_err(|e| e.to_string())?;
            for p in &record.ne_curve {
                println!("step={} ne={:.6}", p.step, p.ne);
            }
            print_record_summary(&record);
            Ok(())
        }
    }
}

fn print_record_summary(record: &clicklab::runner::RunRecord) {
    if let Some(eval) = record.primary_eval() {
        println!(
            "final: auc={:.6} gauc={:.6} logloss={:.6} ne={:.6} ({} examples, {:.1}s)",
            eval.fused.auc,
            eval.fused.gauc,
            eval.fused.logloss,
            eval.fused.ne,
            eval.fused.examples,
            record.wall_secs
        );
        for (m, comp) in eval.components.iter().enumerate() {
            println!(
                "  component {m}: auc={:.6} gauc={:.6} logloss={:.6}",
                comp.auc, comp.gauc, comp.logloss
            );
        }
    }
    if let Some(path) = &record.checkpoint {
        println!("checkpoint: {}", path.display());
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
