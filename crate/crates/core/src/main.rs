use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codemi::cli::{load_corpora, make_splits, prepare_target, run_experiment, run_sweep, ExperimentConfig, SweepAxis};
use codemi::corpus::synth::shifted_benchmark;
use codemi::corpus::write_corpus;
use codemi::eval::{render_table, write_interval_csv, AttackReport};
use codemi::{Error, Result};

/// Membership inference against code encoders.
#[derive(Parser)]
#[command(name = "codemi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set attack=gb_shadow`; applied
    /// after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic member/nonmember corpus pair.
    Generate {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        members: usize,
        #[arg(long, default_value_t = 2000)]
        nonmembers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train (or reuse) the target tokenizer and encoder.
    Pretrain(ConfigArgs),
    /// Build the split bundle and write its manifest.
    Split(ConfigArgs),
    /// Run the configured attack end to end.
    Attack(ConfigArgs),
    /// Run one experiment per value of an axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// known_fraction, kd_loss or layer_selection.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. `0.03,0.05,0.10` or `mse,cos`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Print the reports found in run directories as one table.
    Report {
        dirs: Vec<PathBuf>,
        /// Also write all interval rows into one CSV.
        #[arg(long)]
        intervals: Option<PathBuf>,
    },
}

fn read_reports(dir: &std::path::Path) -> Result<Vec<AttackReport>> {
    let mut out = vec![AttackReport::from_json(&std::fs::read_to_string(dir.join("report.json"))?)?];
    let bases = dir.join("base_reports.json");
    if bases.exists() {
        out.extend(serde_json::from_str::<Vec<AttackReport>>(&std::fs::read_to_string(bases)?)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out_dir, members, nonmembers, seed } => {
            std::fs::create_dir_all(&out_dir)?;
            let (m, n) = shifted_benchmark(members, nonmembers, seed);
            write_corpus(&out_dir.join("members.jsonl"), &m)?;
            write_corpus(&out_dir.join("nonmembers.jsonl"), &n)?;
            println!("wrote {} members and {} nonmembers to {}", m.len(), n.len(), out_dir.display());
        }
        Command::Pretrain(args) => {
            let cfg = args.load()?;
            let corpora = load_corpora(&cfg)?;
            let target = prepare_target(&cfg, &corpora.members)?;
            println!(
                "target: {} layers, d={}, {} token ids, stored in {}",
                target.model.num_layers(),
                target.model.hidden_dim(),
                target.tokenizer.vocab_len(),
                cfg.target_dir().display()
            );
        }
        Command::Split(args) => {
            let cfg = args.load()?;
            let bundle = make_splits(&cfg, &load_corpora(&cfg)?)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("splits.jsonl");
            bundle.write_manifest(&path)?;
            println!(
                "{} split: train {}, validation {}, test {} -> {}",
                bundle.setting.as_str(),
                bundle.train.len(),
                bundle.validation.len(),
                bundle.test.len(),
                path.display()
            );
        }
        Command::Attack(args) => {
            let cfg = args.load()?;
            let outcome = run_experiment(&cfg)?;
            let mut all = vec![outcome.report];
            all.extend(outcome.base_reports);
            print!("{}", render_table(&all));
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Sweep { config, axis, values } => {
            let cfg = config.load()?;
            let reports = run_sweep(&cfg, axis, &values)?;
            for (v, r) in values.iter().zip(&reports) {
                println!("{axis}={v}: AUC {:.4}, ACC {:.4}", r.auc, r.acc);
            }
            println!("summary in {}", cfg.output_dir.join("summary.csv").display());
        }
        Command::Report { dirs, intervals } => {
            if dirs.is_empty() {
                return Err(Error::Config("no run directories given".into()));
            }
            let mut all = Vec::new();
            for d in &dirs {
                all.extend(read_reports(d)?);
            }
            print!("{}", render_table(&all));
            if let Some(p) = intervals {
                write_interval_csv(&p, &all)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
