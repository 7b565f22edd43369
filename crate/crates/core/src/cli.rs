//! Command-line front end. `run` never exits the process, so it can be driven
//! from tests.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cdrn::activations_bytes;
use crate::error::{Error, Result};
use crate::estimators::EstimatorId;
use crate::harness::{
    dump_activations, evaluate_heldout, generate_dataset, run_sweep, sig10, train_networks, ExperimentConfig,
    NetworkBank, SweepResult, TrainingSnr,
};
use crate::selftest::run_selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "irs-cdrn",
    version,
    about = "IRS channel estimation with a cascaded denoising residual network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the bundled desk profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and IRS_CDRN_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate training and held-out pairs for every SNR point.
    GenerateDataset(Common),
    /// Train one network per SNR point and write checkpoints.
    Train(Common),
    /// Compare trained networks with LS on the held-out pairs.
    Evaluate(Common),
    /// Monte Carlo NMSE sweep over estimators and SNR points.
    Sweep(Common),
    /// Write per-block activations for one held-out pair.
    DumpActivations {
        #[command(flatten)]
        common: Common,
        /// Held-out pair to push through the network.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Gradient checks and protocol identities.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds.master = seed;
        }
        let out = cfg.output_dir(self.out.as_deref());
        Ok((cfg, out))
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::MissingCheckpoint { .. } => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

fn print_rows(result: &SweepResult) {
    for r in &result.rows {
        println!(
            "snr {:>6} dB  {:<8} {:<9} {:>9} dB  ({} trials)",
            r.snr_db,
            r.estimator_id,
            r.slice.as_str(),
            format!("{:.3}", r.nmse_db),
            r.trials
        );
    }
}

fn write_csv(result: &SweepResult, out: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    result.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenerateDataset(common) => {
            let (cfg, out) = common.load()?;
            fs::create_dir_all(&out)?;
            for &snr in &cfg.sweep.snr_db {
                let user = cfg.training.per_user.then_some(0);
                let data = generate_dataset(&cfg, TrainingSnr::from_config(&cfg, snr), user)?;
                let path = out.join(format!("dataset_snr{snr}.bin"));
                let tensors = [
                    data.train.inputs,
                    data.train.labels,
                    data.heldout.inputs,
                    data.heldout.labels,
                ];
                fs::write(&path, activations_bytes(&tensors))?;
                println!("wrote {} ({} training pairs)", path.display(), tensors[0].batch());
            }
            Ok(EXIT_OK)
        }
        Command::Train(common) => {
            let (cfg, out) = common.load()?;
            train_networks(&cfg, &out, |net| {
                let last = net.history.train.last().copied().unwrap_or(f64::NAN);
                println!(
                    "snr {} dB: {} epochs, final training loss {}, wrote {}",
                    net.snr_db,
                    net.history.train.len(),
                    sig10(last),
                    net.checkpoint.display()
                );
            })?;
            Ok(EXIT_OK)
        }
        Command::Evaluate(common) => {
            let (cfg, out) = common.load()?;
            let bank = NetworkBank::load(&cfg, &out)?;
            let result = evaluate_heldout(&cfg, &bank)?;
            print_rows(&result);
            write_csv(&result, &out, "evaluate.csv")?;
            Ok(EXIT_OK)
        }
        Command::Sweep(common) => {
            let (cfg, out) = common.load()?;
            let bank = if cfg.uses(EstimatorId::Cdrn) {
                NetworkBank::load(&cfg, &out)?
            } else {
                NetworkBank::new()
            };
            let result = run_sweep(&cfg, &bank)?;
            print_rows(&result);
            write_csv(&result, &out, "sweep.csv")?;
            Ok(EXIT_OK)
        }
        Command::DumpActivations { common, index } => {
            let (cfg, out) = common.load()?;
            let bank = NetworkBank::load(&cfg, &out)?;
            for path in dump_activations(&cfg, &bank, &out, index)? {
                println!("wrote {}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Selftest { seed } => {
            let checks = run_selftest(seed)?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed();
                let verdict = if c.passed() { "ok  " } else { "FAIL" };
                println!("{verdict} {:<28} {:.3e} (bound {:.0e})", c.name, c.value, c.bound);
            }
            Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
