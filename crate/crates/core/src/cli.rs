//! Command-line front end. Every subcommand writes plot-ready CSV plus a JSON
//! metadata file into the output directory.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, SweepParameter};
use crate::error::{Error, Result};
use crate::harness;

#[derive(Debug, Parser)]
#[command(name = "aftmc", version, about = "Chirp multicarrier localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trial and print estimates next to the truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// SNR in dB; the first grid entry when absent.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
    },
    /// Monte Carlo RMSE sweep over the configured points and SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Position CRLB over a c1/c2 grid, averaged over symbol draws.
    Crlb {
        #[command(flatten)]
        common: Common,
        /// c1 values; the c1 sweep values (or 0, 0.03, 0.08) when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        c1: Vec<f64>,
        /// c2 values; the c2 sweep values (or the configured c2) when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        c2: Vec<f64>,
    },
    /// MUSIC pseudo-spectrum of one trial.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
    },
    /// CRLB-minimizing c2 for each of `trials` symbol draws.
    OptimizeC2 {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment file; built-in reference values when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; 1 runs serially.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be >= 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

fn sweep_values(cfg: &ExperimentConfig, which: SweepParameter) -> Option<Vec<f64>> {
    cfg.sweep
        .as_ref()
        .filter(|s| s.parameter == which)
        .map(|s| s.values.clone())
}

fn run(command: Command) -> std::result::Result<(), (i32, Error)> {
    let common = match &command {
        Command::Simulate { common, .. }
        | Command::Sweep { common }
        | Command::Crlb { common, .. }
        | Command::Spectrum { common, .. }
        | Command::OptimizeC2 { common } => common,
    };
    let cfg = common.load().map_err(|e| (1, e))?;
    let pool = common.pool().map_err(|e| (1, e))?;
    let out = cfg.output_dir.clone();
    pool.install(|| -> Result<()> {
        match &command {
            Command::Simulate { snr, .. } => {
                let snr = snr.unwrap_or(cfg.snr_grid()[0]);
                let point = cfg.sweep_points()[0];
                let seed = harness::trial_seed(cfg.master_seed, 0, 0);
                let rec = harness::run_trial(&cfg, point, snr, seed)?;
                std::fs::create_dir_all(&out)?;
                let path = out.join("simulate.json");
                std::fs::write(&path, serde_json::to_string_pretty(&rec)?)?;
                println!("snr {snr} dB, c1 {}, c2 {}, seed {seed}", rec.c1, rec.c2);
                match &rec.outcome {
                    harness::TrialOutcome::Estimated(est) => {
                        for e in est {
                            println!(
                                "target {}: truth ({:.3}, {:.3}) m  estimate ({:.3}, {:.3}) m  error {:.4} m  \
                                 theta {:.3}/{:.3} deg  nu {:.1}/{:.1} Hz",
                                e.truth_index,
                                e.true_position[0],
                                e.true_position[1],
                                e.position[0],
                                e.position[1],
                                e.position_error_m,
                                e.theta_deg,
                                e.true_theta_deg,
                                e.nu_hz,
                                e.true_nu_hz
                            );
                        }
                    }
                    harness::TrialOutcome::Failed(why) => println!("estimation failed: {why}"),
                }
                println!("wrote {}", path.display());
            }
            Command::Sweep { .. } => {
                let result = harness::run_sweep(&cfg)?;
                let (csv, json) = harness::emit(&cfg, &out, "sweep", &result.rows)?;
                println!("wrote {} and {}", csv.display(), json.display());
            }
            Command::Crlb { c1, c2, .. } => {
                let c1s = if !c1.is_empty() {
                    c1.clone()
                } else {
                    sweep_values(&cfg, SweepParameter::C1).unwrap_or_else(|| vec![0.0, 0.03, 0.08])
                };
                let c2s = if !c2.is_empty() {
                    c2.clone()
                } else {
                    sweep_values(&cfg, SweepParameter::C2).unwrap_or_else(|| vec![cfg.waveform.c2])
                };
                let rows = harness::crlb_table(&cfg, &c1s, &c2s)?;
                let (csv, json) = harness::emit(&cfg, &out, "crlb", &rows)?;
                println!("wrote {} and {}", csv.display(), json.display());
            }
            Command::Spectrum { snr, .. } => {
                let snr = snr.unwrap_or(cfg.snr_grid()[0]);
                let s = harness::spectrum(&cfg, snr, harness::trial_seed(cfg.master_seed, 0, 0))?;
                let (csv, json) = harness::emit(&cfg, &out, "spectrum", &harness::spectrum_rows(&s))?;
                println!("wrote {} and {}", csv.display(), json.display());
            }
            Command::OptimizeC2 { .. } => {
                let rows = harness::optimize_c2_table(&cfg)?;
                let improved = rows.iter().filter(|r| r.improved).count();
                let (csv, json) = harness::emit(&cfg, &out, "optimize_c2", &rows)?;
                println!("c2 search improved the CRLB in {improved} of {} draws", rows.len());
                println!("wrote {} and {}", csv.display(), json.display());
            }
        }
        Ok(())
    })
    .map_err(|e| (2, e))
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for runtime failures.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}
