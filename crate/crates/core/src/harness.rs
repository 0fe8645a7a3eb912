//! Monte Carlo experiments: single trials, RMSE sweeps and the CRLB, spectrum
//! and `c2` tables behind the command-line tool.
//!
//! A trial is fully determined by its seed. The seed drives the QAM symbols
//! and the random reflection phases through one stream and the receiver noise
//! through another. Seeds depend on the sweep point and trial index only, so
//! every SNR of a point sees the same symbols and the same (scaled) noise.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, noiseless_matrix_model, snr_to_sigma2};
use crate::config::{ExperimentConfig, SweepPoint};
use crate::crlb::{crlb_position, optimize_c2, C2Optimum};
use crate::error::{Error, Result};
use crate::estimator::{self, MusicSpectrum};
use crate::geometry::{self, PathParams, Scene};
use crate::waveform::{qam_symbols_from, SymbolVector, WaveformParams};

/// How the SNR axis is defined, echoed into every metadata file.
pub const SNR_DEFINITION: &str = "mean per-entry power of the noiseless demodulated M x N_r block divided by the \
     per-entry complex noise variance";

const NOISE_STREAM: u64 = 0x6e6f_6973_655f_7374;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at sweep point `point`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    splitmix(splitmix(splitmix(master) ^ point as u64) ^ trial as u64)
}

/// Random quantities of one trial that do not depend on the SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub seed: u64,
    pub x: SymbolVector,
    pub scene: Scene,
    pub waveform: WaveformParams,
    /// Set when `c2` was chosen by CRLB minimization.
    pub c2_search: Option<C2Optimum>,
    /// Trace of the position CRLB at unit noise variance, if the geometry is observable.
    pub unit_crlb_trace: Option<f64>,
}

/// Draws the symbols and reflection coefficients of a trial and settles `c2`.
pub fn prepare_trial(config: &ExperimentConfig, point: SweepPoint, seed: u64) -> Result<TrialSetup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut waveform = config.waveform_params().with_chirp(point.c1, point.c2);
    let x = qam_symbols_from(waveform.qam_order, waveform.subcarriers, &mut rng)?;
    let betas: Vec<Complex64> = config
        .scene
        .targets
        .iter()
        .map(|t| {
            let phase: f64 = rng.random_range(0.0..1.0);
            t.beta()
                .unwrap_or_else(|| Complex64::from_polar(1.0, std::f64::consts::TAU * phase))
        })
        .collect();
    let scene = config.scene.build(&betas);
    let array = config.array_params();

    // the CRLB is linear in the noise variance, so c2 is chosen at unit variance
    let c2_search = if config.optimize_c2 {
        let opt = optimize_c2(&scene, &x, &waveform, &array, 1.0, &config.c2_search, &config.crlb)?;
        waveform.c2 = opt.c2;
        Some(opt)
    } else {
        None
    };
    let unit_crlb_trace = match crlb_position(&scene, &x, &waveform, &array, 1.0, &config.crlb) {
        Ok(r) => Some(r.trace()),
        Err(Error::Unobservable { .. } | Error::RankDeficient) => None,
        Err(e) => return Err(e),
    };
    Ok(TrialSetup {
        seed,
        x,
        scene,
        waveform,
        c2_search,
        unit_crlb_trace,
    })
}

/// One target's estimate next to the truth it was matched with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub truth_index: usize,
    pub true_position: [f64; 2],
    pub position: [f64; 2],
    pub position_error_m: f64,
    pub true_theta_deg: f64,
    pub theta_deg: f64,
    pub true_tau_s: f64,
    pub tau_s: f64,
    pub true_nu_hz: f64,
    pub nu_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    /// Estimates in truth order.
    Estimated(Vec<TargetEstimate>),
    /// The estimator could not produce one path per target.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub snr_db: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma2: f64,
    pub outcome: TrialOutcome,
    /// Trace of the position CRLB at this trial's noise variance, m².
    pub crlb_trace_m2: Option<f64>,
}

/// Unique nearest-angle association: repeatedly pairs the closest remaining
/// (estimate, truth) angles. Returns `assignment[estimate] = truth`.
pub fn match_by_angle(estimated: &[f64], truth: &[f64]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(estimated.len() * truth.len());
    for (i, e) in estimated.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            pairs.push(((e - t).abs(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![usize::MAX; estimated.len()];
    let mut taken = vec![false; truth.len()];
    for (_, i, j) in pairs {
        if assignment[i] == usize::MAX && !taken[j] {
            assignment[i] = j;
            taken[j] = true;
        }
    }
    assignment
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Runs a prepared trial at one SNR.
pub fn run_prepared(config: &ExperimentConfig, setup: &TrialSetup, snr_db: f64) -> Result<TrialRecord> {
    let array = config.array_params();
    let wf = &setup.waveform;
    let truth: Vec<PathParams> = setup
        .scene
        .targets
        .iter()
        .map(|t| geometry::target_to_path(t, &setup.scene, &array, wf))
        .collect::<Result<_>>()?;
    let mut y = noiseless_matrix_model(&setup.x, &truth, wf, &array)?;
    let sigma2 = snr_to_sigma2(snr_db, &y)?;
    add_noise(
        &mut y,
        sigma2,
        &mut ChaCha8Rng::seed_from_u64(splitmix(setup.seed ^ NOISE_STREAM)),
    );

    let outcome = match estimator::estimate_all(&y, &setup.x, truth.len(), wf, &array, &config.music, &config.ddsearch) {
        Ok(est) => {
            let bs = setup.scene.bs_position;
            let thetas: Vec<f64> = est.paths.iter().map(|p| p.theta).collect();
            let true_thetas: Vec<f64> = truth.iter().map(|p| p.theta).collect();
            let assignment = match_by_angle(&thetas, &true_thetas);
            let mut out: Vec<TargetEstimate> = est
                .paths
                .iter()
                .zip(&assignment)
                .map(|(p, &j)| {
                    let t = &truth[j];
                    let position = geometry::path_to_position(p.theta, p.tau, bs);
                    let true_position = setup.scene.targets[j].position;
                    TargetEstimate {
                        truth_index: j,
                        true_position,
                        position,
                        position_error_m: distance(position, true_position),
                        true_theta_deg: t.theta.to_degrees(),
                        theta_deg: p.theta.to_degrees(),
                        true_tau_s: t.tau,
                        tau_s: p.tau,
                        true_nu_hz: t.nu,
                        nu_hz: p.nu,
                    }
                })
                .collect();
            out.sort_by_key(|e| e.truth_index);
            TrialOutcome::Estimated(out)
        }
        Err(e) => TrialOutcome::Failed(e.to_string()),
    };
    Ok(TrialRecord {
        seed: setup.seed,
        snr_db,
        c1: wf.c1,
        c2: wf.c2,
        sigma2,
        outcome,
        crlb_trace_m2: setup.unit_crlb_trace.map(|t| t * sigma2),
    })
}

/// `prepare_trial` followed by `run_prepared`.
pub fn run_trial(config: &ExperimentConfig, point: SweepPoint, snr_db: f64, seed: u64) -> Result<TrialRecord> {
    let setup = prepare_trial(config, point, seed)?;
    run_prepared(config, &setup, snr_db)
}

/// One CSV row: aggregate over the trials of a (sweep point, SNR) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub c1: f64,
    /// Configured `c2`, or the median of the per-trial optima when optimizing.
    pub c2: f64,
    pub rmse_position_m: f64,
    /// Per-target position RMSE in scene order, `;`-separated.
    pub rmse_per_target_m: String,
    pub rmse_theta_deg: f64,
    pub rmse_tau_s: f64,
    pub rmse_nu_hz: f64,
    /// `√(mean trace CRLB / P)`, directly comparable with `rmse_position_m`.
    pub crlb_rms_position_m: f64,
    pub trials_used: usize,
    pub failures: usize,
}

impl SweepRow {
    pub fn rmse_per_target(&self) -> Vec<f64> {
        self.rmse_per_target_m
            .split(';')
            .map(|s| s.parse().unwrap_or(f64::NAN))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, c1: f64, c2: f64, snr_db: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.c1 == c1 && r.c2 == c2 && r.snr_db == snr_db)
    }
}

/// Aggregates trial records of one (point, SNR) cell. Position RMSE is
/// `√(mean over successful trials and targets of squared error)`.
pub fn aggregate(point: SweepPoint, snr_db: f64, targets: usize, records: &[TrialRecord]) -> SweepRow {
    let mut per_target = vec![0.0; targets];
    let (mut theta, mut tau, mut nu) = (0.0, 0.0, 0.0);
    let (mut used, mut failures) = (0usize, 0usize);
    let (mut crlb_sum, mut crlb_n) = (0.0, 0usize);
    let mut c2s: Vec<f64> = Vec::with_capacity(records.len());
    for r in records {
        c2s.push(r.c2);
        if let Some(t) = r.crlb_trace_m2 {
            crlb_sum += t;
            crlb_n += 1;
        }
        match &r.outcome {
            TrialOutcome::Failed(_) => failures += 1,
            TrialOutcome::Estimated(est) => {
                used += 1;
                for e in est {
                    per_target[e.truth_index] += e.position_error_m.powi(2);
                    theta += (e.theta_deg - e.true_theta_deg).powi(2);
                    tau += (e.tau_s - e.true_tau_s).powi(2);
                    nu += (e.nu_hz - e.true_nu_hz).powi(2);
                }
            }
        }
    }
    let n = (used * targets) as f64;
    let rms = |s: f64, count: f64| if count > 0.0 { (s / count).sqrt() } else { f64::NAN };
    c2s.sort_by(f64::total_cmp);
    let c2 = if c2s.is_empty() { point.c2 } else { c2s[(c2s.len() - 1) / 2] };
    SweepRow {
        snr_db,
        c1: point.c1,
        c2,
        rmse_position_m: rms(per_target.iter().sum(), n),
        rmse_per_target_m: per_target
            .iter()
            .map(|s| rms(*s, used as f64).to_string())
            .collect::<Vec<_>>()
            .join(";"),
        rmse_theta_deg: rms(theta, n),
        rmse_tau_s: rms(tau, n),
        rmse_nu_hz: rms(nu, n),
        crlb_rms_position_m: rms(crlb_sum, (crlb_n * targets) as f64),
        trials_used: used,
        failures,
    }
}

/// Full Monte Carlo sweep: every sweep point at every SNR, `trials` times.
///
/// Trials run in parallel on the current rayon pool. Records are gathered in
/// trial order before summation, so results do not depend on the thread count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let snrs = config.snr_grid();
    let targets = config.scene.targets.len();
    let mut rows = Vec::new();
    for (pi, point) in config.sweep_points().into_iter().enumerate() {
        let per_trial: Vec<Vec<TrialRecord>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let setup = prepare_trial(config, point, trial_seed(config.master_seed, pi, t))?;
                snrs.iter().map(|&s| run_prepared(config, &setup, s)).collect()
            })
            .collect::<Result<_>>()?;
        for (si, &snr) in snrs.iter().enumerate() {
            let cell: Vec<TrialRecord> = per_trial.iter().map(|r| r[si].clone()).collect();
            rows.push(aggregate(point, snr, targets, &cell));
        }
    }
    Ok(SweepResult { rows })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub master_seed: u64,
    pub trials: usize,
    pub snr_definition: &'a str,
    pub rmse_definition: &'a str,
    /// Seconds since the Unix epoch at write time.
    pub wall_clock_unix_s: f64,
    pub config: &'a ExperimentConfig,
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`, returning both paths.
pub fn emit<T: Serialize>(
    config: &ExperimentConfig,
    dir: &Path,
    stem: &str,
    rows: &[T],
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(&csv_path, rows)?;
    let meta = Metadata {
        command: stem,
        version: env!("CARGO_PKG_VERSION"),
        master_seed: config.master_seed,
        trials: config.trials,
        snr_definition: SNR_DEFINITION,
        rmse_definition: "sqrt of the mean over successful trials and targets of the squared position error",
        wall_clock_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        config,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&meta)?)?;
    Ok((csv_path, json_path))
}

/// Position CRLB of one waveform setting at one SNR, averaged over symbol draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbRow {
    pub snr_db: f64,
    pub c1: f64,
    pub c2: f64,
    pub crlb_trace_m2: f64,
    pub crlb_rms_position_m: f64,
    pub draws_used: usize,
}

/// Mean trace CRLB over `trials` draws for each c1 in `c1s` and c2 in `c2s`,
/// using the same draws and noise levels as [`run_sweep`] would at point 0.
pub fn crlb_table(config: &ExperimentConfig, c1s: &[f64], c2s: &[f64]) -> Result<Vec<CrlbRow>> {
    config.validate()?;
    let array = config.array_params();
    let snrs = config.snr_grid();
    let targets = config.scene.targets.len() as f64;
    let mut rows = Vec::new();
    for &c1 in c1s {
        for &c2 in c2s {
            let point = SweepPoint { c1, c2 };
            let plain = ExperimentConfig {
                optimize_c2: false,
                ..config.clone()
            };
            // (unit-variance trace, per-entry signal power) per draw
            let draws: Vec<Option<(f64, f64)>> = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    let setup = prepare_trial(&plain, point, trial_seed(config.master_seed, 0, t))?;
                    let paths: Vec<PathParams> = setup
                        .scene
                        .targets
                        .iter()
                        .map(|tg| geometry::target_to_path(tg, &setup.scene, &array, &setup.waveform))
                        .collect::<Result<_>>()?;
                    let y = noiseless_matrix_model(&setup.x, &paths, &setup.waveform, &array)?;
                    let unit_power = 1.0 / snr_to_sigma2(0.0, &y)?;
                    Ok(setup.unit_crlb_trace.map(|tr| (tr, unit_power)))
                })
                .collect::<Result<_>>()?;
            for &snr in &snrs {
                let lin = 10f64.powf(snr / 10.0);
                let vals: Vec<f64> = draws.iter().flatten().map(|(tr, p)| tr * p / lin).collect();
                let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                let mean = if vals.is_empty() { f64::NAN } else { mean };
                rows.push(CrlbRow {
                    snr_db: snr,
                    c1,
                    c2,
                    crlb_trace_m2: mean,
                    crlb_rms_position_m: (mean / targets).sqrt(),
                    draws_used: vals.len(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub angle_deg: f64,
    pub pseudo_spectrum: f64,
    pub pseudo_spectrum_db: f64,
}

/// MUSIC pseudo-spectrum of trial `seed` at point 0 of `config`.
pub fn spectrum(config: &ExperimentConfig, snr_db: f64, seed: u64) -> Result<MusicSpectrum> {
    config.validate()?;
    let point = config.sweep_points()[0];
    let setup = prepare_trial(config, point, seed)?;
    let array = config.array_params();
    let paths: Vec<PathParams> = setup
        .scene
        .targets
        .iter()
        .map(|t| geometry::target_to_path(t, &setup.scene, &array, &setup.waveform))
        .collect::<Result<_>>()?;
    let mut y = noiseless_matrix_model(&setup.x, &paths, &setup.waveform, &array)?;
    let sigma2 = snr_to_sigma2(snr_db, &y)?;
    add_noise(
        &mut y,
        sigma2,
        &mut ChaCha8Rng::seed_from_u64(splitmix(seed ^ NOISE_STREAM)),
    );
    let mut r = estimator::spatial_smooth_covariance(&y, config.music.subarrays, paths.len())?;
    if config.music.fb_averaging {
        r = estimator::forward_backward(&r);
    }
    estimator::music_spectrum(&r, paths.len(), &config.music, &array)
}

pub fn spectrum_rows(s: &MusicSpectrum) -> Vec<SpectrumRow> {
    s.angles_deg
        .iter()
        .zip(&s.values)
        .map(|(&a, &v)| SpectrumRow {
            angle_deg: a,
            pseudo_spectrum: v,
            pseudo_spectrum_db: 10.0 * v.log10(),
        })
        .collect()
}

/// Result of the `c2` search for one symbol draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2Row {
    pub trial: usize,
    pub seed: u64,
    pub c1: f64,
    pub c2_opt: f64,
    /// Trace CRLB at unit noise variance with the optimized `c2`.
    pub crlb_trace_unit_noise: f64,
    /// Same at `c2 = 0`.
    pub crlb_trace_unit_noise_c2_zero: f64,
    pub gain_db: f64,
    pub improved: bool,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Runs the `c2` search on `trials` symbol draws at point 0 of `config`.
pub fn optimize_c2_table(config: &ExperimentConfig) -> Result<Vec<C2Row>> {
    config.validate()?;
    let point = config.sweep_points()[0];
    let opt_cfg = ExperimentConfig {
        optimize_c2: true,
        ..config.clone()
    };
    (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(config.master_seed, 0, t);
            let setup = prepare_trial(&opt_cfg, point, seed)?;
            let opt = setup.c2_search.expect("optimization requested");
            Ok(C2Row {
                trial: t,
                seed,
                c1: point.c1,
                c2_opt: opt.c2,
                crlb_trace_unit_noise: opt.objective,
                crlb_trace_unit_noise_c2_zero: opt.baseline,
                gain_db: 10.0 * (opt.baseline / opt.objective).log10(),
                improved: opt.objective < opt.baseline,
                evaluations: opt.evaluations,
                budget_exhausted: opt.budget_exhausted,
            })
        })
        .collect()
}
