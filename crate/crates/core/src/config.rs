//! Experiment configuration, read from TOML.
//!
//! Every section is optional; omitted fields take the reference values
//! (64 subcarriers at 15 kHz, 16-sample prefix, 16 + 16 antennas at 60 GHz,
//! targets at (50 m, 30°, 50 m/s) and (100 m, 50°, 100 m/s), 300 trials).
//! See `configs/reference.toml` for an annotated copy.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::crlb::{C2Search, CrlbOptions};
use crate::error::{Error, Result};
use crate::estimator::{DdSearchConfig, MusicConfig};
use crate::geometry::{ArrayParams, Scene, Target};
use crate::waveform::WaveformParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub subcarriers: usize,
    pub c1: f64,
    pub c2: f64,
    /// Seconds.
    pub symbol_duration: f64,
    pub cpp_len: usize,
    pub qam_order: u32,
}

impl Default for WaveformSection {
    fn default() -> Self {
        WaveformParams::default().into()
    }
}

impl From<WaveformParams> for WaveformSection {
    fn from(w: WaveformParams) -> Self {
        Self {
            subcarriers: w.subcarriers,
            c1: w.c1,
            c2: w.c2,
            symbol_duration: w.symbol_duration,
            cpp_len: w.cpp_len,
            qam_order: w.qam_order,
        }
    }
}

impl WaveformSection {
    pub fn params(&self) -> WaveformParams {
        WaveformParams {
            subcarriers: self.subcarriers,
            c1: self.c1,
            c2: self.c2,
            symbol_duration: self.symbol_duration,
            cpp_len: self.cpp_len,
            qam_order: self.qam_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Element spacing in meters; half a wavelength when absent.
    pub spacing: Option<f64>,
    pub carrier_frequency: f64,
    pub power: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            tx_antennas: 16,
            rx_antennas: 16,
            spacing: None,
            carrier_frequency: 60e9,
            power: 1.0,
        }
    }
}

impl ArraySection {
    pub fn params(&self) -> ArrayParams {
        let mut a = ArrayParams::half_wavelength(self.tx_antennas, self.rx_antennas, self.carrier_frequency, self.power);
        if let Some(d) = self.spacing {
            a.spacing = d;
        }
        a
    }
}

/// A target given either in polar form relative to the base station or by
/// cartesian position and velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Polar {
        range_m: f64,
        angle_deg: f64,
        /// Positive means receding.
        #[serde(default)]
        radial_speed_mps: f64,
        /// Fixed reflection coefficient `[re, im]`; a random unit phasor per trial when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<[f64; 2]>,
    },
    Cartesian {
        position: [f64; 2],
        #[serde(default)]
        velocity: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<[f64; 2]>,
    },
}

impl TargetSpec {
    pub fn beta(&self) -> Option<Complex64> {
        match self {
            TargetSpec::Polar { beta, .. } | TargetSpec::Cartesian { beta, .. } => beta.map(|b| Complex64::new(b[0], b[1])),
        }
    }

    /// The target with reflection coefficient `beta`.
    pub fn build(&self, bs: [f64; 2], beta: Complex64) -> Target {
        match *self {
            TargetSpec::Polar {
                range_m,
                angle_deg,
                radial_speed_mps,
                ..
            } => Target::from_polar(bs, range_m, angle_deg.to_radians(), radial_speed_mps, beta),
            TargetSpec::Cartesian { position, velocity, .. } => Target {
                position,
                velocity,
                beta,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub bs_position: [f64; 2],
    /// Transmit beam direction; the mean of the target bearings when absent.
    pub beam_direction_deg: Option<f64>,
    pub targets: Vec<TargetSpec>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            bs_position: [0.0, 0.0],
            beam_direction_deg: None,
            targets: vec![
                TargetSpec::Polar {
                    range_m: 50.0,
                    angle_deg: 30.0,
                    radial_speed_mps: 50.0,
                    beta: None,
                },
                TargetSpec::Polar {
                    range_m: 100.0,
                    angle_deg: 50.0,
                    radial_speed_mps: 100.0,
                    beta: None,
                },
            ],
        }
    }
}

impl SceneSection {
    /// Scene with the given per-target reflection coefficients.
    pub fn build(&self, betas: &[Complex64]) -> Scene {
        let targets: Vec<Target> = self
            .targets
            .iter()
            .zip(betas)
            .map(|(t, &b)| t.build(self.bs_position, b))
            .collect();
        let beam_direction = match self.beam_direction_deg {
            Some(d) => d.to_radians(),
            None => Scene::midpoint_direction(self.bs_position, &targets),
        };
        Scene {
            bs_position: self.bs_position,
            targets,
            beam_direction,
        }
    }

    /// Scene with every unspecified coefficient set to 1.
    pub fn nominal(&self) -> Scene {
        let betas: Vec<Complex64> = self
            .targets
            .iter()
            .map(|t| t.beta().unwrap_or(Complex64::new(1.0, 0.0)))
            .collect();
        self.build(&betas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    C1,
    C2,
    Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub snr_grid_db: Vec<f64>,
    pub output_dir: PathBuf,
    /// Pick `c2` per symbol draw by minimizing the position CRLB instead of
    /// using the configured value.
    pub optimize_c2: bool,
    pub waveform: WaveformSection,
    pub array: ArraySection,
    pub scene: SceneSection,
    pub music: MusicConfig,
    pub ddsearch: DdSearchConfig,
    pub crlb: CrlbOptions,
    pub c2_search: C2Search,
    pub sweep: Option<SweepSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            trials: 300,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            output_dir: PathBuf::from("out"),
            optimize_c2: false,
            waveform: WaveformSection::default(),
            array: ArraySection::default(),
            scene: SceneSection::default(),
            music: MusicConfig::default(),
            ddsearch: DdSearchConfig::default(),
            crlb: CrlbOptions::default(),
            c2_search: C2Search::default(),
            sweep: None,
        }
    }
}

/// One waveform setting of a sweep, run at every SNR of its grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c1: f64,
    pub c2: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn waveform_params(&self) -> WaveformParams {
        self.waveform.params()
    }

    pub fn array_params(&self) -> ArrayParams {
        self.array.params()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return cfg("trials must be >= 1".into());
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return cfg("snr_grid_db entries must be finite".into());
        }
        if self.scene.targets.is_empty() {
            return cfg("scene needs at least one target".into());
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.waveform_params().validate().map_err(wrap)?;
        self.array_params().validate().map_err(wrap)?;
        self.ddsearch.validate().map_err(wrap)?;
        if self.music.subarrays == 0 || self.music.grid_deg.is_nan() || self.music.grid_deg <= 0.0 {
            return cfg("music.subarrays must be >= 1 and music.grid_deg positive".into());
        }
        let p = self.scene.targets.len();
        if self.array.rx_antennas + 1 < self.music.subarrays + p + 1 {
            return cfg(format!(
                "{} receive antennas cannot host {} subarrays with {} targets",
                self.array.rx_antennas, self.music.subarrays, p
            ));
        }
        self.scene.nominal().validate().map_err(wrap)?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return cfg("sweep.values must not be empty".into());
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return cfg("sweep.values entries must be finite".into());
            }
            if s.parameter == SweepParameter::C2 && self.optimize_c2 {
                return cfg("a c2 sweep cannot be combined with optimize_c2".into());
            }
        } else if self.snr_grid_db.is_empty() {
            return cfg("snr_grid_db must not be empty".into());
        }
        Ok(())
    }

    /// Waveform settings visited by a sweep, in configuration order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let base = SweepPoint {
            c1: self.waveform.c1,
            c2: self.waveform.c2,
        };
        match &self.sweep {
            Some(SweepSection {
                parameter: SweepParameter::C1,
                values,
            }) => values.iter().map(|&c1| SweepPoint { c1, ..base }).collect(),
            Some(SweepSection {
                parameter: SweepParameter::C2,
                values,
            }) => values.iter().map(|&c2| SweepPoint { c2, ..base }).collect(),
            _ => vec![base],
        }
    }

    /// SNR values in dB visited at every sweep point.
    pub fn snr_grid(&self) -> Vec<f64> {
        match &self.sweep {
            Some(SweepSection {
                parameter: SweepParameter::Snr,
                values,
            }) => values.clone(),
            _ => self.snr_grid_db.clone(),
        }
    }
}
