//! Deterministic synthetic trial generator.
//!
//! A robot drives straight at a static marker. A latent disturbance process
//! drives both the marker-center jitter seen by the camera and the
//! perturbations measured by the IMU, so inertial energy carries information
//! about the C3 label. The disturbance has three parts:
//!
//! * a severity gain `roughness * speed^speed_exponent`,
//! * a slowly varying log-normal envelope (patches of rougher ground),
//! * four unit-variance band-limited carriers, each a sum of random sinusoids.
//!
//! Carrier `u`/`v` move the marker horizontally/vertically and appear in yaw
//! and pitch rates; `roll` and `heave` only reach the IMU. All randomness comes
//! from one ChaCha stream per trial, so `(seed, config)` fixes every byte.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_runlog;
use crate::types::{
    is_field_speed, speed_label, GpsFix, ImuSample, MarkerObservation, RunLog, Terrain, TrialMeta,
};

const GRAVITY: f64 = 9.81;
/// Nominal marker-center pixel position when the robot is undisturbed.
const MARKER_PIXEL: [f64; 2] = [640.0, 360.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainProfile {
    pub name: Terrain,
    /// Dimensionless disturbance gain.
    pub roughness: f64,
}

/// Default terrain table; roughness increases from pavement to dirt with rocks.
pub fn default_terrains() -> Vec<TerrainProfile> {
    vec![
        TerrainProfile {
            name: Terrain::Pavement,
            roughness: 0.3,
        },
        TerrainProfile {
            name: Terrain::Grass,
            roughness: 0.55,
        },
        TerrainProfile {
            name: Terrain::Dirt,
            roughness: 0.75,
        },
        TerrainProfile {
            name: Terrain::DirtRocks,
            roughness: 1.0,
        },
    ]
}

/// Checks the terrain table covers each label once in increasing roughness.
pub fn validate_terrains(terrains: &[TerrainProfile]) -> Result<()> {
    let mut sorted: Vec<_> = terrains.to_vec();
    sorted.sort_by_key(|t| t.name);
    let names: Vec<_> = sorted.iter().map(|t| t.name).collect();
    if names != Terrain::ALL {
        return Err(Error::Config(format!(
            "terrain table must list each of {:?} exactly once",
            Terrain::ALL.map(|t| t.as_str())
        )));
    }
    for pair in sorted.windows(2) {
        if !(pair[0].roughness.is_finite()
            && pair[0].roughness >= 0.0
            && pair[0].roughness < pair[1].roughness)
        {
            return Err(Error::Config(format!(
                "roughness must be non-negative and strictly increase: {} ({}) vs {} ({})",
                pair[0].name, pair[0].roughness, pair[1].name, pair[1].roughness
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub imu_rate: f64,
    pub gps_rate: f64,
    pub cam_rate: f64,
    /// Trial length, seconds.
    pub duration: f64,
    /// Initial robot-to-marker distance, metres.
    pub start_distance: f64,
    pub speed_exponent: f64,
    /// Marker jitter standard deviation at unit severity, pixels.
    pub base_jitter_px: f64,
    /// IMU perturbation amplitude at unit severity (rad/s, m/s²).
    pub imu_coupling: f64,
    /// White noise on IMU channels and marker pixels, native units.
    pub noise_floor: f64,
    /// GPS position noise, metres.
    pub gps_noise_m: f64,
    /// Robot position wobble at unit severity, metres.
    pub position_jitter_m: f64,
    /// Probability that a camera frame misses the marker.
    pub dropout_prob: f64,
    /// Time the robot sits still before driving, seconds.
    pub stationary_prefix: f64,
    /// Log-normal envelope spread; 0 gives a constant envelope.
    pub envelope_spread: f64,
    /// Envelope frequency band, Hz.
    pub envelope_band: [f64; 2],
    /// Carrier frequency band, Hz.
    pub carrier_band: [f64; 2],
    /// Sinusoids per band-limited component.
    pub n_sinusoids: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            imu_rate: 200.0,
            gps_rate: 10.0,
            cam_rate: 60.0,
            duration: 12.0,
            start_distance: 50.0,
            speed_exponent: 1.5,
            base_jitter_px: 6.0,
            imu_coupling: 1.0,
            noise_floor: 0.05,
            gps_noise_m: 0.005,
            position_jitter_m: 0.01,
            dropout_prob: 0.01,
            stationary_prefix: 1.0,
            envelope_spread: 0.7,
            envelope_band: [0.05, 0.5],
            carrier_band: [2.0, 12.0],
            n_sinusoids: 12,
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("imu_rate", self.imu_rate),
            ("gps_rate", self.gps_rate),
            ("cam_rate", self.cam_rate),
            ("duration", self.duration),
            ("start_distance", self.start_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("base_jitter_px", self.base_jitter_px),
            ("imu_coupling", self.imu_coupling),
            ("noise_floor", self.noise_floor),
            ("gps_noise_m", self.gps_noise_m),
            ("position_jitter_m", self.position_jitter_m),
            ("stationary_prefix", self.stationary_prefix),
            ("envelope_spread", self.envelope_spread),
            ("speed_exponent", self.speed_exponent),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!(
                "dropout_prob must lie in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        for (name, [lo, hi]) in [
            ("envelope_band", self.envelope_band),
            ("carrier_band", self.carrier_band),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        if self.n_sinusoids == 0 {
            return Err(Error::Config("n_sinusoids must be at least 1".into()));
        }
        Ok(())
    }
}

/// Unit-variance sum of sinusoids with random frequencies and phases.
#[derive(Debug, Clone)]
struct BandNoise {
    omega: Vec<f64>,
    phase: Vec<f64>,
    amp: f64,
    w_rms: f64,
}

impl BandNoise {
    fn draw(rng: &mut ChaCha8Rng, band: [f64; 2], n: usize) -> Self {
        let mut omega = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for _ in 0..n {
            let f = if band[0] == band[1] {
                band[0]
            } else {
                rng.random_range(band[0]..band[1])
            };
            omega.push(TAU * f);
            phase.push(rng.random_range(0.0..TAU));
        }
        let w_rms = (omega.iter().map(|w| w * w).sum::<f64>() / n as f64).sqrt();
        Self {
            omega,
            phase,
            amp: (2.0 / n as f64).sqrt(),
            w_rms,
        }
    }

    fn value(&self, t: f64) -> f64 {
        self.amp
            * self
                .omega
                .iter()
                .zip(&self.phase)
                .map(|(w, p)| (w * t + p).sin())
                .sum::<f64>()
    }

    /// Time derivative divided by the RMS angular frequency, so it is also
    /// roughly unit variance.
    fn rate(&self, t: f64) -> f64 {
        self.amp
            * self
                .omega
                .iter()
                .zip(&self.phase)
                .map(|(w, p)| w * (w * t + p).cos())
                .sum::<f64>()
            / self.w_rms
    }
}

/// Latent disturbance shared by camera and IMU.
struct Disturbance {
    severity: f64,
    spread: f64,
    start: f64,
    envelope: BandNoise,
    u: BandNoise,
    v: BandNoise,
    roll: BandNoise,
    heave: BandNoise,
}

impl Disturbance {
    fn draw(rng: &mut ChaCha8Rng, severity: f64, cfg: &SimConfig) -> Self {
        Self {
            severity,
            spread: cfg.envelope_spread,
            start: cfg.stationary_prefix,
            envelope: BandNoise::draw(rng, cfg.envelope_band, cfg.n_sinusoids),
            u: BandNoise::draw(rng, cfg.carrier_band, cfg.n_sinusoids),
            v: BandNoise::draw(rng, cfg.carrier_band, cfg.n_sinusoids),
            roll: BandNoise::draw(rng, cfg.carrier_band, cfg.n_sinusoids),
            heave: BandNoise::draw(rng, cfg.carrier_band, cfg.n_sinusoids),
        }
    }

    /// Severity times envelope; zero while the robot is parked.
    fn gain(&self, t: f64) -> f64 {
        if t < self.start {
            return 0.0;
        }
        let s = self.spread;
        self.severity * (s * self.envelope.value(t) - 0.5 * s * s).exp()
    }
}

fn sample_times(rate: f64, duration: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(move |i| i as f64 / rate)
}

/// Simulates one trial of `terrain` at commanded `speed`.
///
/// Speeds outside {0.5, 1.0, 1.5} are allowed but logged.
pub fn simulate_trial(
    terrain: &TerrainProfile,
    speed: f64,
    cfg: &SimConfig,
    trial_id: &str,
) -> Result<RunLog> {
    cfg.validate()?;
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Error::Input(format!("speed must be positive, got {speed}")));
    }
    if !(terrain.roughness.is_finite() && terrain.roughness >= 0.0) {
        return Err(Error::Input(format!(
            "roughness must be non-negative, got {}",
            terrain.roughness
        )));
    }
    if !is_field_speed(speed) {
        log::warn!("trial {trial_id}: speed {speed} m/s is not one of the field-trial speeds");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let severity = terrain.roughness * speed.powf(cfg.speed_exponent);
    let dist = Disturbance::draw(&mut rng, severity, cfg);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    let start = cfg.stationary_prefix;
    let along = |t: f64| if t < start { 0.0 } else { speed * (t - start) };
    let k = cfg.imu_coupling;
    let nf = cfg.noise_floor;

    let imu: Vec<ImuSample> = sample_times(cfg.imu_rate, cfg.duration)
        .map(|t| {
            let g = k * dist.gain(t);
            let gyro = [
                g * dist.roll.value(t) + nf * gauss(),
                g * dist.v.rate(t) + nf * gauss(),
                g * dist.u.rate(t) + nf * gauss(),
            ];
            let accel = [
                g * 0.5 * dist.heave.rate(t) + nf * gauss(),
                g * dist.u.value(t) + nf * gauss(),
                GRAVITY + g * dist.heave.value(t) + nf * gauss(),
            ];
            ImuSample { t, gyro, accel }
        })
        .collect();

    let pj = cfg.position_jitter_m;
    let gps: Vec<GpsFix> = sample_times(cfg.gps_rate, cfg.duration)
        .map(|t| {
            let g = dist.gain(t);
            GpsFix {
                t,
                x: along(t) + pj * g * dist.heave.value(t) + cfg.gps_noise_m * gauss(),
                y: pj * g * dist.u.value(t) + cfg.gps_noise_m * gauss(),
            }
        })
        .collect();

    let sigma = cfg.base_jitter_px;
    let marker: Vec<MarkerObservation> = sample_times(cfg.cam_rate, cfg.duration)
        .map(|t| {
            let g = sigma * dist.gain(t);
            let u = MARKER_PIXEL[0] + g * dist.u.value(t) + nf * gauss();
            let v = MARKER_PIXEL[1] + g * dist.v.value(t) + nf * gauss();
            (t, u, v)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(t, u, v)| {
            // one coin per frame, drawn after all pixel noise
            if rng.random::<f64>() < cfg.dropout_prob {
                MarkerObservation::missed(t)
            } else {
                MarkerObservation::detected(t, u, v)
            }
        })
        .collect();

    Ok(RunLog {
        meta: TrialMeta {
            terrain: terrain.name,
            commanded_speed: speed,
            trial_id: trial_id.to_string(),
            seed: cfg.seed,
        },
        imu,
        gps,
        marker,
        marker_position: [cfg.start_distance, 0.0],
    })
}

/// One row of the campaign matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub terrain: Terrain,
    pub speed: f64,
    pub n_trials: usize,
}

/// Field-campaign sized matrix: 86 trials, fewer fast runs on rough ground.
pub fn default_campaign() -> Vec<CampaignEntry> {
    let rows = [
        (Terrain::Pavement, [8, 6, 8]),
        (Terrain::Grass, [8, 6, 8]),
        (Terrain::Dirt, [9, 7, 6]),
        (Terrain::DirtRocks, [9, 6, 5]),
    ];
    rows.iter()
        .flat_map(|(terrain, counts)| {
            crate::types::FIELD_SPEEDS
                .iter()
                .zip(counts)
                .map(move |(&speed, &n_trials)| CampaignEntry {
                    terrain: *terrain,
                    speed,
                    n_trials,
                })
        })
        .collect()
}

/// Per-trial seed from the campaign seed and the trial's position in the campaign.
pub fn derive_seed(campaign_seed: u64, trial_index: u64) -> u64 {
    // splitmix64 finalizer over the mixed pair
    let mut z = campaign_seed
        ^ trial_index
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates every trial in `matrix`, in matrix order.
pub fn generate_campaign(
    matrix: &[CampaignEntry],
    terrains: &[TerrainProfile],
    cfg: &SimConfig,
) -> Result<Vec<RunLog>> {
    if matrix.is_empty() {
        return Err(Error::Config("campaign matrix is empty".into()));
    }
    cfg.validate()?;
    let mut jobs = Vec::new();
    for entry in matrix {
        let profile = terrains
            .iter()
            .find(|t| t.name == entry.terrain)
            .ok_or_else(|| Error::Config(format!("no terrain profile for {}", entry.terrain)))?;
        for _ in 0..entry.n_trials {
            let idx = jobs.len();
            jobs.push((idx, *profile, entry.speed));
        }
    }
    jobs.par_iter()
        .map(|&(idx, profile, speed)| {
            let trial_cfg = SimConfig {
                seed: derive_seed(cfg.seed, idx as u64),
                ..cfg.clone()
            };
            simulate_trial(&profile, speed, &trial_cfg, &format!("t{idx:04}"))
        })
        .collect()
}

/// Directory name for a trial: `<trial_id>_<terrain>_<speed>`.
pub fn trial_dir_name(meta: &TrialMeta) -> String {
    format!(
        "{}_{}_{}",
        meta.trial_id,
        meta.terrain,
        speed_label(meta.commanded_speed)
    )
}

/// Writes one directory per trial under `out` and returns the paths.
pub fn write_campaign(logs: &[RunLog], out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    logs.par_iter()
        .map(|log| {
            let dir = out.join(trial_dir_name(&log.meta));
            write_runlog(log, &dir)?;
            Ok(dir)
        })
        .collect()
}
