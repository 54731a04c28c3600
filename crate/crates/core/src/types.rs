//! Typed data model for multi-rate trial logs and labeled model windows.
//!
//! Streams are stored as plain vectors of samples. Nothing here mutates after
//! construction; validation reports findings instead of failing so that a
//! single pass can list every defect in a log.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of rows in a model input window.
pub const N_CHANNELS: usize = 8;
/// Number of IMU samples (columns) in a model input window.
pub const WINDOW_LEN: usize = 200;

/// Row order of [`DataFrame::channels`].
pub const CHANNEL_ORDER: [&str; N_CHANNELS] = [
    "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z", "vx", "vy",
];

/// Commanded speeds used by the field trials, m/s.
pub const FIELD_SPEEDS: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terrain {
    Pavement,
    Grass,
    Dirt,
    DirtRocks,
}

impl Terrain {
    /// All terrains, ordered from smoothest to roughest.
    pub const ALL: [Terrain; 4] = [
        Terrain::Pavement,
        Terrain::Grass,
        Terrain::Dirt,
        Terrain::DirtRocks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Terrain::Pavement => "pavement",
            Terrain::Grass => "grass",
            Terrain::Dirt => "dirt",
            Terrain::DirtRocks => "dirt_rocks",
        }
    }
}

impl fmt::Display for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Terrain::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown terrain label {s:?}")))
    }
}

/// Returns true when `speed` is one of [`FIELD_SPEEDS`].
pub fn is_field_speed(speed: f64) -> bool {
    FIELD_SPEEDS.contains(&speed)
}

/// Canonical label for a commanded speed, e.g. `1.0`.
pub fn speed_label(speed: f64) -> String {
    format!("{speed:.1}")
}

/// One 6-axis inertial reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// rad/s
    pub gyro: [f64; 3],
    /// m/s²
    pub accel: [f64; 3],
}

/// Position fix in a local planar frame, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub t: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Marker-center observation from one camera frame.
///
/// An undetected frame carries no coordinates at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub t: f64,
    /// `(u, v)` pixel coordinates, present only when the marker was detected.
    pub center: Option<[f64; 2]>,
}

impl MarkerObservation {
    pub fn detected(t: f64, u: f64, v: f64) -> Self {
        Self {
            t,
            center: Some([u, v]),
        }
    }

    pub fn missed(t: f64) -> Self {
        Self { t, center: None }
    }

    pub fn is_detected(&self) -> bool {
        self.center.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub terrain: Terrain,
    pub commanded_speed: f64,
    pub trial_id: String,
    pub seed: u64,
}

impl TrialMeta {
    /// `terrain_speed` class key, e.g. `dirt_1.5`.
    pub fn class_key(&self) -> String {
        format!("{}_{}", self.terrain, speed_label(self.commanded_speed))
    }
}

/// All streams recorded during one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub meta: TrialMeta,
    pub imu: Vec<ImuSample>,
    pub gps: Vec<GpsFix>,
    pub marker: Vec<MarkerObservation>,
    /// Static marker location in the local frame, metres.
    pub marker_position: [f64; 2],
}

/// One 8×200 model input window, rows in [`CHANNEL_ORDER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFrame {
    pub t_start: f64,
    pub t_end: f64,
    /// Row-major, `N_CHANNELS * WINDOW_LEN` values.
    pub channels: Vec<f64>,
}

impl DataFrame {
    pub fn new(t_start: f64, t_end: f64, channels: Vec<f64>) -> Result<Self> {
        if channels.len() != N_CHANNELS * WINDOW_LEN {
            return Err(Error::Input(format!(
                "dataframe needs {} values, got {}",
                N_CHANNELS * WINDOW_LEN,
                channels.len()
            )));
        }
        if !(t_start < t_end) {
            return Err(Error::Input(format!(
                "dataframe t_start {t_start} must precede t_end {t_end}"
            )));
        }
        if let Some(i) = channels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "dataframe entry row {} col {} is not finite",
                i / WINDOW_LEN,
                i % WINDOW_LEN
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            channels,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.channels[r * WINDOW_LEN..(r + 1) * WINDOW_LEN]
    }

    /// Mean planar speed over the window's velocity rows.
    pub fn mean_speed(&self) -> f64 {
        let vx = self.row(6);
        let vy = self.row(7);
        vx.iter().zip(vy).map(|(a, b)| a.hypot(*b)).sum::<f64>() / WINDOW_LEN as f64
    }
}

/// A model window with its C3 label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    /// `<trial_id>/<window index>`
    pub window_id: String,
    pub frame: DataFrame,
    pub c3_raw: f64,
    pub gt: f64,
    pub meta: TrialMeta,
}

/// One invariant violation found by [`validate_runlog`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub stream: String,
    pub index: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.stream, i, self.rule),
            None => write!(f, "{}: {}", self.stream, self.rule),
        }
    }
}

fn check_times(stream: &str, times: impl Iterator<Item = f64>, out: &mut Vec<Violation>) {
    let mut prev: Option<f64> = None;
    for (i, t) in times.enumerate() {
        if !t.is_finite() {
            out.push(Violation {
                stream: stream.into(),
                index: Some(i),
                rule: "t: timestamp not finite".into(),
            });
            continue;
        }
        if t < 0.0 {
            out.push(Violation {
                stream: stream.into(),
                index: Some(i),
                rule: "t: timestamp negative".into(),
            });
        }
        if let Some(p) = prev {
            if t <= p {
                out.push(Violation {
                    stream: stream.into(),
                    index: Some(i),
                    rule: format!("t: not strictly increasing ({t} after {p})"),
                });
            }
        }
        prev = Some(t);
    }
}

fn check_finite(stream: &str, index: usize, fields: &[(&str, f64)], out: &mut Vec<Violation>) {
    for (name, v) in fields {
        if !v.is_finite() {
            out.push(Violation {
                stream: stream.into(),
                index: Some(index),
                rule: format!("{name}: not finite"),
            });
        }
    }
}

/// Checks every stream and metadata invariant of a trial log.
///
/// Returns an empty list when the log is well formed.
pub fn validate_runlog(log: &RunLog) -> Vec<Violation> {
    let mut out = Vec::new();

    if !is_field_speed(log.meta.commanded_speed) {
        out.push(Violation {
            stream: "meta".into(),
            index: None,
            rule: format!(
                "commanded_speed {} not in {{0.5, 1.0, 1.5}}",
                log.meta.commanded_speed
            ),
        });
    }
    if !log.marker_position.iter().all(|v| v.is_finite()) {
        out.push(Violation {
            stream: "meta".into(),
            index: None,
            rule: "marker_position: not finite".into(),
        });
    }

    check_times("imu", log.imu.iter().map(|s| s.t), &mut out);
    for (i, s) in log.imu.iter().enumerate() {
        check_finite(
            "imu",
            i,
            &[
                ("gyro_x", s.gyro[0]),
                ("gyro_y", s.gyro[1]),
                ("gyro_z", s.gyro[2]),
                ("accel_x", s.accel[0]),
                ("accel_y", s.accel[1]),
                ("accel_z", s.accel[2]),
            ],
            &mut out,
        );
    }

    check_times("gps", log.gps.iter().map(|s| s.t), &mut out);
    for (i, s) in log.gps.iter().enumerate() {
        check_finite("gps", i, &[("x", s.x), ("y", s.y)], &mut out);
    }

    check_times("marker", log.marker.iter().map(|s| s.t), &mut out);
    for (i, s) in log.marker.iter().enumerate() {
        if let Some([u, v]) = s.center {
            check_finite("marker", i, &[("u", u), ("v", v)], &mut out);
        }
    }

    out
}
