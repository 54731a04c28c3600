//! From trial logs to a balanced, labeled, split dataset.
//!
//! Per trial: GPS velocity by finite differences, linear interpolation onto
//! IMU timestamps, non-overlapping 200-sample windows, C3 scoring and removal
//! of windows where the robot was not really driving. Across trials: equal
//! per-speed counts within each terrain, GT normalization by the largest raw
//! C3 that survives into the training set, and a stratified split on binned GT.
//! One terrain may be held out; its windows skip balancing and splitting and
//! are labeled with the training `c3_max`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::c3score::{normalize_gt, score_windows, C3Config, WindowScore};
use crate::error::{Error, Result};
use crate::interp::linear_at;
use crate::io::{write_dataset, write_json};
use crate::provenance::hash_json;
use crate::types::{
    speed_label, DataFrame, GpsFix, RunLog, ScoredWindow, Terrain, VelocitySample, CHANNEL_ORDER,
    N_CHANNELS, WINDOW_LEN,
};

/// Velocity from position fixes: central differences inside, one-sided at the ends.
pub fn derive_velocity(gps: &[GpsFix]) -> Result<Vec<VelocitySample>> {
    if gps.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 GPS fixes to derive velocity, got {}",
            gps.len()
        )));
    }
    if let Some(i) = (1..gps.len()).find(|&i| !(gps[i].t > gps[i - 1].t)) {
        return Err(Error::Input(format!(
            "GPS timestamps must strictly increase; fix {i} at t={} follows t={}",
            gps[i].t,
            gps[i - 1].t
        )));
    }
    let n = gps.len();
    Ok((0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            let dt = gps[b].t - gps[a].t;
            VelocitySample {
                t: gps[i].t,
                vx: (gps[b].x - gps[a].x) / dt,
                vy: (gps[b].y - gps[a].y) / dt,
            }
        })
        .collect())
}

/// Velocity resampled at new timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub samples: Vec<VelocitySample>,
    /// Queries that fell outside the sampled span and were clamped.
    pub clamped: usize,
}

/// Linear interpolation of each velocity channel at `query_ts`.
pub fn interpolate_to(samples: &[VelocitySample], query_ts: &[f64]) -> Result<Resampled> {
    if samples.is_empty() {
        return Err(Error::Input(
            "cannot interpolate an empty velocity series".into(),
        ));
    }
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let vx: Vec<f64> = samples.iter().map(|s| s.vx).collect();
    let vy: Vec<f64> = samples.iter().map(|s| s.vy).collect();
    let mut clamped = 0;
    let out = query_ts
        .iter()
        .map(|&q| {
            let (x, c) = linear_at(&ts, &vx, q);
            let (y, _) = linear_at(&ts, &vy, q);
            clamped += c as usize;
            VelocitySample { t: q, vx: x, vy: y }
        })
        .collect();
    Ok(Resampled {
        samples: out,
        clamped,
    })
}

/// Cuts a trial into consecutive non-overlapping 200-sample windows.
///
/// The trailing partial block is dropped. Velocity rows are the GPS-derived
/// velocity interpolated at the block's IMU timestamps.
pub fn make_windows(log: &RunLog) -> Result<Vec<DataFrame>> {
    let n_windows = log.imu.len() / WINDOW_LEN;
    if n_windows == 0 {
        log::warn!(
            "trial {}: only {} IMU samples, no {WINDOW_LEN}-sample window fits",
            log.meta.trial_id,
            log.imu.len()
        );
        return Ok(Vec::new());
    }
    let velocity = derive_velocity(&log.gps)?;
    let mut clamped = 0;
    let frames = log
        .imu
        .chunks_exact(WINDOW_LEN)
        .map(|block| {
            let ts: Vec<f64> = block.iter().map(|s| s.t).collect();
            let v = interpolate_to(&velocity, &ts)?;
            clamped += v.clamped;
            let mut channels = vec![0.0; N_CHANNELS * WINDOW_LEN];
            for (j, s) in block.iter().enumerate() {
                for k in 0..3 {
                    channels[k * WINDOW_LEN + j] = s.gyro[k];
                    channels[(k + 3) * WINDOW_LEN + j] = s.accel[k];
                }
                channels[6 * WINDOW_LEN + j] = v.samples[j].vx;
                channels[7 * WINDOW_LEN + j] = v.samples[j].vy;
            }
            DataFrame::new(ts[0], ts[WINDOW_LEN - 1], channels)
        })
        .collect::<Result<Vec<_>>>()?;
    if clamped > 0 {
        log::warn!(
            "trial {}: {clamped} IMU timestamps outside the GPS span; velocity clamped",
            log.meta.trial_id
        );
    }
    Ok(frames)
}

/// A window removed by [`prune_outliers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedWindow {
    pub window_id: String,
    pub class: String,
    pub mean_speed: f64,
    pub reason: String,
}

/// Drops windows whose mean planar speed is below `min_mean_speed`.
pub fn prune_outliers(
    windows: Vec<ScoredWindow>,
    min_mean_speed: f64,
) -> (Vec<ScoredWindow>, Vec<PrunedWindow>) {
    let mut audit = Vec::new();
    let kept = windows
        .into_iter()
        .filter(|w| {
            let speed = w.frame.mean_speed();
            if speed < min_mean_speed {
                audit.push(PrunedWindow {
                    window_id: w.window_id.clone(),
                    class: w.meta.class_key(),
                    mean_speed: speed,
                    reason: format!("mean speed below {min_mean_speed} m/s"),
                });
                false
            } else {
                true
            }
        })
        .collect();
    (kept, audit)
}

/// Speed key exact to the bit, so classes never merge through rounding.
fn speed_key(speed: f64) -> u64 {
    speed.to_bits()
}

/// Subsamples every speed level of a terrain down to that terrain's smallest level.
///
/// Every terrain must contain every speed level seen anywhere in the input.
/// Output is grouped by terrain then speed, each group in input order.
pub fn balance_classes(windows: &[ScoredWindow], seed: u64) -> Result<Vec<ScoredWindow>> {
    let mut groups: BTreeMap<(Terrain, u64), Vec<usize>> = BTreeMap::new();
    let mut speeds: BTreeMap<u64, f64> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        let s = speed_key(w.meta.commanded_speed);
        speeds.insert(s, w.meta.commanded_speed);
        groups.entry((w.meta.terrain, s)).or_default().push(i);
    }
    let terrains: BTreeSet<Terrain> = groups.keys().map(|(t, _)| *t).collect();
    for &t in &terrains {
        for (&s, &v) in &speeds {
            if !groups.contains_key(&(t, s)) {
                return Err(Error::Config(format!(
                    "class {t}_{} has no windows; cannot balance",
                    speed_label(v)
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &t in &terrains {
        let target = speeds
            .keys()
            .map(|&s| groups[&(t, s)].len())
            .min()
            .unwrap_or(0);
        for &s in speeds.keys() {
            let members = &groups[&(t, s)];
            let mut picked = sample(&mut rng, members.len(), target).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|k| windows[members[k]].clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    /// Equal-width GT bins over [0, 1].
    pub n_bins: usize,
    pub split_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.15,
            n_bins: 10,
            split_seed: 11,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.n_bins < 2 {
            return Err(Error::Config(format!(
                "n_bins must be at least 2, got {}",
                self.n_bins
            )));
        }
        Ok(())
    }

    pub fn bin_of(&self, gt: f64) -> usize {
        ((gt.clamp(0.0, 1.0) * self.n_bins as f64).floor() as usize).min(self.n_bins - 1)
    }
}

/// Indices into the split input, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified split: within each GT bin, `ceil(fraction * count)` windows go to validation.
pub fn stratified_split(windows: &[ScoredWindow], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); spec.n_bins];
    for (i, w) in windows.iter().enumerate() {
        bins[spec.bin_of(w.gt)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.split_seed);
    let mut is_val = vec![false; windows.len()];
    for members in &bins {
        if members.is_empty() {
            continue;
        }
        let n_val = (spec.validation_fraction * members.len() as f64).ceil() as usize;
        for k in sample(&mut rng, members.len(), n_val.min(members.len())) {
            is_val[members[k]] = true;
        }
    }
    let mut split = Split::default();
    for (i, v) in is_val.into_iter().enumerate() {
        if v {
            split.validation.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Windows slower than this on average are dropped, m/s.
    pub min_mean_speed: f64,
    pub balance_seed: u64,
    /// Terrain routed to a separate test file instead of the training set.
    pub holdout_terrain: Option<Terrain>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_mean_speed: 0.1,
            balance_seed: 3,
            holdout_terrain: Some(Terrain::Grass),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
}

/// Summary written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Largest raw C3 among the windows in the training file.
    pub c3_max: f64,
    /// True when every training window scored zero and `c3_max` fell back to 1.
    pub c3_max_fallback: bool,
    pub channel_order: Vec<String>,
    pub window_len: usize,
    pub n_trials: usize,
    pub n_windows_scored: usize,
    pub n_pruned: usize,
    /// Training-terrain class counts before balancing.
    pub class_counts_before_balance: BTreeMap<String, usize>,
    /// Class counts in the training file.
    pub class_counts: BTreeMap<String, usize>,
    pub n_train: usize,
    pub n_validation: usize,
    pub split: BTreeMap<String, SplitRole>,
    pub holdout_terrain: Option<Terrain>,
    pub test_class_counts: BTreeMap<String, usize>,
    pub n_test: usize,
    pub config_hashes: BTreeMap<String, String>,
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Everything [`build_dataset`] produces.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    /// Training-terrain windows, balanced, in file order.
    pub windows: Vec<ScoredWindow>,
    pub split: Split,
    /// Held-out terrain windows.
    pub test: Vec<ScoredWindow>,
    pub manifest: DatasetManifest,
    pub pruned: Vec<PrunedWindow>,
    /// Per-trial window scores, in trial order.
    pub scores: Vec<(String, Vec<WindowScore>)>,
}

impl DatasetBundle {
    pub fn train(&self) -> Vec<&ScoredWindow> {
        self.split.train.iter().map(|&i| &self.windows[i]).collect()
    }

    pub fn validation(&self) -> Vec<&ScoredWindow> {
        self.split
            .validation
            .iter()
            .map(|&i| &self.windows[i])
            .collect()
    }
}

fn class_counts<'a>(windows: impl Iterator<Item = &'a ScoredWindow>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for w in windows {
        *m.entry(w.meta.class_key()).or_insert(0) += 1;
    }
    m
}

/// Windows one trial with unnormalized labels.
pub fn window_trial(log: &RunLog, cfg: &C3Config) -> Result<(Vec<ScoredWindow>, Vec<WindowScore>)> {
    let frames = make_windows(log)?;
    let scores = score_windows(log, &frames, cfg)?;
    let windows = frames
        .into_iter()
        .zip(&scores)
        .map(|(frame, s)| ScoredWindow {
            window_id: format!("{}/{}", log.meta.trial_id, s.window_index),
            frame,
            c3_raw: s.c3_raw,
            gt: 0.0,
            meta: log.meta.clone(),
        })
        .collect();
    Ok((windows, scores))
}

/// Runs the whole dataset pipeline over a campaign.
///
/// Stage order: window, score, prune, split off the held-out terrain,
/// balance, take `c3_max` from the balanced set, label, split.
pub fn build_dataset(
    logs: &[RunLog],
    c3: &C3Config,
    spec: &SplitSpec,
    cfg: &PipelineConfig,
) -> Result<DatasetBundle> {
    c3.validate()?;
    spec.validate()?;
    let per_trial = logs
        .par_iter()
        .map(|log| window_trial(log, c3).map_err(|e| e.in_trial(&log.meta.trial_id)))
        .collect::<Result<Vec<_>>>()?;

    let mut all = Vec::new();
    let mut scores = Vec::new();
    for (log, (windows, s)) in logs.iter().zip(per_trial) {
        all.extend(windows);
        scores.push((log.meta.trial_id.clone(), s));
    }
    let n_windows_scored = all.len();
    let (kept, pruned) = prune_outliers(all, cfg.min_mean_speed);

    let (mut test, training): (Vec<_>, Vec<_>) = kept
        .into_iter()
        .partition(|w| Some(w.meta.terrain) == cfg.holdout_terrain);
    if training.is_empty() {
        return Err(Error::Input(
            "no training windows left after pruning".into(),
        ));
    }
    let before = class_counts(training.iter());
    let mut windows = balance_classes(&training, cfg.balance_seed)?;

    let raw_max = windows.iter().map(|w| w.c3_raw).fold(0.0, f64::max);
    let fallback = raw_max <= 0.0;
    let c3_max = if fallback {
        log::warn!("every training window has C3 = 0; using c3_max = 1");
        1.0
    } else {
        raw_max
    };
    for w in windows.iter_mut().chain(test.iter_mut()) {
        w.gt = normalize_gt(w.c3_raw, c3_max)?;
    }
    let split = stratified_split(&windows, spec)?;

    let mut split_map = BTreeMap::new();
    for &i in &split.train {
        split_map.insert(windows[i].window_id.clone(), SplitRole::Train);
    }
    for &i in &split.validation {
        split_map.insert(windows[i].window_id.clone(), SplitRole::Validation);
    }
    let mut config_hashes = BTreeMap::new();
    config_hashes.insert("c3".to_string(), hash_json(c3));
    config_hashes.insert("split".to_string(), hash_json(spec));
    config_hashes.insert("pipeline".to_string(), hash_json(cfg));

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        c3_max,
        c3_max_fallback: fallback,
        channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
        window_len: WINDOW_LEN,
        n_trials: logs.len(),
        n_windows_scored,
        n_pruned: pruned.len(),
        class_counts_before_balance: before,
        class_counts: class_counts(windows.iter()),
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        split: split_map,
        holdout_terrain: cfg.holdout_terrain,
        test_class_counts: class_counts(test.iter()),
        n_test: test.len(),
        config_hashes,
    };
    Ok(DatasetBundle {
        windows,
        split,
        test,
        manifest,
        pruned,
        scores,
    })
}

pub fn test_file_name(terrain: Terrain) -> String {
    format!("test_{terrain}.jsonl")
}

/// Writes `dataset.jsonl`, `manifest.json`, `pruned.csv` and, with a held-out
/// terrain, `test_<terrain>.jsonl`.
pub fn write_bundle(bundle: &DatasetBundle, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_dataset(&out.join("dataset.jsonl"), &bundle.windows)?;
    if let Some(t) = bundle.manifest.holdout_terrain {
        write_dataset(&out.join(test_file_name(t)), &bundle.test)?;
    }
    write_json(&out.join("manifest.json"), &bundle.manifest)?;

    let path = out.join("pruned.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(|e| Error::csv(&path, e))?;
    w.write_record(["window_id", "class", "mean_speed", "reason"])
        .map_err(|e| Error::csv(&path, e))?;
    for p in &bundle.pruned {
        w.write_record([
            p.window_id.clone(),
            p.class.clone(),
            format!("{}", p.mean_speed),
            p.reason.clone(),
        ])
        .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ImuSample, MarkerObservation, TrialMeta};

    fn meta(terrain: Terrain, speed: f64, id: &str) -> TrialMeta {
        TrialMeta {
            terrain,
            commanded_speed: speed,
            trial_id: id.into(),
            seed: 0,
        }
    }

    /// Trial driving along x with `pos(t)` and IMU at 200 Hz for `n_imu` samples.
    fn trial(n_imu: usize, pos: impl Fn(f64) -> f64) -> RunLog {
        let dur = n_imu as f64 / 200.0;
        let n_gps = (dur * 10.0).ceil() as usize + 1;
        RunLog {
            meta: meta(Terrain::Dirt, 1.0, "t0"),
            imu: (0..n_imu)
                .map(|i| ImuSample {
                    t: i as f64 / 200.0,
                    gyro: [i as f64, 0.0, 0.0],
                    accel: [0.0, 0.0, 9.81],
                })
                .collect(),
            gps: (0..n_gps)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    GpsFix {
                        t,
                        x: pos(t),
                        y: 0.0,
                    }
                })
                .collect(),
            marker: (0..(dur * 60.0) as usize)
                .map(|i| MarkerObservation::detected(i as f64 / 60.0, 100.0, 100.0))
                .collect(),
            marker_position: [100.0, 0.0],
        }
    }

    fn window(terrain: Terrain, speed: f64, id: usize, gt: f64) -> ScoredWindow {
        ScoredWindow {
            window_id: format!("{terrain}_{speed}/{id}"),
            frame: DataFrame::new(0.0, 1.0, vec![0.0; N_CHANNELS * WINDOW_LEN]).unwrap(),
            c3_raw: gt * 10.0,
            gt,
            meta: meta(terrain, speed, "x"),
        }
    }

    #[test]
    fn velocity_linear_and_stationary() {
        let gps: Vec<_> = (0..20)
            .map(|i| GpsFix {
                t: i as f64 * 0.1,
                x: i as f64 * 0.1,
                y: 0.0,
            })
            .collect();
        for v in derive_velocity(&gps).unwrap() {
            assert!((v.vx - 1.0).abs() < 1e-12 && v.vy == 0.0);
        }
        let still: Vec<_> = (0..5)
            .map(|i| GpsFix {
                t: i as f64,
                x: 3.0,
                y: -2.0,
            })
            .collect();
        assert!(derive_velocity(&still)
            .unwrap()
            .iter()
            .all(|v| v.vx == 0.0 && v.vy == 0.0));
    }

    #[test]
    fn velocity_of_quadratic_has_second_order_error() {
        // central differences are exact for x = t^2 inside; ends are off by dt
        let dt = 0.1;
        let gps: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64 * dt;
                GpsFix {
                    t,
                    x: t * t,
                    y: 0.0,
                }
            })
            .collect();
        let v = derive_velocity(&gps).unwrap();
        for s in &v[1..29] {
            assert!((s.vx - 2.0 * s.t).abs() < 1e-9, "{s:?}");
        }
        assert!((v[0].vx - 2.0 * v[0].t).abs() <= dt + 1e-12);
        assert!((v[29].vx - 2.0 * v[29].t).abs() <= dt + 1e-12);
    }

    #[test]
    fn velocity_errors() {
        assert!(derive_velocity(&[GpsFix {
            t: 0.0,
            x: 0.0,
            y: 0.0
        }])
        .is_err());
        let dup = [
            GpsFix {
                t: 0.0,
                x: 0.0,
                y: 0.0,
            },
            GpsFix {
                t: 0.0,
                x: 1.0,
                y: 0.0,
            },
        ];
        assert!(matches!(derive_velocity(&dup), Err(Error::Input(_))));
    }

    #[test]
    fn interpolation_examples() {
        let s = [
            VelocitySample {
                t: 0.0,
                vx: 1.0,
                vy: 0.0,
            },
            VelocitySample {
                t: 1.0,
                vx: 2.0,
                vy: 4.0,
            },
        ];
        let r = interpolate_to(&s, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(r.samples[0].vx, 1.5);
        assert_eq!(r.samples[0].vy, 2.0);
        assert_eq!(r.samples[1].vx, 2.0);
        assert_eq!(r.samples[2].vx, 2.0);
        assert_eq!(r.clamped, 1);
        assert!(interpolate_to(&[], &[0.0]).is_err());
    }

    #[test]
    fn piecewise_linear_interpolation_matches_closed_form() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = 0.0;
        let knots: Vec<VelocitySample> = (0..40)
            .map(|_| {
                t += rng.random_range(0.05..0.3);
                VelocitySample {
                    t,
                    vx: rng.random_range(-2.0..2.0),
                    vy: rng.random_range(-2.0..2.0),
                }
            })
            .collect();
        let at_knots =
            interpolate_to(&knots, &knots.iter().map(|k| k.t).collect::<Vec<_>>()).unwrap();
        assert_eq!(at_knots.samples, knots);
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let q = a.t + 0.3 * (b.t - a.t);
            let r = interpolate_to(&knots, &[q]).unwrap().samples[0];
            let line = |ya: f64, yb: f64| ya + (yb - ya) * (q - a.t) / (b.t - a.t);
            assert!((r.vx - line(a.vx, b.vx)).abs() < 1e-12);
            assert!((r.vy - line(a.vy, b.vy)).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts_and_shape() {
        assert_eq!(make_windows(&trial(1000, |t| t)).unwrap().len(), 5);
        assert_eq!(make_windows(&trial(399, |t| t)).unwrap().len(), 1);
        assert!(make_windows(&trial(150, |t| t)).unwrap().is_empty());
        let w = make_windows(&trial(400, |t| t)).unwrap();
        for (k, f) in w.iter().enumerate() {
            assert_eq!(f.channels.len(), 8 * 200);
            // gyro_x carries the global sample index, so row 0 pins the layout
            assert_eq!(f.row(0)[0], (k * 200) as f64);
            assert_eq!(f.row(5)[17], 9.81);
            assert!(f.row(6).iter().all(|v| (v - 1.0).abs() < 1e-12));
            assert_eq!(f.t_start, (k * 200) as f64 / 200.0);
            assert_eq!(f.t_end, (k * 200 + 199) as f64 / 200.0);
        }
    }

    #[test]
    fn velocity_rows_recompute_from_runlog() {
        let log = trial(1000, |t| t * t * 0.5 + (3.0 * t).sin());
        let v = derive_velocity(&log.gps).unwrap();
        for f in make_windows(&log).unwrap() {
            let i0 = log.imu.iter().position(|s| s.t == f.t_start).unwrap();
            let ts: Vec<f64> = log.imu[i0..i0 + 200].iter().map(|s| s.t).collect();
            let r = interpolate_to(&v, &ts).unwrap();
            let vx: Vec<f64> = r.samples.iter().map(|s| s.vx).collect();
            assert_eq!(f.row(6), &vx[..]);
        }
    }

    fn scored(log: &RunLog) -> Vec<ScoredWindow> {
        window_trial(log, &C3Config::default()).unwrap().0
    }

    #[test]
    fn pruning_examples() {
        let (kept, audit) = prune_outliers(scored(&trial(2000, |_| 3.0)), 0.1);
        assert!(kept.is_empty());
        assert_eq!(audit.len(), 10);

        let (kept, audit) = prune_outliers(scored(&trial(2000, |t| t)), 0.1);
        assert_eq!(kept.len(), 10);
        assert!(audit.is_empty());

        // parked for 2 s, then 1 m/s; velocity is smeared over one GPS interval
        let (kept, audit) = prune_outliers(scored(&trial(2000, |t| (t - 2.0).max(0.0))), 0.1);
        assert_eq!(audit.len(), 2);
        assert_eq!(audit[0].window_id, "t0/0");
        assert_eq!(audit[1].window_id, "t0/1");
        assert_eq!(kept.len(), 8);
    }

    #[test]
    fn balancing_min_rule_and_determinism() {
        let mut ws = Vec::new();
        for (speed, n) in [(0.5, 50), (1.0, 30), (1.5, 20)] {
            ws.extend((0..n).map(|i| window(Terrain::Dirt, speed, i, 0.1)));
        }
        for (speed, n) in [(0.5, 7), (1.0, 9), (1.5, 8)] {
            ws.extend((0..n).map(|i| window(Terrain::Pavement, speed, i, 0.1)));
        }
        let b = balance_classes(&ws, 9).unwrap();
        let counts = class_counts(b.iter());
        assert_eq!(counts["dirt_0.5"], 20);
        assert_eq!(counts["dirt_1.0"], 20);
        assert_eq!(counts["dirt_1.5"], 20);
        assert_eq!(counts["pavement_0.5"], 7);
        assert_eq!(counts["pavement_1.5"], 7);
        assert_eq!(b, balance_classes(&ws, 9).unwrap());
        assert_ne!(b, balance_classes(&ws, 10).unwrap());

        let even: Vec<_> = [0.5, 1.0, 1.5]
            .iter()
            .flat_map(|&s| (0..4).map(move |i| window(Terrain::Grass, s, i, 0.0)))
            .collect();
        let mut got = balance_classes(&even, 1).unwrap();
        let mut want = even.clone();
        got.sort_by(|a, b| a.window_id.cmp(&b.window_id));
        want.sort_by(|a, b| a.window_id.cmp(&b.window_id));
        assert_eq!(got, want);
    }

    #[test]
    fn balancing_names_empty_class() {
        let ws = vec![
            window(Terrain::Dirt, 0.5, 0, 0.0),
            window(Terrain::Dirt, 1.0, 0, 0.0),
            window(Terrain::Pavement, 0.5, 0, 0.0),
        ];
        let err = balance_classes(&ws, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("pavement_1.0"), "{err}");
    }

    #[test]
    fn split_ceiling_rule() {
        // 10 windows in each of 10 bins: ceil(1.5) = 2 per bin
        let ws: Vec<_> = (0..100)
            .map(|i| window(Terrain::Dirt, 1.0, i, (i / 10) as f64 / 10.0 + 0.05))
            .collect();
        let spec = SplitSpec::default();
        let s = stratified_split(&ws, &spec).unwrap();
        assert_eq!(s.validation.len(), 20);
        let mut per_bin = [0; 10];
        for &i in &s.validation {
            per_bin[spec.bin_of(ws[i].gt)] += 1;
        }
        assert!(per_bin.iter().all(|&c| c == 2));

        let lone = vec![window(Terrain::Dirt, 1.0, 0, 0.95)];
        let s = stratified_split(&lone, &spec).unwrap();
        assert_eq!(s.validation, vec![0]);
        assert!(s.train.is_empty());
    }

    #[test]
    fn split_is_a_partition_and_seeded() {
        let ws: Vec<_> = (0..321)
            .map(|i| window(Terrain::Dirt, 1.0, i, ((i * 37) % 100) as f64 / 100.0))
            .collect();
        let spec = SplitSpec {
            split_seed: 4,
            ..Default::default()
        };
        let s = stratified_split(&ws, &spec).unwrap();
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..321).collect::<Vec<_>>());
        assert_eq!(s, stratified_split(&ws, &spec).unwrap());
        assert_ne!(
            s,
            stratified_split(
                &ws,
                &SplitSpec {
                    split_seed: 5,
                    ..spec
                }
            )
            .unwrap()
        );
    }

    #[test]
    fn split_spec_validation() {
        assert!(SplitSpec {
            validation_fraction: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SplitSpec {
            validation_fraction: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SplitSpec {
            n_bins: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        let s = SplitSpec::default();
        assert_eq!(s.bin_of(0.0), 0);
        assert_eq!(s.bin_of(0.1), 1);
        assert_eq!(s.bin_of(1.0), 9);
    }
}
