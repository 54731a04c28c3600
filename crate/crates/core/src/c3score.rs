//! Count-circles-crossed (C3) stability score.
//!
//! For every pair of consecutive detected marker frames, concentric circles
//! with linearly spaced radii are centred on the previous marker center and
//! the CC score is the number of circles the current center lies beyond.
//! Each CC is scaled by `d_aruco / d_max`, the robot-to-marker distance at the
//! current frame over the longest such distance in the trial, and the scaled
//! values are summed over a window to give C3.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::linear_at;
use crate::types::{DataFrame, MarkerObservation, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct C3Config {
    pub n_circles: usize,
    /// Smallest radius, pixels.
    pub r_min: f64,
    /// Largest radius, pixels.
    pub r_max: f64,
    /// Count a circle whose radius equals the displacement as crossed.
    pub tie_counts_as_crossed: bool,
}

impl Default for C3Config {
    fn default() -> Self {
        Self {
            n_circles: 20,
            r_min: 2.0,
            r_max: 40.0,
            tie_counts_as_crossed: false,
        }
    }
}

impl C3Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_circles == 0 {
            return Err(Error::Config("n_circles must be at least 1".into()));
        }
        if !(self.r_min.is_finite() && self.r_max.is_finite()) {
            return Err(Error::Config("circle radii must be finite".into()));
        }
        if !(0.0 < self.r_min && self.r_min <= self.r_max) {
            return Err(Error::Config(format!(
                "need 0 < r_min <= r_max, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if self.n_circles > 1 && self.r_min == self.r_max {
            return Err(Error::Config(
                "several circles need r_min < r_max to be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Radius of the circle at zero-based index `i`.
    #[inline]
    pub fn radius(&self, i: usize) -> f64 {
        if self.n_circles == 1 {
            self.r_min
        } else {
            self.r_min + i as f64 * (self.r_max - self.r_min) / (self.n_circles - 1) as f64
        }
    }

    #[inline]
    fn crossed(&self, radius: f64, d: f64) -> bool {
        if self.tie_counts_as_crossed {
            radius <= d
        } else {
            radius < d
        }
    }
}

/// Robot-to-marker distance at a frame and the trial maximum, metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceContext {
    pub d_aruco: f64,
    pub d_max: f64,
}

impl DistanceContext {
    pub fn unit() -> Self {
        Self {
            d_aruco: 1.0,
            d_max: 1.0,
        }
    }
}

pub fn circle_radii(cfg: &C3Config) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok((0..cfg.n_circles).map(|i| cfg.radius(i)).collect())
}

/// Number of circles around `prev` that `cur` has moved past.
///
/// The count is found in constant time from the linear spacing and then
/// corrected against the actual radii so rounding never changes the answer.
pub fn cc_score(prev: [f64; 2], cur: [f64; 2], cfg: &C3Config) -> Result<u32> {
    if !prev.iter().chain(&cur).all(|v| v.is_finite()) {
        return Err(Error::Input(format!(
            "marker centers must be finite, got {prev:?} -> {cur:?}"
        )));
    }
    let dx = cur[0] - prev[0];
    let dy = cur[1] - prev[1];
    let d = (dx * dx + dy * dy).sqrt();
    let n = cfg.n_circles;

    let mut k = if n == 1 || d <= cfg.r_min {
        0
    } else {
        let step = (cfg.r_max - cfg.r_min) / (n - 1) as f64;
        (((d - cfg.r_min) / step).ceil().max(0.0) as usize).min(n)
    };
    while k < n && cfg.crossed(cfg.radius(k), d) {
        k += 1;
    }
    while k > 0 && !cfg.crossed(cfg.radius(k - 1), d) {
        k -= 1;
    }
    Ok(k as u32)
}

/// CC scaled by `d_aruco / d_max`, with `d_aruco` clamped to `d_max`.
pub fn normalized_cc(cc: u32, ctx: DistanceContext) -> Result<f64> {
    if !(ctx.d_max.is_finite() && ctx.d_max > 0.0) {
        return Err(Error::Input(format!(
            "d_max must be positive, got {}",
            ctx.d_max
        )));
    }
    if !(ctx.d_aruco.is_finite() && ctx.d_aruco > 0.0) {
        return Err(Error::Input(format!(
            "d_aruco must be positive, got {}",
            ctx.d_aruco
        )));
    }
    Ok(cc as f64 * (ctx.d_aruco.min(ctx.d_max) / ctx.d_max))
}

/// Sum of normalized CC over consecutive frame pairs; `distances[i]` scales the
/// pair ending at frame `i`.
pub fn c3_score(
    frames: &[MarkerObservation],
    distances: &[DistanceContext],
    cfg: &C3Config,
) -> Result<f64> {
    cfg.validate()?;
    if frames.len() != distances.len() {
        return Err(Error::Input(format!(
            "{} frames but {} distance contexts",
            frames.len(),
            distances.len()
        )));
    }
    let centers = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.center
                .ok_or_else(|| Error::Input(format!("frame {i} at t={} was not detected", f.t)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    for i in 1..centers.len() {
        let cc = cc_score(centers[i - 1], centers[i], cfg)?;
        total += normalized_cc(cc, distances[i])?;
    }
    Ok(total)
}

/// Scales a raw C3 into `[0, 1]` by the training-set maximum.
pub fn normalize_gt(c3: f64, c3_max: f64) -> Result<f64> {
    if !(c3_max.is_finite() && c3_max > 0.0) {
        return Err(Error::Input(format!(
            "c3_max must be positive, got {c3_max}"
        )));
    }
    if !(c3.is_finite() && c3 >= 0.0) {
        return Err(Error::Input(format!("c3 must be non-negative, got {c3}")));
    }
    Ok((c3 / c3_max).clamp(0.0, 1.0))
}

/// C3 of one window, one row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Detected marker frames inside the window.
    pub n_frames: usize,
    pub c3_raw: f64,
    /// Fewer than two detected frames, so no pair could be scored.
    pub flagged: bool,
}

/// Robot-to-marker distance along the GPS track, linearly interpolated.
pub struct MarkerRange {
    ts: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    marker: [f64; 2],
    d_max: f64,
}

impl MarkerRange {
    pub fn new(log: &RunLog) -> Result<Self> {
        if log.gps.is_empty() {
            return Err(Error::Input("trial has no GPS fixes".into()));
        }
        let marker = log.marker_position;
        let ts: Vec<f64> = log.gps.iter().map(|g| g.t).collect();
        let xs: Vec<f64> = log.gps.iter().map(|g| g.x).collect();
        let ys: Vec<f64> = log.gps.iter().map(|g| g.y).collect();
        // distance is convex along each straight segment, so the maximum is at a fix
        let d_max = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - marker[0]).hypot(y - marker[1]))
            .fold(0.0, f64::max);
        Ok(Self {
            ts,
            xs,
            ys,
            marker,
            d_max,
        })
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn distance_at(&self, t: f64) -> f64 {
        let (x, _) = linear_at(&self.ts, &self.xs, t);
        let (y, _) = linear_at(&self.ts, &self.ys, t);
        (x - self.marker[0]).hypot(y - self.marker[1])
    }

    pub fn context_at(&self, t: f64) -> DistanceContext {
        DistanceContext {
            d_aruco: self.distance_at(t),
            d_max: self.d_max,
        }
    }
}

/// Scores every window of a trial.
///
/// Uses detected marker frames with `t_start <= t <= t_end`; windows with
/// fewer than two such frames score zero and are flagged.
pub fn score_windows(
    log: &RunLog,
    windows: &[DataFrame],
    cfg: &C3Config,
) -> Result<Vec<WindowScore>> {
    cfg.validate()?;
    let range = MarkerRange::new(log)?;
    let detected: Vec<MarkerObservation> = log
        .marker
        .iter()
        .filter(|m| m.is_detected())
        .copied()
        .collect();
    let times: Vec<f64> = detected.iter().map(|m| m.t).collect();

    windows
        .iter()
        .enumerate()
        .map(|(idx, w)| {
            let lo = times.partition_point(|&t| t < w.t_start);
            let hi = times.partition_point(|&t| t <= w.t_end);
            let frames = &detected[lo..hi.max(lo)];
            let (c3_raw, flagged) = if frames.len() < 2 {
                (0.0, true)
            } else {
                let ctx: Vec<DistanceContext> =
                    frames.iter().map(|f| range.context_at(f.t)).collect();
                (c3_score(frames, &ctx, cfg)?, false)
            };
            Ok(WindowScore {
                window_index: idx,
                t_start: w.t_start,
                t_end: w.t_end,
                n_frames: frames.len(),
                c3_raw,
                flagged,
            })
        })
        .collect()
}

pub fn write_scores_csv(path: &Path, scores: &[WindowScore]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "window_index",
        "t_start",
        "t_end",
        "n_frames",
        "c3_raw",
        "flagged",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for s in scores {
        w.write_record([
            s.window_index.to_string(),
            format!("{}", s.t_start),
            format!("{}", s.t_end),
            s.n_frames.to_string(),
            format!("{}", s.c3_raw),
            s.flagged.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GpsFix, Terrain, TrialMeta};
    use proptest::prelude::*;

    /// Independent count: loop over every radius against the hypot distance.
    fn brute_cc(prev: [f64; 2], cur: [f64; 2], cfg: &C3Config) -> u32 {
        let d = (cur[0] - prev[0]).hypot(cur[1] - prev[1]);
        let mut count = 0;
        for i in 1..=cfg.n_circles {
            let r = if cfg.n_circles == 1 {
                cfg.r_min
            } else {
                cfg.r_min + (i - 1) as f64 * (cfg.r_max - cfg.r_min) / (cfg.n_circles - 1) as f64
            };
            let hit = if cfg.tie_counts_as_crossed {
                r <= d
            } else {
                r < d
            };
            if hit {
                count += 1;
            }
        }
        count
    }

    fn det(t: f64, u: f64, v: f64) -> MarkerObservation {
        MarkerObservation::detected(t, u, v)
    }

    #[test]
    fn default_radii_are_two_to_forty() {
        let r = circle_radii(&C3Config::default()).unwrap();
        let expected: Vec<f64> = (1..=20).map(|i| 2.0 * i as f64).collect();
        assert_eq!(r, expected);
    }

    #[test]
    fn degenerate_and_small_radii() {
        let one = C3Config {
            n_circles: 1,
            r_min: 5.0,
            r_max: 5.0,
            ..Default::default()
        };
        assert_eq!(circle_radii(&one).unwrap(), vec![5.0]);
        let three = C3Config {
            n_circles: 3,
            r_min: 1.0,
            r_max: 3.0,
            ..Default::default()
        };
        assert_eq!(circle_radii(&three).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            C3Config {
                n_circles: 0,
                ..Default::default()
            },
            C3Config {
                r_min: 0.0,
                ..Default::default()
            },
            C3Config {
                r_min: 50.0,
                ..Default::default()
            },
            C3Config {
                r_max: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(
                matches!(circle_radii(&cfg), Err(Error::Config(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn cc_examples() {
        let cfg = C3Config::default();
        assert_eq!(cc_score([100.0, 100.0], [100.0, 100.0], &cfg).unwrap(), 0);
        assert_eq!(cc_score([100.0, 100.0], [107.0, 100.0], &cfg).unwrap(), 3);
        assert_eq!(cc_score([0.0, 0.0], [30.0, 40.0], &cfg).unwrap(), 20);
        assert_eq!(cc_score([100.0, 100.0], [100.0, 110.0], &cfg).unwrap(), 4);
        let tie = C3Config {
            tie_counts_as_crossed: true,
            ..cfg
        };
        assert_eq!(cc_score([100.0, 100.0], [100.0, 110.0], &tie).unwrap(), 5);
        assert_eq!(cc_score([0.0, 0.0], [0.0, 0.0], &tie).unwrap(), 0);
    }

    #[test]
    fn cc_rejects_non_finite() {
        let cfg = C3Config::default();
        assert!(matches!(
            cc_score([f64::NAN, 0.0], [1.0, 1.0], &cfg),
            Err(Error::Input(_))
        ));
        assert!(cc_score([0.0, 0.0], [f64::INFINITY, 1.0], &cfg).is_err());
    }

    #[test]
    fn cc_matches_brute_force_on_integer_grid() {
        // integer offsets hit every radius exactly, so this covers all ties
        for tie in [false, true] {
            let cfg = C3Config {
                tie_counts_as_crossed: tie,
                ..Default::default()
            };
            for dx in -45..=45 {
                for dy in -45..=45 {
                    let p = [10.0, 20.0];
                    let c = [10.0 + dx as f64, 20.0 + dy as f64];
                    assert_eq!(cc_score(p, c, &cfg).unwrap(), brute_cc(p, c, &cfg));
                }
            }
        }
    }

    #[test]
    fn normalized_cc_examples() {
        let ctx = |a, m| DistanceContext {
            d_aruco: a,
            d_max: m,
        };
        assert_eq!(normalized_cc(4, ctx(10.0, 10.0)).unwrap(), 4.0);
        assert_eq!(normalized_cc(4, ctx(5.0, 10.0)).unwrap(), 2.0);
        assert_eq!(normalized_cc(0, ctx(3.0, 7.0)).unwrap(), 0.0);
        assert_eq!(normalized_cc(4, ctx(12.0, 10.0)).unwrap(), 4.0);
        assert!(matches!(
            normalized_cc(4, ctx(1.0, 0.0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn c3_examples() {
        let cfg = C3Config::default();
        let one = [det(0.0, 1.0, 1.0)];
        assert_eq!(
            c3_score(&one, &[DistanceContext::unit()], &cfg).unwrap(),
            0.0
        );

        let two = [det(0.0, 100.0, 100.0), det(0.1, 107.0, 100.0)];
        let unit2 = [DistanceContext::unit(); 2];
        assert_eq!(c3_score(&two, &unit2, &cfg).unwrap(), 3.0);

        let three = [det(0.0, 0.0, 0.0), det(0.1, 7.0, 0.0), det(0.2, 7.0, 50.0)];
        let unit3 = [DistanceContext::unit(); 3];
        assert_eq!(c3_score(&three, &unit3, &cfg).unwrap(), 23.0);

        let half = [DistanceContext {
            d_aruco: 0.5,
            d_max: 1.0,
        }; 3];
        assert_eq!(c3_score(&three, &half, &cfg).unwrap(), 11.5);
    }

    #[test]
    fn c3_errors() {
        let cfg = C3Config::default();
        let frames = [det(0.0, 0.0, 0.0), det(0.1, 1.0, 0.0)];
        assert!(matches!(
            c3_score(&frames, &[DistanceContext::unit()], &cfg),
            Err(Error::Input(_))
        ));
        let with_miss = [det(0.0, 0.0, 0.0), MarkerObservation::missed(0.1)];
        assert!(c3_score(&with_miss, &[DistanceContext::unit(); 2], &cfg).is_err());
    }

    #[test]
    fn normalize_gt_examples() {
        assert_eq!(normalize_gt(0.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalize_gt(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(normalize_gt(23.0, 46.0).unwrap(), 0.5);
        assert_eq!(normalize_gt(99.0, 46.0).unwrap(), 1.0);
        assert!(matches!(normalize_gt(1.0, 0.0), Err(Error::Input(_))));
        assert!(normalize_gt(1.0, -2.0).is_err());
    }

    fn still_log(centers: &[[f64; 2]]) -> RunLog {
        RunLog {
            meta: TrialMeta {
                terrain: Terrain::Dirt,
                commanded_speed: 1.0,
                trial_id: "t".into(),
                seed: 0,
            },
            imu: vec![],
            // robot parked at unit distance from the marker: factor is 1
            gps: vec![
                GpsFix {
                    t: 0.0,
                    x: 0.0,
                    y: 0.0,
                },
                GpsFix {
                    t: 10.0,
                    x: 0.0,
                    y: 0.0,
                },
            ],
            marker: centers
                .iter()
                .enumerate()
                .map(|(i, c)| det(i as f64 * 0.1, c[0], c[1]))
                .collect(),
            marker_position: [1.0, 0.0],
        }
    }

    fn frame(t0: f64, t1: f64) -> DataFrame {
        DataFrame::new(t0, t1, vec![0.0; 1600]).unwrap()
    }

    #[test]
    fn score_windows_examples() {
        let cfg = C3Config::default();
        let still = still_log(&[[5.0, 5.0]; 20]);
        let s = score_windows(&still, &[frame(0.0, 0.95), frame(1.0, 1.9)], &cfg).unwrap();
        assert!(s.iter().all(|w| w.c3_raw == 0.0 && !w.flagged));

        let log = still_log(&[[0.0, 0.0], [7.0, 0.0], [7.0, 50.0]]);
        let s = score_windows(&log, &[frame(0.0, 0.2)], &cfg).unwrap();
        assert_eq!(s[0].c3_raw, 23.0);
        assert_eq!(s[0].n_frames, 3);

        let s = score_windows(&log, &[frame(5.0, 6.0)], &cfg).unwrap();
        assert_eq!(
            s[0],
            WindowScore {
                window_index: 0,
                t_start: 5.0,
                t_end: 6.0,
                n_frames: 0,
                c3_raw: 0.0,
                flagged: true
            }
        );
    }

    #[test]
    fn score_windows_skips_missed_frames_and_uses_distance() {
        let cfg = C3Config::default();
        let mut log = still_log(&[[0.0, 0.0], [0.0, 0.0], [7.0, 0.0]]);
        log.marker[1] = MarkerObservation::missed(0.1);
        // robot drives from 10 m to 5 m from the marker over 10 s
        log.marker_position = [10.0, 0.0];
        log.gps[1].x = 5.0;
        let s = score_windows(&log, &[frame(0.0, 1.0)], &cfg).unwrap();
        assert_eq!(s[0].n_frames, 2);
        // pair ends at t=0.2, distance 9.9 of max 10
        let expected = 3.0 * ((10.0 - 0.1f64).hypot(0.0) / 10.0);
        assert!((s[0].c3_raw - expected).abs() < 1e-12);
    }

    fn arb_cfg() -> impl Strategy<Value = C3Config> {
        (1usize..40, 0.5f64..10.0, 0.0f64..60.0, any::<bool>()).prop_map(|(n, lo, span, tie)| {
            C3Config {
                n_circles: n,
                r_min: lo,
                r_max: if n == 1 { lo } else { lo + span.max(0.1) },
                tie_counts_as_crossed: tie,
            }
        })
    }

    proptest! {
        #[test]
        fn cc_equals_brute_force(cfg in arb_cfg(), a in -500.0f64..500.0, b in -500.0f64..500.0,
                                 dx in -80.0f64..80.0, dy in -80.0f64..80.0) {
            let p = [a, b];
            let c = [a + dx, b + dy];
            prop_assert_eq!(cc_score(p, c, &cfg).unwrap(), brute_cc(p, c, &cfg));
        }

        #[test]
        fn cc_monotone_in_displacement(d1 in 0.0f64..60.0, d2 in 0.0f64..60.0, theta in 0.0f64..6.3) {
            let cfg = C3Config::default();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let at = |d: f64| cc_score([0.0, 0.0], [d * theta.cos(), d * theta.sin()], &cfg).unwrap();
            prop_assert!(at(lo) <= at(hi) || (hi - lo) < 1e-9);
        }

        #[test]
        fn cc_saturates_past_r_max(d in 40.0001f64..1e4, theta in 0.0f64..6.3) {
            let cfg = C3Config::default();
            prop_assert_eq!(cc_score([3.0, 4.0], [3.0 + d * theta.cos(), 4.0 + d * theta.sin()], &cfg).unwrap(), 20);
        }

        #[test]
        fn cc_invariant_under_rigid_motion(px in -300.0f64..300.0, py in -300.0f64..300.0,
                                           dx in -50.0f64..50.0, dy in -50.0f64..50.0,
                                           tx in -1e3f64..1e3, ty in -1e3f64..1e3, theta in 0.0f64..6.3) {
            let cfg = C3Config::default();
            let d = dx.hypot(dy);
            // skip displacements within rounding of a radius; a rigid motion may move them across it
            prop_assume!((0..20).all(|i| (cfg.radius(i) - d).abs() > 1e-6));
            let (s, c) = theta.sin_cos();
            let tf = |p: [f64; 2]| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty];
            let p = [px, py];
            let q = [px + dx, py + dy];
            prop_assert_eq!(cc_score(p, q, &cfg).unwrap(), cc_score(tf(p), tf(q), &cfg).unwrap());
        }

        #[test]
        fn c3_additive_over_concatenation(steps in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0, 0.1f64..1.0), 2..30),
                                          split in 1usize..29) {
            let cfg = C3Config::default();
            let mut pos = [0.0, 0.0];
            let mut frames = Vec::new();
            let mut ctx = Vec::new();
            for (i, (dx, dy, f)) in steps.iter().enumerate() {
                pos = [pos[0] + dx, pos[1] + dy];
                frames.push(det(i as f64, pos[0], pos[1]));
                ctx.push(DistanceContext { d_aruco: *f, d_max: 1.0 });
            }
            let k = split.min(frames.len() - 1);
            let whole = c3_score(&frames, &ctx, &cfg).unwrap();
            let left = c3_score(&frames[..k], &ctx[..k], &cfg).unwrap();
            let right = c3_score(&frames[k..], &ctx[k..], &cfg).unwrap();
            let boundary = normalized_cc(
                cc_score(frames[k - 1].center.unwrap(), frames[k].center.unwrap(), &cfg).unwrap(),
                ctx[k],
            ).unwrap();
            prop_assert!((whole - (left + right + boundary)).abs() < 1e-9);
        }

        #[test]
        fn halving_distance_halves_c3(steps in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0, 0.1f64..1.0), 1..30)) {
            let cfg = C3Config::default();
            let mut pos = [0.0, 0.0];
            let mut frames = vec![det(0.0, 0.0, 0.0)];
            let mut ctx = vec![DistanceContext::unit()];
            for (i, (dx, dy, f)) in steps.iter().enumerate() {
                pos = [pos[0] + dx, pos[1] + dy];
                frames.push(det(i as f64 + 1.0, pos[0], pos[1]));
                ctx.push(DistanceContext { d_aruco: *f, d_max: 1.0 });
            }
            let halved: Vec<_> = ctx.iter().map(|c| DistanceContext { d_aruco: c.d_aruco / 2.0, ..*c }).collect();
            let full = c3_score(&frames, &ctx, &cfg).unwrap();
            let half = c3_score(&frames, &halved, &cfg).unwrap();
            prop_assert_eq!(half, full / 2.0);
        }
    }
}
