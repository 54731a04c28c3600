//! On-disk formats for trial logs and scored datasets.
//!
//! A trial directory holds `meta.json`, `imu.csv` (`t,gx,gy,gz,ax,ay,az`),
//! `gps.csv` (`t,x,y`) and `marker.csv` (`t,u,v,detected`). CSV files use a
//! header row, `.` decimal separator and LF line endings. Reals are written
//! in shortest round-trip decimal form so decode(encode(x)) is bit-exact.
//! Undetected marker rows leave `u` and `v` empty.
//!
//! A dataset is JSON Lines, one [`ScoredWindow`] per line; the 8×200 matrix
//! is a flat row-major array in [`crate::types::CHANNEL_ORDER`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GpsFix, ImuSample, MarkerObservation, RunLog, ScoredWindow, TrialMeta};

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: TrialMeta,
    marker_position: [f64; 2],
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn parse_num(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        Error::Input(format!(
            "{}:{line}: field {field}: cannot parse {s:?} as a number",
            path.display()
        ))
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let got = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(Error::Input(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            header,
            got
        )));
    }
    r.records()
        .map(|rec| rec.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
pub const GPS_HEADER: [&str; 3] = ["t", "x", "y"];
pub const MARKER_HEADER: [&str; 4] = ["t", "u", "v", "detected"];

/// Writes `log` into `dir`, creating it if needed.
pub fn write_runlog(log: &RunLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta_path = dir.join("meta.json");
    let meta = MetaFile {
        meta: log.meta.clone(),
        marker_position: log.marker_position,
    };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    write_rows(
        &dir.join("imu.csv"),
        &IMU_HEADER,
        log.imu.iter().map(|s| {
            let mut row = vec![num(s.t)];
            row.extend(s.gyro.iter().chain(&s.accel).map(|&v| num(v)));
            row
        }),
    )?;
    write_rows(
        &dir.join("gps.csv"),
        &GPS_HEADER,
        log.gps.iter().map(|s| vec![num(s.t), num(s.x), num(s.y)]),
    )?;
    write_rows(
        &dir.join("marker.csv"),
        &MARKER_HEADER,
        log.marker.iter().map(|s| match s.center {
            Some([u, v]) => vec![num(s.t), num(u), num(v), "1".into()],
            None => vec![num(s.t), String::new(), String::new(), "0".into()],
        }),
    )
}

/// Reads a trial directory written by [`write_runlog`].
pub fn read_runlog(dir: &Path) -> Result<RunLog> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;

    let path = dir.join("imu.csv");
    let imu = read_rows(&path, &IMU_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut v = [0.0; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = parse_num(&path, i + 2, IMU_HEADER[k], &rec[k])?;
            }
            Ok(ImuSample {
                t: v[0],
                gyro: [v[1], v[2], v[3]],
                accel: [v[4], v[5], v[6]],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let path = dir.join("gps.csv");
    let gps = read_rows(&path, &GPS_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(GpsFix {
                t: parse_num(&path, i + 2, "t", &rec[0])?,
                x: parse_num(&path, i + 2, "x", &rec[1])?,
                y: parse_num(&path, i + 2, "y", &rec[2])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let path = dir.join("marker.csv");
    let marker = read_rows(&path, &MARKER_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let t = parse_num(&path, i + 2, "t", &rec[0])?;
            match rec[3].trim() {
                "1" | "true" => Ok(MarkerObservation::detected(
                    t,
                    parse_num(&path, i + 2, "u", &rec[1])?,
                    parse_num(&path, i + 2, "v", &rec[2])?,
                )),
                "0" | "false" => Ok(MarkerObservation::missed(t)),
                other => Err(Error::Input(format!(
                    "{}:{}: field detected: expected 0 or 1, found {other:?}",
                    path.display(),
                    i + 2
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunLog {
        meta: meta.meta,
        imu,
        gps,
        marker,
        marker_position: meta.marker_position,
    })
}

/// Lists trial directories (those containing `meta.json`) under `root`, sorted by name.
pub fn list_trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if p.is_dir() && p.join("meta.json").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_trials(root: &Path) -> Result<Vec<RunLog>> {
    list_trial_dirs(root)?
        .iter()
        .map(|d| read_runlog(d))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, windows: &[ScoredWindow]) -> Result<()> {
    write_jsonl(path, windows)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ScoredWindow>> {
    read_jsonl(path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DataFrame, Terrain, N_CHANNELS, WINDOW_LEN};
    use proptest::prelude::*;

    fn sample_log(vals: &[f64]) -> RunLog {
        RunLog {
            meta: TrialMeta {
                terrain: Terrain::DirtRocks,
                commanded_speed: 1.5,
                trial_id: "t0007".into(),
                seed: 42,
            },
            imu: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| ImuSample {
                    t: i as f64 * 0.005,
                    gyro: [v, -v, v * 1e-9],
                    accel: [v / 3.0, 9.81 + v, -v * 1e17],
                })
                .collect(),
            gps: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| GpsFix {
                    t: i as f64 * 0.1,
                    x: v,
                    y: 0.1 + v,
                })
                .collect(),
            marker: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i % 3 == 2 {
                        MarkerObservation::missed(i as f64 / 60.0)
                    } else {
                        MarkerObservation::detected(i as f64 / 60.0, 320.0 + v, 240.0 - v)
                    }
                })
                .collect(),
            marker_position: [30.0, 0.0],
        }
    }

    proptest! {
        #[test]
        fn runlog_roundtrip_is_bit_exact(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let dir = tempfile::tempdir().unwrap();
            let log = sample_log(&vals);
            write_runlog(&log, dir.path()).unwrap();
            let back = read_runlog(dir.path()).unwrap();
            prop_assert_eq!(back, log);
        }

        #[test]
        fn dataset_roundtrip_is_bit_exact(scale in -1e3f64..1e3, c3 in 0.0f64..500.0) {
            let dir = tempfile::tempdir().unwrap();
            let channels: Vec<f64> = (0..N_CHANNELS * WINDOW_LEN)
                .map(|i| (i as f64 * 0.37).sin() * scale)
                .collect();
            let w = ScoredWindow {
                window_id: "t0001/3".into(),
                frame: DataFrame::new(1.0, 1.995, channels).unwrap(),
                c3_raw: c3,
                gt: c3 / 500.0,
                meta: TrialMeta {
                    terrain: Terrain::Grass,
                    commanded_speed: 0.5,
                    trial_id: "t0001".into(),
                    seed: u64::MAX,
                },
            };
            let path = dir.path().join("dataset.jsonl");
            write_dataset(&path, std::slice::from_ref(&w)).unwrap();
            let back = read_dataset(&path).unwrap();
            prop_assert_eq!(back, vec![w]);
        }
    }

    #[test]
    fn csv_uses_lf_and_empty_fields_for_missed_frames() {
        let dir = tempfile::tempdir().unwrap();
        write_runlog(&sample_log(&[1.0, 2.0, 3.0]), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("marker.csv")).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next(), Some("t,u,v,detected"));
        assert!(text.lines().nth(3).unwrap().ends_with(",,,0"));
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_runlog(&sample_log(&[1.0]), dir.path()).unwrap();
        fs::write(dir.path().join("gps.csv"), "t,lat,lon\n0,1,2\n").unwrap();
        let err = read_runlog(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected header"));
    }

    #[test]
    fn missing_dir_reports_path() {
        let err = read_runlog(Path::new("/nonexistent/trial")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trial/meta.json"));
    }
}
