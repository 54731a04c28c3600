//! Held-out evaluation: MSE, signed-error histogram, per-class breakdown and
//! the figure files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::model::Prediction;
use crate::types::speed_label;

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);

pub const ERRORS_HEADER: [&str; 6] = [
    "window_id",
    "terrain",
    "commanded_speed",
    "gt",
    "pred",
    "error",
];

// Sums in sorted order so aggregates do not depend on input order.
fn ordered_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_pairs(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} ground-truth values",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("no predictions to evaluate".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pairs(preds, gts)?;
    Ok(ordered_mean(
        preds
            .iter()
            .zip(gts)
            .map(|(p, g)| (p - g) * (p - g))
            .collect(),
    ))
}

/// Signed errors (`pred - gt`) binned over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Errors outside the range, folded into the edge bins.
    pub n_clamped: u64,
    pub bias: f64,
}

impl ErrorHistogram {
    pub fn bin_of(&self, e: f64) -> usize {
        let n = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        let pos = ((e - lo) / (hi - lo) * n as f64).floor();
        pos.clamp(0.0, (n - 1) as f64) as usize
    }
}

pub fn error_histogram(
    preds: &[f64],
    gts: &[f64],
    n_bins: usize,
    range: (f64, f64),
) -> Result<ErrorHistogram> {
    check_pairs(preds, gts)?;
    let (lo, hi) = range;
    if n_bins == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "histogram needs at least one bin over a finite range, got {n_bins} bins over [{lo}, {hi}]"
        )));
    }
    let edges = (0..=n_bins)
        .map(|i| lo + (hi - lo) * i as f64 / n_bins as f64)
        .collect();
    let mut h = ErrorHistogram {
        edges,
        counts: vec![0; n_bins],
        n_clamped: 0,
        bias: 0.0,
    };
    let errors: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| p - g).collect();
    for &e in &errors {
        if !(lo..=hi).contains(&e) {
            h.n_clamped += 1;
        }
        let b = h.bin_of(e);
        h.counts[b] += 1;
    }
    h.bias = ordered_mean(errors);
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub mse: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mse: f64,
    pub bias: f64,
    /// Keyed by `<terrain>_<speed>`.
    pub per_class: BTreeMap<String, ClassStats>,
    pub histogram: ErrorHistogram,
    pub provenance: BTreeMap<String, String>,
}

fn class_key(p: &Prediction) -> String {
    format!("{}_{}", p.terrain, speed_label(p.commanded_speed))
}

pub fn evaluate(preds: &[Prediction], n_bins: usize, range: (f64, f64)) -> Result<EvalReport> {
    let p: Vec<f64> = preds.iter().map(|x| x.pred).collect();
    let g: Vec<f64> = preds.iter().map(|x| x.gt).collect();
    let histogram = error_histogram(&p, &g, n_bins, range)?;
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for x in preds {
        let e = groups.entry(class_key(x)).or_default();
        e.0.push(x.pred);
        e.1.push(x.gt);
    }
    let per_class = groups
        .into_iter()
        .map(|(k, (p, g))| {
            let bias = ordered_mean(p.iter().zip(&g).map(|(a, b)| a - b).collect());
            Ok((
                k,
                ClassStats {
                    n: p.len(),
                    mse: mse(&p, &g)?,
                    bias,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        n: preds.len(),
        mse: mse(&p, &g)?,
        bias: histogram.bias,
        per_class,
        histogram,
        provenance: BTreeMap::new(),
    })
}

fn write_errors_csv(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(ERRORS_HEADER)
        .map_err(|e| Error::csv(path, e))?;
    for p in preds {
        w.write_record([
            p.window_id.clone(),
            p.terrain.to_string(),
            speed_label(p.commanded_speed),
            format!("{}", p.gt),
            format!("{}", p.pred),
            format!("{}", p.pred - p.gt),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN} {} V{} H{}" stroke="black" fill="none"/>"#,
        MARGIN - 16.0,
        H - MARGIN,
        W - MARGIN / 2.0
    );
    s
}

/// Signed-error histogram as a bar chart.
pub fn histogram_svg(h: &ErrorHistogram) -> String {
    let mut s = svg_open("Prediction error (pred - gt)");
    let n = h.counts.len();
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = W - 1.5 * MARGIN;
    let plot_h = H - 2.0 * MARGIN + 16.0;
    let bw = plot_w / n as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bh = plot_h * c as f64 / top;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4878a8"/>"##,
            MARGIN + i as f64 * bw,
            H - MARGIN - bh,
            bw,
            bh
        );
    }
    let (lo, hi) = (h.edges[0], h.edges[n]);
    for (x, label) in [
        (MARGIN, lo),
        (MARGIN + plot_w / 2.0, (lo + hi) / 2.0),
        (MARGIN + plot_w, hi),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            H - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" text-anchor="end">{}</text>"#,
        MARGIN - 16.0,
        top
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">bias {:.6}</text>"#,
        W - MARGIN / 2.0,
        MARGIN,
        h.bias
    );
    s.push_str("</svg>\n");
    s
}

/// Prediction and ground truth against window index.
pub fn trace_svg(preds: &[Prediction]) -> String {
    let mut s = svg_open("Predicted vs ground-truth stability");
    let plot_w = W - 1.5 * MARGIN;
    let plot_h = H - 2.0 * MARGIN + 16.0;
    let n = preds.len();
    let x = |i: usize| {
        MARGIN
            + if n > 1 {
                plot_w * i as f64 / (n - 1) as f64
            } else {
                0.0
            }
    };
    let y = |v: f64| H - MARGIN - plot_h * v.clamp(0.0, 1.0);
    for (name, color, get) in [
        (
            "ground truth",
            "#222222",
            (|p: &Prediction| p.gt) as fn(&Prediction) -> f64,
        ),
        ("prediction", "#d0602a", |p: &Prediction| p.pred),
    ] {
        let pts: Vec<String> = preds
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(get(p))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1"><title>{name}</title></polyline>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">0</text>"#,
        MARGIN - 4.0,
        H - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">1</text>"#,
        MARGIN - 4.0,
        y(1.0) + 4.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#222222">ground truth</text>"##,
        W - 2.5 * MARGIN,
        MARGIN
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#d0602a">prediction</text>"##,
        W - 2.5 * MARGIN,
        MARGIN + 14.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `errors.csv`, `histogram.svg` and `trace.svg`.
pub fn render_report(
    report: &EvalReport,
    preds: &[Prediction],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if preds.is_empty() {
        return Err(Error::Input(
            "refusing to render a report with no predictions".into(),
        ));
    }
    if preds.len() != report.n {
        return Err(Error::Input(format!(
            "report covers {} windows but {} predictions were given",
            report.n,
            preds.len()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let paths: Vec<PathBuf> = ["report.json", "errors.csv", "histogram.svg", "trace.svg"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    write_json(&paths[0], report)?;
    write_errors_csv(&paths[1], preds)?;
    fs::write(&paths[2], histogram_svg(&report.histogram)).map_err(|e| Error::io(&paths[2], e))?;
    fs::write(&paths[3], trace_svg(preds)).map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Terrain;
    use proptest::prelude::*;

    fn pred(i: usize, speed: f64, gt: f64, p: f64) -> Prediction {
        Prediction {
            window_id: format!("t{i}/0"),
            terrain: Terrain::Grass,
            commanded_speed: speed,
            gt,
            pred: p,
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let gts = [0.1, 0.5, 0.25, 0.7];
        let preds: Vec<f64> = gts.iter().map(|g| g + 0.1).collect();
        assert!((mse(&preds, &gts).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(mse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(mse(&[], &[]), Err(Error::Input(_))));
        assert!(matches!(mse(&[0.1], &[0.1, 0.2]), Err(Error::Input(_))));
    }

    #[test]
    fn histogram_examples() {
        let h = error_histogram(&[0.3; 7], &[0.3; 7], DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        assert_eq!(h.counts[25], 7);
        assert!(h.edges[25] <= 0.0 && 0.0 < h.edges[26]);
        assert_eq!(h.bias, 0.0);

        let gts = [0.0, 0.2, 0.5];
        let preds: Vec<f64> = gts.iter().map(|g| g + 0.1).collect();
        let h = error_histogram(&preds, &gts, DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!((h.bias - 0.1).abs() < 1e-15);

        let h = error_histogram(&[1.0, 0.0], &[0.0, 1.0], 4, DEFAULT_RANGE).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
        assert_eq!(h.n_clamped, 0);
        assert!(error_histogram(&[0.1], &[0.1], 0, DEFAULT_RANGE).is_err());
    }

    proptest! {
        #[test]
        fn histogram_counts_and_bias(
            pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..200),
            rot in 0usize..200,
        ) {
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let h = error_histogram(&p, &g, DEFAULT_BINS, DEFAULT_RANGE).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), p.len() as u64);
            let naive = p.iter().zip(&g).map(|(a, b)| a - b).sum::<f64>() / p.len() as f64;
            prop_assert!((h.bias - naive).abs() < 1e-12);

            let mut shuffled = pairs.clone();
            shuffled.rotate_left(rot % pairs.len());
            shuffled.reverse();
            let (p2, g2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            prop_assert_eq!(&error_histogram(&p2, &g2, DEFAULT_BINS, DEFAULT_RANGE).unwrap(), &h);
            prop_assert_eq!(mse(&p2, &g2).unwrap(), mse(&p, &g).unwrap());
        }
    }

    #[test]
    fn per_class_breakdown() {
        let preds = vec![
            pred(0, 0.5, 0.0, 0.1),
            pred(1, 0.5, 0.0, 0.3),
            pred(2, 1.5, 0.5, 0.5),
        ];
        let r = evaluate(&preds, DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        assert_eq!(r.n, 3);
        let slow = &r.per_class["grass_0.5"];
        assert_eq!(slow.n, 2);
        assert!((slow.mse - 0.05).abs() < 1e-15);
        assert!((slow.bias - 0.2).abs() < 1e-15);
        assert_eq!(r.per_class["grass_1.5"].mse, 0.0);
        assert!((r.mse - 0.1 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_report_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let r = evaluate(&[pred(0, 1.0, 0.1, 0.2)], DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        let err = render_report(&r, &[], dir.path()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(evaluate(&[], DEFAULT_BINS, DEFAULT_RANGE).is_err());
    }

    #[test]
    fn svgs_are_self_contained() {
        let preds = vec![pred(0, 1.0, 0.1, 0.2), pred(1, 1.0, 0.4, 0.3)];
        let r = evaluate(&preds, DEFAULT_BINS, DEFAULT_RANGE).unwrap();
        for svg in [histogram_svg(&r.histogram), trace_svg(&preds)] {
            assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
            assert!(svg.ends_with("</svg>\n"));
            assert!(!svg.contains("href"));
        }
    }
}
