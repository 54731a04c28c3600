//! Command-line driver: simulate, score, build-dataset, train, eval, report.
//!
//! Every stage writes `provenance.json` next to its outputs, listing the
//! SHA-256 of each file it wrote plus the hash of the upstream provenance it
//! consumed. Downstream stages re-hash upstream files before using them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::c3score::{write_scores_csv, C3Config};
use crate::error::{Error, Result};
use crate::evalreport::{evaluate, render_report, DEFAULT_BINS, DEFAULT_RANGE};
use crate::io::{list_trial_dirs, read_dataset, read_json, read_runlog, write_json};
use crate::model::{
    predict, read_predictions, train, write_predictions, ArchitectureSpec, ModelCheckpoint,
    TrainConfig,
};
use crate::pipeline::{
    build_dataset, test_file_name, write_bundle, DatasetManifest, PipelineConfig, SplitRole,
    SplitSpec,
};
use crate::provenance::{hash_file, hash_json};
use crate::simgen::{
    default_campaign, default_terrains, generate_campaign, validate_terrains, write_campaign,
    CampaignEntry, SimConfig, TerrainProfile,
};
use crate::types::Terrain;

pub const CONFIG_ENV: &str = "C3STAB_CONFIG";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_bins: usize,
    pub range: [f64; 2],
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_BINS,
            range: [DEFAULT_RANGE.0, DEFAULT_RANGE.1],
        }
    }
}

/// Default locations used when a stage is run without path flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub trials: PathBuf,
    pub scores: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let r = Path::new("runs");
        Self {
            trials: r.join("trials"),
            scores: r.join("scores"),
            dataset: r.join("dataset"),
            model: r.join("model"),
            predictions: r.join("eval"),
            report: r.join("report"),
        }
    }
}

/// Everything a run needs, loaded from one JSON file. Missing sections take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub terrains: Vec<TerrainProfile>,
    pub campaign: Vec<CampaignEntry>,
    pub c3: C3Config,
    pub split: SplitSpec,
    pub pipeline: PipelineConfig,
    pub arch: ArchitectureSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            terrains: default_terrains(),
            campaign: default_campaign(),
            c3: C3Config::default(),
            split: SplitSpec::default(),
            pipeline: PipelineConfig::default(),
            arch: ArchitectureSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        validate_terrains(&self.terrains)?;
        if self.campaign.is_empty() {
            return Err(Error::Config("campaign matrix is empty".into()));
        }
        for e in &self.campaign {
            if !self.terrains.iter().any(|t| t.name == e.terrain) {
                return Err(Error::Config(format!(
                    "campaign uses terrain {} with no profile",
                    e.terrain
                )));
            }
        }
        self.c3.validate()?;
        self.split.validate()?;
        self.arch.validate()?;
        self.train.validate(&self.arch)?;
        let [lo, hi] = self.eval.range;
        if self.eval.n_bins == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(
                "eval needs at least one bin over a finite range".into(),
            ));
        }
        Ok(())
    }

    fn sim_hash(&self) -> String {
        hash_json(&(&self.sim, &self.terrains, &self.campaign))
    }

    fn dataset_hash(&self) -> String {
        hash_json(&(&self.c3, &self.split, &self.pipeline))
    }

    fn train_hash(&self) -> String {
        hash_json(&(&self.arch, &self.train))
    }
}

/// Provenance block written by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Upstream name to the hash of its provenance file (or of the file itself).
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the stage directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(stage: &str, config_hash: String) -> Self {
        Self {
            stage: stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn seed(mut self, name: &str, v: u64) -> Self {
        self.seeds.insert(name.into(), v);
        self
    }

    /// Hashes `files` (relative to `dir`) and writes the block there.
    fn write(mut self, dir: &Path, files: &[PathBuf]) -> Result<()> {
        for f in files {
            self.outputs.insert(rel_key(f), hash_file(&dir.join(f))?);
        }
        write_json(&dir.join(PROVENANCE_FILE), &self)
    }
}

fn rel_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Checks every file listed in `dir`'s provenance against its recorded hash.
/// Returns the hash of the provenance file, or `None` when there is none.
pub fn verify_stage(dir: &Path, expected_stage: &str) -> Result<Option<String>> {
    let path = dir.join(PROVENANCE_FILE);
    if !path.exists() {
        log::warn!(
            "{} has no {PROVENANCE_FILE}; upstream outputs are unverified",
            dir.display()
        );
        return Ok(None);
    }
    let prov: Provenance = read_json(&path)?;
    if prov.stage != expected_stage {
        return Err(Error::Provenance(format!(
            "{} was written by stage {:?}, expected {expected_stage:?}",
            path.display(),
            prov.stage
        )));
    }
    for (rel, want) in &prov.outputs {
        let file = dir.join(rel);
        let got = hash_file(&file).map_err(|_| {
            Error::Provenance(format!(
                "{} is listed in {} but missing",
                file.display(),
                path.display()
            ))
        })?;
        if &got != want {
            return Err(Error::Provenance(format!(
                "{} changed since {} was written",
                file.display(),
                path.display()
            )));
        }
    }
    hash_file(&path).map(Some)
}

/// Verifies that `file` matches the provenance in its parent directory.
fn verify_file(file: &Path, expected_stage: &str) -> Result<String> {
    let dir = file.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    let name = file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let own = hash_file(file)?;
    let prov_path = dir.join(PROVENANCE_FILE);
    if prov_path.exists() {
        let prov: Provenance = read_json(&prov_path)?;
        match prov.outputs.get(&name) {
            Some(want) if *want == own && prov.stage == expected_stage => {}
            Some(_) if prov.stage != expected_stage => {
                return Err(Error::Provenance(format!(
                    "{} was written by stage {:?}, expected {expected_stage:?}",
                    prov_path.display(),
                    prov.stage
                )))
            }
            Some(_) => {
                return Err(Error::Provenance(format!(
                    "{} changed since {} was written",
                    file.display(),
                    prov_path.display()
                )))
            }
            None => log::warn!(
                "{} is not listed in {}",
                file.display(),
                prov_path.display()
            ),
        }
    } else {
        log::warn!(
            "{} has no {PROVENANCE_FILE} beside it; unverified",
            file.display()
        );
    }
    Ok(own)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Parser)]
#[command(
    name = "c3stab",
    version,
    about = "Vision-supervised stability scoring and IMU regression"
)]
pub struct Cli {
    /// Run configuration JSON; built-in defaults when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trial campaign.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Campaign seed, overriding sim.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score every window of every trial and write scores.csv per trial.
    Score {
        #[arg(long)]
        trials: Option<PathBuf>,
        /// C3Config JSON, overriding the c3 section.
        #[arg(long)]
        c3_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window, score, prune, balance and split trials into a dataset.
    BuildDataset {
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Terrain kept out of training, or "none".
        #[arg(long)]
        holdout_terrain: Option<String>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the regressor on a dataset directory.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict a test file with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test JSONL; defaults to the held-out file in the dataset directory.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate predictions into report.json, errors.csv and SVG figures.
    Report {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fully resolved run configuration.
    ShowConfig,
}

pub fn resolve_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Runs one command. `Error::is_domain` decides the exit code.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { out, seed } => {
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            cfg.validate()?;
            simulate(&cfg, &out.unwrap_or_else(|| cfg.paths.trials.clone()))
        }
        Command::Score {
            trials,
            c3_config,
            out,
        } => {
            if let Some(p) = c3_config {
                cfg.c3 = read_json(&p).map_err(|e| Error::Config(e.to_string()))?;
            }
            cfg.validate()?;
            let trials = trials.unwrap_or_else(|| cfg.paths.trials.clone());
            score(
                &cfg,
                &trials,
                &out.unwrap_or_else(|| cfg.paths.scores.clone()),
            )
        }
        Command::BuildDataset {
            trials,
            holdout_terrain,
            split_seed,
            out,
        } => {
            if let Some(t) = holdout_terrain {
                cfg.pipeline.holdout_terrain = match t.as_str() {
                    "none" => None,
                    name => Some(
                        name.parse::<Terrain>()
                            .map_err(|e| Error::Config(e.to_string()))?,
                    ),
                };
            }
            if let Some(s) = split_seed {
                cfg.split.split_seed = s;
            }
            cfg.validate()?;
            let trials = trials.unwrap_or_else(|| cfg.paths.trials.clone());
            dataset(
                &cfg,
                &trials,
                &out.unwrap_or_else(|| cfg.paths.dataset.clone()),
            )
        }
        Command::Train {
            dataset,
            out,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            train_stage(
                &cfg,
                &dataset,
                &out.unwrap_or_else(|| cfg.paths.model.clone()),
            )
        }
        Command::Eval {
            checkpoint,
            test,
            out,
        } => {
            cfg.validate()?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.model.join(CHECKPOINT_FILE));
            let test = match test {
                Some(t) => t,
                None => {
                    let t = cfg.pipeline.holdout_terrain.ok_or_else(|| {
                        Error::Config("no holdout terrain configured; pass --test".into())
                    })?;
                    cfg.paths.dataset.join(test_file_name(t))
                }
            };
            eval(
                &checkpoint,
                &test,
                &out.unwrap_or_else(|| cfg.paths.predictions.clone()),
            )
        }
        Command::Report { predictions, out } => {
            cfg.validate()?;
            let predictions =
                predictions.unwrap_or_else(|| cfg.paths.predictions.join(PREDICTIONS_FILE));
            report(
                &cfg,
                &predictions,
                &out.unwrap_or_else(|| cfg.paths.report.clone()),
            )
        }
        Command::ShowConfig => {
            cfg.validate()?;
            let text = serde_json::to_string_pretty(&cfg).expect("config always serializes");
            println!("{text}");
            Ok(())
        }
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let logs = generate_campaign(&cfg.campaign, &cfg.terrains, &cfg.sim)?;
    let dirs = write_campaign(&logs, out)?;
    write_json(&out.join("run_config.json"), cfg)?;

    let mut files = vec![PathBuf::from("run_config.json")];
    for d in &dirs {
        let name = PathBuf::from(d.file_name().expect("trial dirs have names"));
        for f in ["meta.json", "imu.csv", "gps.csv", "marker.csv"] {
            files.push(name.join(f));
        }
    }
    Provenance::new("simulate", cfg.sim_hash())
        .seed("campaign", cfg.sim.seed)
        .write(out, &files)?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in &logs {
        *counts.entry(l.meta.class_key()).or_default() += 1;
    }
    println!("wrote {} trials to {}", logs.len(), out.display());
    for (class, n) in counts {
        println!("  {class:<16} {n}");
    }
    Ok(())
}

pub fn score(cfg: &RunConfig, trials: &Path, out: &Path) -> Result<()> {
    let upstream = verify_stage(trials, "simulate")?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    let mut n_windows = 0;
    for dir in list_trial_dirs(trials)? {
        let log = read_runlog(&dir)?;
        let (_, scores) = crate::pipeline::window_trial(&log, &cfg.c3)
            .map_err(|e| e.in_trial(&log.meta.trial_id))?;
        let name = PathBuf::from(dir.file_name().expect("trial dirs have names"));
        ensure_dir(&out.join(&name))?;
        let rel = name.join("scores.csv");
        write_scores_csv(&out.join(&rel), &scores)?;
        n_windows += scores.len();
        files.push(rel);
    }
    let mut prov = Provenance::new("score", hash_json(&cfg.c3));
    prov.inputs.insert(
        "trials".into(),
        upstream.unwrap_or_else(|| "unverified".into()),
    );
    prov.write(out, &files)?;
    println!(
        "scored {n_windows} windows from {} trials into {}",
        files.len(),
        out.display()
    );
    Ok(())
}

pub fn dataset(cfg: &RunConfig, trials: &Path, out: &Path) -> Result<()> {
    let upstream = verify_stage(trials, "simulate")?;
    ensure_dir(out)?;
    let logs = list_trial_dirs(trials)?
        .iter()
        .map(|d| read_runlog(d))
        .collect::<Result<Vec<_>>>()?;
    let bundle = build_dataset(&logs, &cfg.c3, &cfg.split, &cfg.pipeline)?;
    write_bundle(&bundle, out)?;
    write_json(&out.join("run_config.json"), cfg)?;

    let mut files: Vec<PathBuf> = [
        "dataset.jsonl",
        "manifest.json",
        "pruned.csv",
        "run_config.json",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    if let Some(t) = cfg.pipeline.holdout_terrain {
        files.push(PathBuf::from(test_file_name(t)));
    }
    let mut prov = Provenance::new("build-dataset", cfg.dataset_hash())
        .seed("balance", cfg.pipeline.balance_seed)
        .seed("split", cfg.split.split_seed);
    prov.inputs.insert(
        "trials".into(),
        upstream.unwrap_or_else(|| "unverified".into()),
    );
    prov.write(out, &files)?;

    let m = &bundle.manifest;
    println!(
        "dataset: {} train, {} validation, {} test windows ({} pruned), c3_max {}",
        m.n_train, m.n_validation, m.n_test, m.n_pruned, m.c3_max
    );
    for (class, n) in &m.class_counts {
        println!("  {class:<16} {n}");
    }
    Ok(())
}

pub fn train_stage(cfg: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<()> {
    let upstream = verify_stage(dataset_dir, "build-dataset")?;
    let manifest: DatasetManifest = read_json(&dataset_dir.join("manifest.json"))?;
    let windows = read_dataset(&dataset_dir.join("dataset.jsonl"))?;
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for w in &windows {
        match manifest.split.get(&w.window_id) {
            Some(SplitRole::Train) => tr.push(w),
            Some(SplitRole::Validation) => va.push(w),
            None => {
                return Err(Error::Input(format!(
                    "window {} is not assigned to a split in the manifest",
                    w.window_id
                )))
            }
        }
    }
    if tr.len() != manifest.n_train || va.len() != manifest.n_validation {
        return Err(Error::Input(format!(
            "manifest lists {} train / {} validation windows, dataset has {} / {}",
            manifest.n_train,
            manifest.n_validation,
            tr.len(),
            va.len()
        )));
    }
    ensure_dir(out)?;
    let mut ckpt = train(&tr, &va, &cfg.arch, &cfg.train)?;
    let dataset_ref = upstream.unwrap_or_else(|| "unverified".into());
    ckpt.provenance
        .insert("dataset".into(), dataset_ref.clone());
    ckpt.provenance
        .insert("config_hash".into(), cfg.train_hash());
    ckpt.provenance
        .insert("c3_max".into(), format!("{}", manifest.c3_max));
    ckpt.save(&out.join(CHECKPOINT_FILE))?;

    let curve_path = out.join("curve.csv");
    let mut curve = String::from("epoch,train_mse,val_mse\n");
    for r in &ckpt.curve {
        curve.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    fs::write(&curve_path, curve).map_err(|e| Error::io(&curve_path, e))?;

    let mut prov = Provenance::new("train", cfg.train_hash())
        .seed("init", cfg.train.init_seed)
        .seed("shuffle", cfg.train.shuffle_seed)
        .seed("dropout", cfg.train.dropout_seed);
    prov.inputs.insert("dataset".into(), dataset_ref);
    prov.write(
        out,
        &[PathBuf::from(CHECKPOINT_FILE), PathBuf::from("curve.csv")],
    )?;

    let first = ckpt.curve.first().expect("curve has the epoch-0 record");
    let last = ckpt.curve.last().expect("curve has the epoch-0 record");
    println!(
        "trained {} epochs on {} windows: train mse {:.5} -> {:.5}, val mse {:.5} -> {:.5}",
        cfg.train.epochs,
        tr.len(),
        first.train_mse,
        last.train_mse,
        first.val_mse,
        last.val_mse
    );
    Ok(())
}

pub fn eval(checkpoint: &Path, test: &Path, out: &Path) -> Result<()> {
    let ckpt_hash = verify_file(checkpoint, "train")?;
    let test_hash = verify_file(test, "build-dataset")?;
    let ckpt = ModelCheckpoint::load(checkpoint)?;
    let windows = read_dataset(test)?;
    if windows.is_empty() {
        return Err(Error::Input(format!("{} holds no windows", test.display())));
    }
    let preds = predict(&ckpt, &windows)?;
    ensure_dir(out)?;
    write_predictions(&out.join(PREDICTIONS_FILE), &preds)?;
    let mut prov = Provenance::new("eval", ckpt_hash.clone());
    prov.inputs.insert("checkpoint".into(), ckpt_hash);
    prov.inputs.insert("test".into(), test_hash);
    prov.write(out, &[PathBuf::from(PREDICTIONS_FILE)])?;
    let mse = preds.iter().map(|p| (p.pred - p.gt).powi(2)).sum::<f64>() / preds.len() as f64;
    println!("predicted {} windows, mse {mse:.6}", preds.len());
    Ok(())
}

pub fn report(cfg: &RunConfig, predictions: &Path, out: &Path) -> Result<()> {
    let pred_hash = verify_file(predictions, "eval")?;
    let preds = read_predictions(predictions)?;
    let mut rep = evaluate(
        &preds,
        cfg.eval.n_bins,
        (cfg.eval.range[0], cfg.eval.range[1]),
    )?;
    rep.provenance
        .insert("predictions".into(), pred_hash.clone());
    rep.provenance
        .insert("config_hash".into(), hash_json(&cfg.eval));
    let files = render_report(&rep, &preds, out)?;
    let rel: Vec<PathBuf> = files
        .iter()
        .map(|f| PathBuf::from(f.file_name().expect("report files have names")))
        .collect();
    let mut prov = Provenance::new("report", hash_json(&cfg.eval));
    prov.inputs.insert("predictions".into(), pred_hash);
    prov.write(out, &rel)?;
    println!(
        "report: n {}, mse {:.6}, bias {:+.6}",
        rep.n, rep.mse, rep.bias
    );
    for (class, s) in &rep.per_class {
        println!(
            "  {class:<16} n {:>4}  mse {:.6}  bias {:+.6}",
            s.n, s.mse, s.bias
        );
    }
    Ok(())
}
