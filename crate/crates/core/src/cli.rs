//! Run configuration, checkpoint files and the `train`, `finetune`,
//! `certify` and `study` commands.
//!
//! A run lives in `<out>/<name>/` with `config.toml`, `checkpoints/`,
//! `logs/` and `reports/`. `<out>` is `--out`, else `$TIMESIEVE_OUT`, else
//! `runs`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, CsvOptions, Splits, SynthKind, SynthParams};
use crate::diffcore::{ParamVector, Segment};
use crate::error::{Error, Result};
use crate::eval::{self, NoiseComparison, SeedComparison, SeedStudyResult, StudyReport};
use crate::faithful::{self, DistanceKind, FaithfulConfig, FaithfulnessReport};
use crate::ifcb::IfcbConfig;
use crate::model::{self, ModelConfig};
use crate::train::{self, TrainConfig, TrainLog};

pub const OUT_ENV: &str = "TIMESIEVE_OUT";
pub const DEFAULT_OUT: &str = "runs";
pub const CHECKPOINT_FORMAT: &str = "timesieve-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size defaults: 288/144 windows on a CSV dataset.
    Paper,
    /// Small synthetic setup that runs in minutes on a laptop.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SynthKind,
    pub rows: usize,
    pub seed: u64,
    pub params: SynthParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Train, validation and test fractions of the rows, in time order.
    pub split: [f64; 3],
    pub csv: CsvOptions,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seeds: Vec<u64>,
    pub base_seed: u64,
    pub noise_sigma: f64,
    pub noise_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub profile: Profile,
    /// Seed of `train` and `finetune`; studies use `study.seeds`.
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub faithful: FaithfulConfig,
    pub study: StudyConfig,
}

/// Short names accepted in config files and `--set`.
const KEY_ALIASES: [(&str, &str); 3] = [("R", "radius"), ("gamma", "pgd_step"), ("P", "pgd_iters")];

impl RunConfig {
    pub fn profile(profile: Profile) -> RunConfig {
        let study = StudyConfig {
            seeds: vec![2021, 2022, 2023, 2024, 2025],
            base_seed: 2021,
            noise_sigma: 0.1,
            noise_seeds: vec![1, 2, 3, 4, 5],
        };
        let synthetic = SyntheticConfig {
            kind: SynthKind::TrendSeasonalNoise,
            rows: 4000,
            seed: 7,
            params: SynthParams::default(),
        };
        match profile {
            Profile::Paper => RunConfig {
                name: "paper".into(),
                profile,
                seed: 2021,
                model: ModelConfig::default(),
                data: DataConfig {
                    source: DataSource::Csv,
                    path: None,
                    split: [0.7, 0.1, 0.2],
                    csv: CsvOptions::default(),
                    synthetic,
                },
                train: TrainConfig::default(),
                finetune: TrainConfig::default(),
                faithful: FaithfulConfig::default(),
                study,
            },
            Profile::Desk => RunConfig {
                name: "desk".into(),
                profile,
                seed: 2021,
                model: ModelConfig {
                    lookback: 48,
                    horizon: 12,
                    channels: 1,
                    ifcb: IfcbConfig {
                        latent_dim: 8,
                        encoder_hidden: vec![32],
                        decoder_hidden: vec![32],
                        beta_ib: 1e-2,
                    },
                    ..ModelConfig::default()
                },
                data: DataConfig {
                    source: DataSource::Synthetic,
                    path: None,
                    split: [0.7, 0.1, 0.2],
                    csv: CsvOptions::default(),
                    synthetic: SyntheticConfig {
                        params: SynthParams {
                            noise_std: 0.02,
                            ..SynthParams::default()
                        },
                        rows: 1500,
                        ..synthetic
                    },
                },
                train: TrainConfig {
                    epochs: 5,
                    batch_size: 16,
                    learning_rate: 1e-3,
                    ..TrainConfig::default()
                },
                finetune: TrainConfig {
                    epochs: 10,
                    batch_size: 32,
                    learning_rate: 3e-4,
                    ..TrainConfig::default()
                },
                faithful: FaithfulConfig {
                    radius: 0.05,
                    pgd_step: 0.025,
                    lambda1: 0.0,
                    lambda3: 0.0,
                    d1: DistanceKind::Mse,
                    ..FaithfulConfig::default()
                },
                study,
            },
        }
    }

    /// Profile defaults, then the config file, then `key=value` overrides.
    /// Every validation problem is reported in one error.
    pub fn resolve(profile: Option<Profile>, file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let file_table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e))))?;
                normalize_keys(table)
            }
            None => toml::Table::new(),
        };
        let profile = match profile {
            Some(p) => p,
            None => match file_table.get("profile") {
                Some(v) => Profile::deserialize(v.clone())
                    .map_err(|e| Error::Config(format!("profile: {}", one_line(&e))))?,
                None => Profile::Paper,
            },
        };
        let mut table = toml::Table::try_from(RunConfig::profile(profile))
            .map_err(|e| Error::Contract(format!("cannot encode profile: {e}")))?;
        merge(&mut table, file_table);
        table.insert("profile".into(), toml::Value::try_from(profile).expect("profile encodes"));
        for set in sets {
            apply_override(&mut table, set)?;
        }
        let cfg = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::Config(one_line(&e)))?;
        cfg.checked()?;
        Ok(cfg)
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            errors.push(format!("name {:?} is not a valid directory name", self.name));
        }
        self.model.validate(errors);
        self.train.validate("train", errors);
        self.finetune.validate("finetune", errors);
        self.faithful.validate(errors);
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            errors.push("data.path is required when data.source = \"csv\"".into());
        }
        if self.data.split.iter().any(|f| !(*f > 0.0)) || (self.data.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errors.push(format!("data.split must be positive and sum to 1, got {:?}", self.data.split));
        }
        if self.data.source == DataSource::Synthetic && self.data.synthetic.rows == 0 {
            errors.push("data.synthetic.rows must be >= 1".into());
        }
        if self.study.seeds.is_empty() {
            errors.push("study.seeds must not be empty".into());
        } else if !self.study.seeds.contains(&self.study.base_seed) {
            errors.push(format!("study.base_seed {} is not in study.seeds", self.study.base_seed));
        }
        if !(self.study.noise_sigma >= 0.0) {
            errors.push(format!("study.noise_sigma must be >= 0, got {}", self.study.noise_sigma));
        }
        if self.study.noise_seeds.is_empty() {
            errors.push("study.noise_seeds must not be empty".into());
        }
    }

    pub fn checked(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        eval::to_toml(self)
    }
}

fn one_line(e: &impl std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn alias(key: &str) -> &str {
    KEY_ALIASES
        .iter()
        .find(|(short, _)| *short == key)
        .map_or(key, |(_, long)| long)
}

fn normalize_keys(table: toml::Table) -> toml::Table {
    table
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                toml::Value::Table(t) => toml::Value::Table(normalize_keys(t)),
                other => other,
            };
            (alias(&k).to_string(), v)
        })
        .collect()
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one dotted `key=value`; the value is read as TOML and falls back
/// to a bare string.
fn apply_override(table: &mut toml::Table, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {set:?}")))?;
    let path: Vec<&str> = key.trim().split('.').map(alias).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("--set has an empty key segment in {key:?}")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (leaf, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        cur = match cur.get_mut(*p) {
            Some(toml::Value::Table(t)) => t,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config section {:?} in --set {key}",
                    path[..=i].join(".")
                )))
            }
        };
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parameters plus everything needed to rebuild the run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `base` or `faithful`.
    pub kind: String,
    pub seed: u64,
    /// Effective run configuration as TOML.
    pub config: String,
    pub model: ModelConfig,
    pub segments: Vec<SegmentRecord>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, cfg: &RunConfig, params: &ParamVector<f64>) -> Result<Self> {
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            seed,
            config: cfg.to_toml()?,
            model: cfg.model.clone(),
            segments: params
                .segments()
                .iter()
                .map(|s| SegmentRecord {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    values: params.values()[s.range()].to_vec(),
                })
                .collect(),
        })
    }

    /// Parameters checked against the layout `model` expects.
    pub fn params_for(&self, model: &ModelConfig) -> Result<ParamVector<f64>> {
        let mut segments = Vec::with_capacity(self.segments.len());
        let mut values = Vec::new();
        for rec in &self.segments {
            let seg = Segment {
                name: rec.name.clone(),
                offset: values.len(),
                shape: rec.shape.clone(),
            };
            if rec.values.len() != seg.len() {
                return Err(Error::Checkpoint(format!(
                    "segment {} holds {} values for shape {:?}",
                    rec.name,
                    rec.values.len(),
                    rec.shape
                )));
            }
            values.extend_from_slice(&rec.values);
            segments.push(seg);
        }
        let loaded = ParamVector::from_parts(segments, values)?;
        let expected = ParamVector::<f64>::zeros(&model::param_layout(model))?;
        let bad = expected.layout_mismatches(loaded.segments());
        if !bad.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint does not fit the configured model: {}",
                bad.join(", ")
            )));
        }
        Ok(loaded)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &eval::to_toml(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = toml::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), one_line(&e))))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {:?} version {}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Training or fine-tuning log as written to `logs/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFile {
    pub kind: String,
    pub seed: u64,
    pub config: String,
    pub log: TrainLog,
}

/// Certification output as written to `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyFile {
    pub checkpoint_seed: u64,
    pub base_seed: u64,
    pub config: String,
    pub report: FaithfulnessReport,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `runs/<name>` and its fixed subdirectories.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out: Option<&Path>, name: &str) -> RunDir {
        let base = match out {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from),
        };
        RunDir { root: base.join(name) }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoint(&self, kind: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{kind}.toml"))
    }

    pub fn log(&self, kind: &str) -> PathBuf {
        self.root.join("logs").join(format!("{kind}.toml"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        for sub in ["checkpoints", "logs", "reports"] {
            let d = self.root.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        write_file(&self.config(), &cfg.to_toml()?)
    }
}

/// Windows of the configured dataset and an identifier for reports.
pub fn load_data(cfg: &RunConfig) -> Result<(Splits, String)> {
    let d = &cfg.data;
    let (table, id) = match d.source {
        DataSource::Csv => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path is required for csv data".into()))?;
            let table = data::load_csv(path, &d.csv)?;
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let id = format!("csv:{name}:{}", table.fingerprint());
            (table, id)
        }
        DataSource::Synthetic => {
            let s = &d.synthetic;
            let table = data::synth_series(s.kind, s.rows, cfg.model.channels, s.seed, &s.params)?;
            let id = format!(
                "synthetic:{:?}:{}x{}:seed{}:{}",
                s.kind,
                s.rows,
                cfg.model.channels,
                s.seed,
                table.fingerprint()
            );
            (table, id)
        }
    };
    if table.channels() != cfg.model.channels {
        return Err(Error::Config(format!(
            "dataset has {} channels but model.channels = {}",
            table.channels(),
            cfg.model.channels
        )));
    }
    let splits = data::make_windows(&table, cfg.model.lookback, cfg.model.horizon, d.split)?;
    Ok((splits, id))
}

/// Trains a base model with `cfg.seed`.
pub fn cmd_train(cfg: &RunConfig, dir: &RunDir) -> Result<PathBuf> {
    let (splits, _) = load_data(cfg)?;
    dir.write_config(cfg)?;
    let (params, log) = train::train::<f64>(&splits.train, Some(&splits.val), &cfg.model, &cfg.train, cfg.seed)?;
    let path = dir.checkpoint("base");
    Checkpoint::new("base", cfg.seed, cfg, &params)?.save(&path)?;
    write_log(dir, "train", cfg, log)?;
    Ok(path)
}

fn write_log(dir: &RunDir, kind: &str, cfg: &RunConfig, log: TrainLog) -> Result<()> {
    let file = LogFile {
        kind: kind.into(),
        seed: cfg.seed,
        config: cfg.to_toml()?,
        log,
    };
    write_file(&dir.log(kind), &eval::to_toml(&file)?)
}

/// Fine-tunes the checkpoint at `base` into a faithful model.
pub fn cmd_finetune(cfg: &RunConfig, dir: &RunDir, base: &Path) -> Result<PathBuf> {
    let base_params = Checkpoint::load(base)?.params_for(&cfg.model)?;
    let (splits, _) = load_data(cfg)?;
    dir.write_config(cfg)?;
    let (params, log) = faithful::finetune(
        &base_params,
        &splits.train,
        Some(&splits.val),
        &cfg.faithful,
        &cfg.model,
        &cfg.finetune,
        cfg.seed,
    )?;
    let path = dir.checkpoint("faithful");
    Checkpoint::new("faithful", cfg.seed, cfg, &params)?.save(&path)?;
    write_log(dir, "finetune", cfg, log)?;
    Ok(path)
}

/// Certifies `checkpoint` on the test split against `base`.
pub fn cmd_certify(cfg: &RunConfig, dir: &RunDir, checkpoint: &Path, base: &Path) -> Result<PathBuf> {
    let fine_ck = Checkpoint::load(checkpoint)?;
    let base_ck = Checkpoint::load(base)?;
    let fine = fine_ck.params_for(&cfg.model)?;
    let base_params = base_ck.params_for(&cfg.model)?;
    let (splits, id) = load_data(cfg)?;
    dir.write_config(cfg)?;
    let report = faithful::certify(
        &fine,
        &base_params,
        &splits.test,
        &cfg.faithful,
        &cfg.model,
        cfg.faithful.n_probes,
        cfg.seed,
        &id,
    )?;
    let file = CertifyFile {
        checkpoint_seed: fine_ck.seed,
        base_seed: base_ck.seed,
        config: cfg.to_toml()?,
        report,
    };
    let path = dir.reports().join("certify.toml");
    write_file(&path, &eval::to_toml(&file)?)?;
    write_file(&dir.reports().join("certify.txt"), &render_certify(&file.report))?;
    Ok(path)
}

fn render_certify(r: &FaithfulnessReport) -> String {
    let verdict = |ok: bool| if ok { "ok" } else { "violated" };
    format!(
        "dataset {}\nwindows {}  radius {}  probes {}  pgd {} x {}\n\
         D1 approx  {:.6e}  D1 detail {:.6e}  <= beta1 {}  {}\n\
         D2         {:.6e}  <= alpha1 {}  {}\n\
         D3         {:.6e}  <= alpha2 {}  {}\n{}\n",
        r.dataset_id,
        r.windows,
        r.radius,
        r.n_probes,
        r.pgd_iters,
        r.pgd_step,
        r.d1_approx,
        r.d1_detail,
        r.beta1,
        verdict(r.ib_similarity_ok),
        r.d2,
        r.alpha1,
        verdict(r.forecast_closeness_ok),
        r.d3,
        r.alpha2,
        verdict(r.forecast_stability_ok),
        r.note
    )
}

/// Base and fine-tuned parameters trained with one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub base: ParamVector<f64>,
    pub fine: ParamVector<f64>,
}

/// Base training followed by fine-tuning, once per `study.seeds` entry.
pub fn seed_runs(cfg: &RunConfig, splits: &Splits) -> Result<Vec<SeedRun>> {
    eval::parallel_by_seed(&cfg.study.seeds, |seed| {
        let (base, _) = train::train::<f64>(&splits.train, Some(&splits.val), &cfg.model, &cfg.train, seed)?;
        let (fine, _) = faithful::finetune(
            &base,
            &splits.train,
            Some(&splits.val),
            &cfg.faithful,
            &cfg.model,
            &cfg.finetune,
            seed,
        )?;
        Ok(SeedRun { seed, base, fine })
    })
}

pub fn seed_comparison(cfg: &RunConfig, splits: &Splits, runs: &[SeedRun]) -> Result<SeedComparison> {
    let mut ts = Vec::with_capacity(runs.len());
    let mut fts = Vec::with_capacity(runs.len());
    for r in runs {
        ts.push((r.seed, train::evaluate_mae(&r.base, &splits.test, &cfg.model, 0.0, 0)?));
        fts.push((r.seed, train::evaluate_mae(&r.fine, &splits.test, &cfg.model, 0.0, 0)?));
    }
    SeedComparison::new(
        &SeedStudyResult::from_maes(cfg.study.base_seed, &ts)?,
        &SeedStudyResult::from_maes(cfg.study.base_seed, &fts)?,
    )
}

pub fn noise_comparison(cfg: &RunConfig, splits: &Splits, runs: &[SeedRun]) -> Result<NoiseComparison> {
    let (sigma, seeds) = (cfg.study.noise_sigma, &cfg.study.noise_seeds);
    let mut ts = Vec::with_capacity(runs.len());
    let mut fts = Vec::with_capacity(runs.len());
    for r in runs {
        ts.push(eval::noise_study(&r.base, &splits.test, &cfg.model, sigma, seeds)?);
        fts.push(eval::noise_study(&r.fine, &splits.test, &cfg.model, sigma, seeds)?);
    }
    let training: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    NoiseComparison::new(&training, ts, fts)
}

/// Runs the `seeds` or `noise` study for both pipelines and writes
/// `reports/study-<kind>.{txt,toml}`.
pub fn cmd_study(cfg: &RunConfig, dir: &RunDir, kind: &str) -> Result<PathBuf> {
    if kind != "seeds" && kind != "noise" {
        return Err(Error::Usage(format!("unknown study kind {kind:?}; expected seeds or noise")));
    }
    if kind == "seeds" && cfg.study.seeds.len() < 2 {
        return Err(Error::Config("a seeds study needs at least two seeds".into()));
    }
    let (splits, _) = load_data(cfg)?;
    dir.write_config(cfg)?;
    let runs = seed_runs(cfg, &splits).map_err(|e| e.context(format!("{kind} study")))?;
    let mut report = StudyReport {
        config: cfg.to_toml()?,
        seeds: vec![],
        noise: vec![],
    };
    if kind == "seeds" {
        report.seeds.push(seed_comparison(cfg, &splits, &runs)?);
    } else {
        report.noise.push(noise_comparison(cfg, &splits, &runs)?);
    }
    let (_, structured) = eval::write_report(&dir.reports(), &format!("study-{kind}"), &report)?;
    Ok(structured)
}

#[derive(Debug, Parser)]
#[command(name = "timesieve", version, about = "Wavelet bottleneck forecaster with faithful fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration layered over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override such as faithful.radius=0.05; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output root; defaults to $TIMESIEVE_OUT, then ./runs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run seed for train, finetune and certify.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    pub profile: Option<Profile>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a base model.
    Train,
    /// Faithful fine-tuning of a base checkpoint.
    Finetune {
        /// Defaults to the run's checkpoints/base.toml.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Measure D1, D2 and D3 for a checkpoint against a base checkpoint.
    Certify {
        /// Defaults to the run's checkpoints/faithful.toml.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the run's checkpoints/base.toml.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Compare base and fine-tuned pipelines: `seeds` or `noise`.
    Study {
        /// `seeds` (inter-seed variation) or `noise` (test-input noise)
        kind: String,
    },
}

/// Parses `args` and runs the command; returns the primary file written.
/// `Ok(None)` means help or version text was printed.
pub fn run<I, T>(args: I) -> Result<Option<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(None);
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return Err(Error::Usage(first.to_string()));
        }
    };
    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::resolve(cli.profile, cli.config.as_deref(), &sets)?;
    let dir = RunDir::new(cli.out.as_deref(), &cfg.name);
    let path = match &cli.command {
        Command::Train => cmd_train(&cfg, &dir)?,
        Command::Finetune { base } => {
            let base = base.clone().unwrap_or_else(|| dir.checkpoint("base"));
            cmd_finetune(&cfg, &dir, &base)?
        }
        Command::Certify { checkpoint, base } => {
            let ck = checkpoint.clone().unwrap_or_else(|| dir.checkpoint("faithful"));
            let base = base.clone().unwrap_or_else(|| dir.checkpoint("base"));
            cmd_certify(&cfg, &dir, &ck, &base)?
        }
        Command::Study { kind } => cmd_study(&cfg, &dir, kind)?,
    };
    Ok(Some(path))
}

/// Single-line error for stderr: `error[<class>]: <message>`.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {}", e.class(), one_line(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn paper_profile_mirrors_published_settings() {
        let c = RunConfig::profile(Profile::Paper);
        assert_eq!((c.model.lookback, c.model.horizon), (288, 144));
        assert_eq!((c.train.epochs, c.train.batch_size, c.train.learning_rate), (10, 32, 1e-4));
        assert_eq!((c.faithful.radius, c.faithful.pgd_step, c.faithful.pgd_iters), (0.1, 1.0 / 255.0, 10));
        assert_eq!(c.study.seeds, [2021, 2022, 2023, 2024, 2025]);
        assert_eq!((c.study.base_seed, c.study.noise_sigma), (2021, 0.1));
    }

    #[test]
    fn desk_profile_is_valid_and_small() {
        let c = RunConfig::profile(Profile::Desk);
        c.checked().unwrap();
        assert_eq!((c.model.lookback, c.model.horizon, c.train.epochs), (48, 12, 5));
        assert_eq!(c.data.source, DataSource::Synthetic);
        assert_eq!(c.data.synthetic.kind, SynthKind::TrendSeasonalNoise);
    }

    #[test]
    fn overrides_layer_over_file_and_profile() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(&file, "profile = \"desk\"\nname = \"x\"\n[faithful]\nR = 0.2\nlambda1 = 3.0\n").unwrap();
        let c = RunConfig::resolve(None, Some(&file), &sets(&["faithful.lambda1=4", "faithful.P=3", "train.epochs=2"]))
            .unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.name, "x");
        assert_eq!(c.faithful.radius, 0.2);
        assert_eq!(c.faithful.lambda1, 4.0);
        assert_eq!(c.faithful.pgd_iters, 3);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.model.lookback, 48);
    }

    #[test]
    fn validation_lists_every_problem() {
        let err = RunConfig::resolve(
            Some(Profile::Desk),
            None,
            &sets(&["model.lookback=47", "model.horizon=0", "faithful.lambda2=-1", "faithful.radius=-0.5"]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.class(), "config");
        for needle in ["lookback", "horizon", "lambda2", "radius"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::resolve(Some(Profile::Desk), None, &sets(&["faithful.radiuss=1"])).unwrap_err();
        assert_eq!(e.class(), "config");
        let e = RunConfig::resolve(Some(Profile::Desk), None, &sets(&["nope.x=1"])).unwrap_err();
        assert_eq!(e.class(), "config");
        let e = RunConfig::resolve(Some(Profile::Desk), None, &sets(&["novalue"])).unwrap_err();
        assert_eq!(e.class(), "usage");
    }

    #[test]
    fn paper_profile_needs_a_dataset_path() {
        let e = RunConfig::resolve(Some(Profile::Paper), None, &[]).unwrap_err();
        assert!(e.to_string().contains("data.path"), "{e}");
    }

    #[test]
    fn config_echo_round_trips() {
        let c = RunConfig::profile(Profile::Desk);
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    fn tiny_desk() -> RunConfig {
        RunConfig::resolve(
            Some(Profile::Desk),
            None,
            &sets(&[
                "model.lookback=8",
                "model.horizon=2",
                "model.ifcb.latent_dim=2",
                "model.ifcb.encoder_hidden=[4]",
                "model.ifcb.decoder_hidden=[4]",
                "data.synthetic.rows=80",
                "train.epochs=1",
                "finetune.epochs=1",
                "faithful.pgd_iters=2",
            ]),
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_desk();
        let params: ParamVector<f64> = model::init_params(&cfg.model, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        Checkpoint::new("base", 3, &cfg, &params).unwrap().save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().params_for(&cfg.model).unwrap();
        assert_eq!(back, params);
        let other = ModelConfig { head_hidden: vec![3], ..cfg.model.clone() };
        let err = Checkpoint::load(&path).unwrap().params_for(&other).unwrap_err();
        assert_eq!(err.class(), "checkpoint");
        assert!(err.to_string().contains("head1"), "{err}");
    }

    #[test]
    fn malformed_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "format = \"other\"\n").unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap_err().class(), "checkpoint");
    }

    #[test]
    fn out_root_resolution() {
        let d = RunDir::new(Some(Path::new("/tmp/x")), "r");
        assert_eq!(d.root, Path::new("/tmp/x/r"));
        assert_eq!(d.checkpoint("base"), Path::new("/tmp/x/r/checkpoints/base.toml"));
    }

    #[test]
    fn error_line_is_single_line() {
        let e = Error::Config("a\nb".into()).context("loading");
        assert_eq!(error_line(&e), "error[config]: loading: configuration error: a b");
    }
}
