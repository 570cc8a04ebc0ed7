//! Seed-variability and input-noise studies, their comparison between a base
//! and a fine-tuned pipeline, and report rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::WindowDataset;
use crate::diffcore::ParamVector;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::train;

/// Printed into every seed report.
pub const PREFERENCE_FORMULA: &str =
    "preference = 100 * (1 - |v_b| / |v_a|), v = (mae - mae_base_seed) / mae_base_seed; NA when v_a = 0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub mae: f64,
    /// Percent change against the base seed's MAE.
    pub variation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStudyResult {
    pub base_seed: u64,
    /// One row per requested seed, in request order.
    pub rows: Vec<SeedRow>,
}

impl SeedStudyResult {
    /// Builds the rows from per-seed MAEs; `base_seed` must be among them.
    pub fn from_maes(base_seed: u64, maes: &[(u64, f64)]) -> Result<Self> {
        let base = maes
            .iter()
            .find(|(s, _)| *s == base_seed)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::Contract(format!("base seed {base_seed} is not among the study seeds")))?;
        Ok(SeedStudyResult {
            base_seed,
            rows: maes
                .iter()
                .map(|&(seed, mae)| SeedRow {
                    seed,
                    mae,
                    variation_pct: variation_pct(mae, base),
                })
                .collect(),
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.seed).collect()
    }

    pub fn maes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mae).collect()
    }

    pub fn base_mae(&self) -> f64 {
        self.rows
            .iter()
            .find(|r| r.seed == self.base_seed)
            .map(|r| r.mae)
            .unwrap_or(f64::NAN)
    }

    /// Largest `|variation_pct|` over all seeds.
    pub fn max_variation_pct(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.variation_pct.abs()))
    }

    pub fn std(&self) -> f64 {
        sample_std(&self.maes())
    }
}

pub fn variation_pct(mae: f64, base: f64) -> f64 {
    if mae == base {
        return 0.0;
    }
    100.0 * (mae - base) / base
}

pub fn degradation_pct(clean: f64, noisy: f64) -> f64 {
    100.0 * (noisy - clean) / clean
}

/// How much less model `b` moves away from its base-seed MAE than model `a`
/// does, in percent. `None` when `a` does not move at all.
pub fn preference_pct(mae_a: f64, base_a: f64, mae_b: f64, base_b: f64) -> Option<f64> {
    let va = variation_pct(mae_a, base_a).abs();
    let vb = variation_pct(mae_b, base_b).abs();
    if va == 0.0 || !va.is_finite() {
        return None;
    }
    Some(100.0 * (1.0 - vb / va))
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Runs `run(seed)` for every seed on its own thread. The first failure, in
/// seed order, is returned annotated with its seed.
pub fn parallel_by_seed<T, F>(seeds: &[u64], run: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = std::thread::scope(|scope| {
        let run = &run;
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || run(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    seeds
        .iter()
        .zip(results)
        .map(|(&seed, r)| r.map_err(|e| e.context(format!("seed {seed}"))))
        .collect()
}

/// Collects the clean test MAE of one model per seed.
pub fn seed_study<F>(seeds: &[u64], base_seed: u64, run: F) -> Result<SeedStudyResult>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if !seeds.contains(&base_seed) {
        return Err(Error::Contract(format!("base seed {base_seed} is not among the study seeds")));
    }
    let maes = parallel_by_seed(seeds, run)?;
    let pairs: Vec<(u64, f64)> = seeds.iter().copied().zip(maes).collect();
    SeedStudyResult::from_maes(base_seed, &pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyResult {
    pub sigma: f64,
    pub noise_seeds: Vec<u64>,
    pub mae_clean: f64,
    /// Mean of `mae_noisy_per_seed`.
    pub mae_noisy: f64,
    pub mae_noisy_per_seed: Vec<f64>,
    pub degradation_pct: f64,
    pub mae_clean_denormalized: f64,
    pub mae_noisy_denormalized: f64,
}

/// Clean MAE against the mean MAE over `noise_seeds` with `N(0, sigma²)`
/// added to every normalized input.
pub fn noise_study<S: Scalar>(
    params: &ParamVector<S>,
    data: &WindowDataset,
    cfg: &ModelConfig,
    sigma: f64,
    noise_seeds: &[u64],
) -> Result<NoiseStudyResult> {
    if noise_seeds.is_empty() {
        return Err(Error::Config("noise study needs at least one noise seed".into()));
    }
    let clean = train::evaluate(params, data, cfg, 0.0, 0)?;
    let mut per_seed = Vec::with_capacity(noise_seeds.len());
    let mut denorm = 0.0;
    for &s in noise_seeds {
        let r = train::evaluate(params, data, cfg, sigma, s)?;
        per_seed.push(r.normalized);
        denorm += r.denormalized;
    }
    let n = noise_seeds.len() as f64;
    let mae_noisy = per_seed.iter().sum::<f64>() / n;
    Ok(NoiseStudyResult {
        sigma,
        noise_seeds: noise_seeds.to_vec(),
        mae_clean: clean.normalized,
        mae_noisy,
        mae_noisy_per_seed: per_seed,
        degradation_pct: degradation_pct(clean.normalized, mae_noisy),
        mae_clean_denormalized: clean.denormalized,
        mae_noisy_denormalized: denorm / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparisonRow {
    pub seed: u64,
    pub ts_mae: f64,
    pub fts_mae: f64,
    pub ts_variation_pct: f64,
    pub fts_variation_pct: f64,
    /// Absent on the base-seed row.
    pub preference_pct: Option<f64>,
}

/// Base (TS) against fine-tuned (FTS) seed studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub formula: String,
    pub base_seed: u64,
    pub ts_std: f64,
    pub fts_std: f64,
    pub ts_max_variation_pct: f64,
    pub fts_max_variation_pct: f64,
    pub rows: Vec<SeedComparisonRow>,
}

impl SeedComparison {
    pub fn new(ts: &SeedStudyResult, fts: &SeedStudyResult) -> Result<Self> {
        if ts.seeds() != fts.seeds() || ts.base_seed != fts.base_seed {
            return Err(Error::Contract("seed studies cover different seeds".into()));
        }
        let (ta, fa) = (ts.base_mae(), fts.base_mae());
        let rows = ts
            .rows
            .iter()
            .zip(&fts.rows)
            .map(|(t, f)| SeedComparisonRow {
                seed: t.seed,
                ts_mae: t.mae,
                fts_mae: f.mae,
                ts_variation_pct: t.variation_pct,
                fts_variation_pct: f.variation_pct,
                preference_pct: if t.seed == ts.base_seed {
                    None
                } else {
                    preference_pct(t.mae, ta, f.mae, fa)
                },
            })
            .collect();
        Ok(SeedComparison {
            formula: PREFERENCE_FORMULA.to_string(),
            base_seed: ts.base_seed,
            ts_std: ts.std(),
            fts_std: fts.std(),
            ts_max_variation_pct: ts.max_variation_pct(),
            fts_max_variation_pct: fts.max_variation_pct(),
            rows,
        })
    }
}

/// Base (TS) against fine-tuned (FTS) noise studies, one pair per training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseComparison {
    pub sigma: f64,
    pub training_seeds: Vec<u64>,
    pub ts_median_degradation_pct: f64,
    pub fts_median_degradation_pct: f64,
    /// `fts_median / ts_median`.
    pub ratio: f64,
    pub ts: Vec<NoiseStudyResult>,
    pub fts: Vec<NoiseStudyResult>,
}

impl NoiseComparison {
    pub fn new(training_seeds: &[u64], ts: Vec<NoiseStudyResult>, fts: Vec<NoiseStudyResult>) -> Result<Self> {
        if ts.is_empty() || ts.len() != fts.len() || ts.len() != training_seeds.len() {
            return Err(Error::Contract(
                "noise comparison needs one TS and one FTS result per training seed".into(),
            ));
        }
        let tm = median(&ts.iter().map(|r| r.degradation_pct).collect::<Vec<_>>());
        let fm = median(&fts.iter().map(|r| r.degradation_pct).collect::<Vec<_>>());
        Ok(NoiseComparison {
            sigma: ts[0].sigma,
            training_seeds: training_seeds.to_vec(),
            ts_median_degradation_pct: tm,
            fts_median_degradation_pct: fm,
            ratio: fm / tm,
            ts,
            fts,
        })
    }
}

/// Everything a study run writes: raw numbers plus the effective config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: String,
    #[serde(default)]
    pub seeds: Vec<SeedComparison>,
    #[serde(default)]
    pub noise: Vec<NoiseComparison>,
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Contract(format!("cannot serialize report: {e}")))
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Data(format!("malformed report: {e}")))
}

fn pct(v: f64) -> String {
    format!("{v:.2}%")
}

/// Fixed-layout text tables for every study in `report`.
pub fn render_text(report: &StudyReport) -> Result<String> {
    if report.seeds.is_empty() && report.noise.is_empty() {
        return Err(Error::Contract("report holds no study results".into()));
    }
    let mut out = String::new();
    for s in &report.seeds {
        let _ = writeln!(out, "seed study (base seed {})", s.base_seed);
        let _ = writeln!(out, "{:>12} {:>10} {:>10} {:>10} {:>10} {:>12}", "seed", "TS", "FTS", "TS var", "FTS var", "preference");
        for r in &s.rows {
            let mark = if r.seed == s.base_seed { "*" } else { "" };
            let pref = r.preference_pct.map_or("NA".to_string(), pct);
            let _ = writeln!(
                out,
                "{:>12} {:>10.4} {:>10.4} {:>10} {:>10} {:>12}",
                format!("{}{mark}", r.seed),
                r.ts_mae,
                r.fts_mae,
                pct(r.ts_variation_pct),
                pct(r.fts_variation_pct),
                pref
            );
        }
        let _ = writeln!(out, "{:>12} {:>10.4} {:>10.4}", "std", s.ts_std, s.fts_std);
        let _ = writeln!(
            out,
            "{:>12} {:>10} {:>10}",
            "max |var|",
            pct(s.ts_max_variation_pct),
            pct(s.fts_max_variation_pct)
        );
        let _ = writeln!(out, "{}\n", s.formula);
    }
    for n in &report.noise {
        let _ = writeln!(out, "noise study (sigma {})", n.sigma);
        let _ = writeln!(out, "{:>12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "seed", "TS clean", "TS noisy", "TS deg", "FTS clean", "FTS noisy", "FTS deg");
        for ((seed, t), f) in n.training_seeds.iter().zip(&n.ts).zip(&n.fts) {
            let _ = writeln!(
                out,
                "{:>12} {:>10.4} {:>10.4} {:>10} {:>10.4} {:>10.4} {:>10}",
                seed,
                t.mae_clean,
                t.mae_noisy,
                pct(t.degradation_pct),
                f.mae_clean,
                f.mae_noisy,
                pct(f.degradation_pct)
            );
        }
        let _ = writeln!(
            out,
            "{:>12} {:>32} {:>32}",
            "median",
            pct(n.ts_median_degradation_pct),
            pct(n.fts_median_degradation_pct)
        );
        let _ = writeln!(out, "FTS/TS degradation ratio {:.4}\n", n.ratio);
    }
    Ok(out)
}

/// Writes `<stem>.txt` and `<stem>.toml` into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &StudyReport) -> Result<(PathBuf, PathBuf)> {
    let text = render_text(report)?;
    let structured = to_toml(report)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    let tml = dir.join(format!("{stem}.toml"));
    fs::write(&txt, text).map_err(|e| Error::io(&txt, e))?;
    fs::write(&tml, structured).map_err(|e| Error::io(&tml, e))?;
    Ok((txt, tml))
}
