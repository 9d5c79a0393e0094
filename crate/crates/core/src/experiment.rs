//! Monte-Carlo sweeps over scenario parameters with per-run seed streams,
//! CSV result tables and heat-map generation.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{heatmap, preset_state, GridSpec, HeatmapGrid, Preset};
use crate::benchmarks::{draw_realization, run_scheme, SchemeId};
use crate::config::SystemConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    Kappa,
    /// Detection error target `1 − κ`.
    Xi,
    /// Surface size; `N_y = N / N_z`.
    N,
    NY,
    PMaxDbm,
    WillieRange,
    WillieAzimuth,
    BobRange,
    BobAzimuth,
    MRf,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Kappa => "kappa",
            SweepParam::Xi => "xi",
            SweepParam::N => "n",
            SweepParam::NY => "n_y",
            SweepParam::PMaxDbm => "p_max_dbm",
            SweepParam::WillieRange => "willie_range",
            SweepParam::WillieAzimuth => "willie_azimuth",
            SweepParam::BobRange => "bob_range",
            SweepParam::BobAzimuth => "bob_azimuth",
            SweepParam::MRf => "m_rf",
        }
    }

    const ALL: [SweepParam; 10] = [
        SweepParam::Kappa,
        SweepParam::Xi,
        SweepParam::N,
        SweepParam::NY,
        SweepParam::PMaxDbm,
        SweepParam::WillieRange,
        SweepParam::WillieAzimuth,
        SweepParam::BobRange,
        SweepParam::BobAzimuth,
        SweepParam::MRf,
    ];

    fn count(value: f64, field: &str) -> Result<usize> {
        if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
            Ok(value as usize)
        } else {
            Err(Error::Config { field: field.to_string(), reason: format!("needs a positive integer, got {value}") })
        }
    }

    /// Copy of `cfg` with this parameter set to `value`, validated.
    pub fn apply(&self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Kappa => c.kappa = value,
            SweepParam::Xi => c.kappa = 1.0 - value,
            SweepParam::N => {
                let n = Self::count(value, "n")?;
                if n % c.n_z != 0 {
                    return Err(Error::Config { field: "n".into(), reason: format!("{n} is not a multiple of n_z = {}", c.n_z) });
                }
                c.n_y = n / c.n_z;
            }
            SweepParam::NY => c.n_y = Self::count(value, "n_y")?,
            SweepParam::PMaxDbm => c.p_max_dbm = value,
            SweepParam::WillieRange => c.willie.range_m = value,
            SweepParam::WillieAzimuth => c.willie.azimuth_rad = value,
            SweepParam::BobRange => c.bob.range_m = value,
            SweepParam::BobAzimuth => c.bob.azimuth_rad = value,
            SweepParam::MRf => c.m_rf = Self::count(value, "m_rf")?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::Unknown { kind: "sweep parameter", value: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeId>,
}

impl SweepSpec {
    /// Parses `PARAM=v1,v2,...`.
    pub fn parse(text: &str, schemes: Vec<SchemeId>) -> Result<Self> {
        let (name, list) = text
            .split_once('=')
            .ok_or_else(|| Error::Config { field: "sweep".into(), reason: "expected PARAM=v1,v2,...".into() })?;
        let param = SweepParam::from_str(name)?;
        let values = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Config { field: "sweep".into(), reason: format!("`{s}`: {e}") })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Config { field: "sweep".into(), reason: "no values given".into() });
        }
        if schemes.is_empty() {
            return Err(Error::Config { field: "schemes".into(), reason: "no schemes selected".into() });
        }
        Ok(Self { param, values, schemes })
    }
}

pub fn parse_schemes(text: &str) -> Result<Vec<SchemeId>> {
    let mut out: Vec<SchemeId> = Vec::new();
    for s in text.split(',').filter(|s| !s.trim().is_empty()) {
        let id = SchemeId::from_str(s)?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

/// First 16 hex digits of the SHA-256 of the canonical JSON config.
pub fn config_hash(cfg: &SystemConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(cfg).expect("config serializes"));
    hex::encode(&digest[..8])
}

/// Stream id for sweep point `point` and realization `r`.
pub fn stream_id(point: usize, realization: usize) -> u64 {
    ((point as u64) << 32) | realization as u64
}

pub fn run_rng(seed: u64, point: usize, realization: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(point, realization));
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scheme: SchemeId,
    pub param: &'static str,
    pub value: f64,
    pub realization: usize,
    pub seed: u64,
    pub stream: u64,
    pub config_hash: String,
    pub rate: f64,
    pub leakage: f64,
    pub min_dep: f64,
    pub power: f64,
    pub iterations: usize,
    pub ok: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub scheme: SchemeId,
    pub value: f64,
    pub realization: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub scheme: SchemeId,
    pub param: &'static str,
    pub value: f64,
    pub mean_rate: f64,
    pub mean_leakage: f64,
    pub mean_min_dep: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
}

impl SweepResult {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(usize, SchemeId), Vec<&ResultRow>> = BTreeMap::new();
        let mut order: Vec<f64> = Vec::new();
        for r in &self.rows {
            let idx = match order.iter().position(|v| v.to_bits() == r.value.to_bits()) {
                Some(i) => i,
                None => {
                    order.push(r.value);
                    order.len() - 1
                }
            };
            groups.entry((idx, r.scheme)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((idx, scheme), rows)| {
                let good: Vec<&&ResultRow> = rows.iter().filter(|r| r.ok).collect();
                let mean = |f: fn(&ResultRow) -> f64| {
                    if good.is_empty() {
                        f64::NAN
                    } else {
                        good.iter().map(|r| f(r)).sum::<f64>() / good.len() as f64
                    }
                };
                AggregateRow {
                    scheme,
                    param: rows[0].param,
                    value: order[idx],
                    mean_rate: mean(|r| r.rate),
                    mean_leakage: mean(|r| r.leakage),
                    mean_min_dep: mean(|r| r.min_dep),
                    successes: good.len(),
                    failures: rows.len() - good.len(),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join("results.csv"), &self.rows)?;
        write_rows(&dir.join("aggregate.csv"), &self.aggregate())?;
        write_rows(&dir.join("timings.csv"), &self.timings)?;
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every scheme on every realization of every sweep point. All
/// schemes of a realization share one channel draw. Output order is fixed
/// by (point, realization, scheme) regardless of scheduling.
pub fn run_sweep(cfg: &SystemConfig, sweep: &SweepSpec) -> Result<SweepResult> {
    let points = sweep
        .values
        .iter()
        .map(|&v| sweep.param.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..points[p].realizations).map(move |r| (p, r))).collect();
    let per_job: Vec<Vec<(ResultRow, TimingRow)>> = jobs
        .par_iter()
        .map(|&(p, r)| run_realization(&points[p], sweep, p, r))
        .collect();
    let mut out = SweepResult::default();
    for (row, t) in per_job.into_iter().flatten() {
        out.rows.push(row);
        out.timings.push(t);
    }
    Ok(out)
}

fn run_realization(cfg: &SystemConfig, sweep: &SweepSpec, point: usize, r: usize) -> Vec<(ResultRow, TimingRow)> {
    let value = sweep.values[point];
    let hash = config_hash(cfg);
    let mut rng = run_rng(cfg.seed, point, r);
    let drawn = draw_realization(cfg, &mut rng);
    sweep
        .schemes
        .iter()
        .map(|&scheme| {
            let started = Instant::now();
            let mut row = ResultRow {
                scheme,
                param: sweep.param.name(),
                value,
                realization: r,
                seed: cfg.seed,
                stream: stream_id(point, r),
                config_hash: hash.clone(),
                rate: f64::NAN,
                leakage: f64::NAN,
                min_dep: f64::NAN,
                power: f64::NAN,
                iterations: 0,
                ok: false,
                error: String::new(),
            };
            let outcome = drawn.as_ref().map_err(|e| e.to_string()).and_then(|(channels, init)| {
                // each scheme gets its own stream so adding schemes never shifts others
                let mut srng = run_rng(cfg.seed ^ (scheme as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15), point, r);
                run_scheme(scheme, cfg, channels, init, &mut srng).map_err(|e| e.to_string())
            });
            match outcome {
                Ok(sol) => {
                    row.rate = sol.rate;
                    row.leakage = sol.report.leakage;
                    row.min_dep = sol.report.min_dep;
                    row.power = sol.power;
                    row.iterations = sol.trace.rows.len().saturating_sub(1);
                    row.ok = true;
                }
                Err(e) => row.error = e,
            }
            let timing = TimingRow { scheme, value, realization: r, wall_ms: started.elapsed().as_secs_f64() * 1e3 };
            (row, timing)
        })
        .collect()
}

/// Heat map of a preset on the first realization of `cfg`.
pub fn run_heatmap(cfg: &SystemConfig, preset: Preset, spec: GridSpec) -> Result<HeatmapGrid> {
    let mut rng = run_rng(cfg.seed, 0, 0);
    let (channels, init) = draw_realization(cfg, &mut rng)?;
    let state = preset_state(preset, cfg, &channels, &init)?;
    heatmap(&channels, &state, spec)
}
