//! Parameter sweeps with Monte-Carlo trials, CSV rows and per-point
//! aggregates.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{run_ao, AoOptions, AoTrace, Mode};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "p_t")]
    PT,
    #[serde(rename = "p_s")]
    PS,
    #[serde(rename = "m")]
    M,
    #[serde(rename = "a_max")]
    AMax,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::PT => "p_t",
            SweepParam::PS => "p_s",
            SweepParam::M => "m",
            SweepParam::AMax => "a_max",
        }
    }

    /// `cfg` with the swept parameter set to `value`.
    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::PT => out.p_t = value,
            SweepParam::PS => out.p_s = value,
            SweepParam::AMax => out.a_max = value,
            SweepParam::M => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::InvalidConfig(format!("M must be a positive integer, got {value}")));
                }
                out.m = value as usize;
            }
        }
        Ok(out)
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "p_t" | "pt" => Ok(SweepParam::PT),
            "p_s" | "ps" => Ok(SweepParam::PS),
            "m" => Ok(SweepParam::M),
            "a_max" | "amax" => Ok(SweepParam::AMax),
            _ => Err(format!("unknown sweep parameter `{s}` (expected p_t, p_s, m or a_max)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub trials: usize,
    pub modes: Vec<Mode>,
    /// Trial `t` uses scenario seed `seed + t`, shared by every value and mode.
    pub seed: u64,
    /// Record measured wall time instead of 0 (makes output non-reproducible).
    pub record_time: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("empty value list".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("sweep values must be positive, got {v}")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig("no modes given".into()));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub mode: Mode,
    pub seed: u64,
    pub max_crb: f64,
    pub crbs: Vec<f64>,
    pub ao_iters: usize,
    pub status: String,
    pub wall_ms: f64,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        !self.status.starts_with("failed")
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    /// Per-row AO traces, `None` for failed rows.
    pub traces: Vec<Option<AoTrace>>,
}

fn run_one(cfg: &ScenarioConfig, spec: &SweepSpec, value: f64, mode: Mode, trial: usize, ao: &AoOptions) -> (ResultRow, Option<AoTrace>) {
    let seed = spec.trial_seed(trial);
    let started = Instant::now();
    let outcome = spec
        .param
        .apply(cfg, value)
        .and_then(|c| Scenario::new(ScenarioConfig { seed, ..c }))
        .and_then(|sc| run_ao(&sc, &AoOptions { mode, ..*ao }));
    let wall_ms = if spec.record_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let l = cfg.l;
    match outcome {
        Ok(res) => {
            let status = if res.trace.converged { "converged" } else { "max_outer" };
            let row = ResultRow {
                sweep_param: spec.param,
                sweep_value: value,
                mode,
                seed,
                max_crb: res.max_crb,
                crbs: res.crbs,
                ao_iters: res.iterations,
                status: status.into(),
                wall_ms,
            };
            (row, Some(res.trace))
        }
        Err(e) => {
            let kind = format!("{e}").replace([',', '\n', '"'], ";");
            let row = ResultRow {
                sweep_param: spec.param,
                sweep_value: value,
                mode,
                seed,
                max_crb: f64::NAN,
                crbs: vec![f64::NAN; l],
                ao_iters: 0,
                status: format!("failed: {kind}"),
                wall_ms,
            };
            (row, None)
        }
    }
}

/// Runs every (value, mode, trial) task on a pool of `jobs` threads. Rows come
/// back in value, mode, trial order whatever the scheduling.
pub fn run_sweep(cfg: &ScenarioConfig, spec: &SweepSpec, ao: &AoOptions, jobs: usize) -> Result<SweepOutput> {
    cfg.validate()?;
    spec.validate()?;
    let mut tasks = Vec::new();
    for &v in &spec.values {
        for &m in &spec.modes {
            for t in 0..spec.trials {
                tasks.push((v, m, t));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(ResultRow, Option<AoTrace>)> =
        pool.install(|| tasks.par_iter().map(|&(v, m, t)| run_one(cfg, spec, v, m, t, ao)).collect());
    let (rows, traces) = results.into_iter().unzip();
    Ok(SweepOutput { rows, traces })
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_header(l: usize) -> String {
    let mut h = String::from("sweep_param,sweep_value,mode,seed,max_crb");
    for i in 1..=l {
        let _ = write!(h, ",crb_irs_{i}");
    }
    h.push_str(",ao_iters,status,wall_ms");
    h
}

pub fn to_csv(rows: &[ResultRow], l: usize) -> String {
    let mut out = csv_header(l);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{}", r.sweep_param.name(), num(r.sweep_value), r.mode, r.seed, num(r.max_crb));
        for c in &r.crbs {
            let _ = write!(out, ",{}", num(*c));
        }
        let _ = writeln!(out, ",{},{},{}", r.ao_iters, r.status, num(r.wall_ms));
    }
    out
}

/// Parses rows written by [`to_csv`].
pub fn from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidConfig("empty csv".into()))?;
    let cols = header.split(',').count();
    let l = cols.checked_sub(8).ok_or_else(|| Error::InvalidConfig("short csv header".into()))?;
    let bad = |what: &str, line: &str| Error::InvalidConfig(format!("bad {what} in `{line}`"));
    let mut rows = Vec::new();
    for line in lines.filter(|s| !s.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(bad("field count", line));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("number", line));
        rows.push(ResultRow {
            sweep_param: f[0].parse().map_err(|_| bad("parameter", line))?,
            sweep_value: float(f[1])?,
            mode: f[2].parse().map_err(|_| bad("mode", line))?,
            seed: f[3].parse().map_err(|_| bad("seed", line))?,
            max_crb: float(f[4])?,
            crbs: f[5..5 + l].iter().map(|s| float(s)).collect::<Result<_>>()?,
            ao_iters: f[5 + l].parse().map_err(|_| bad("iterations", line))?,
            status: f[6 + l].to_string(),
            wall_ms: float(f[7 + l])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub sweep_value: f64,
    pub mode: Mode,
    pub trials: usize,
    pub failed: usize,
    pub mean: f64,
    pub median: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep_param: SweepParam,
    pub points: Vec<PointSummary>,
}

impl SweepSummary {
    pub fn point(&self, value: f64, mode: Mode) -> Option<&PointSummary> {
        self.points.iter().find(|p| p.sweep_value == value && p.mode == mode)
    }

    /// Means for `mode` in sweep-value order.
    pub fn curve(&self, mode: Mode) -> Vec<&PointSummary> {
        let mut v: Vec<&PointSummary> = self.points.iter().filter(|p| p.mode == mode).collect();
        v.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value));
        v
    }
}

/// Per-(value, mode) statistics over the successful rows; needs nothing but
/// the rows themselves.
pub fn summarize(rows: &[ResultRow]) -> Option<SweepSummary> {
    let param = rows.first()?.sweep_param;
    let mut keys: Vec<(f64, Mode)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.sweep_value, r.mode)) {
            keys.push((r.sweep_value, r.mode));
        }
    }
    let points = keys
        .into_iter()
        .map(|(v, m)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.sweep_value == v && r.mode == m).collect();
            let mut xs: Vec<f64> = group.iter().filter(|r| r.is_ok()).map(|r| r.max_crb).collect();
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let median = match n {
                0 => f64::NAN,
                _ if n % 2 == 1 => xs[n / 2],
                _ => 0.5 * (xs[n / 2 - 1] + xs[n / 2]),
            };
            let std_err = if n > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
            } else {
                f64::NAN
            };
            PointSummary {
                sweep_value: v,
                mode: m,
                trials: group.len(),
                failed: group.len() - n,
                mean,
                median,
                std_err,
                min: xs.first().copied().unwrap_or(f64::NAN),
                max: xs.last().copied().unwrap_or(f64::NAN),
            }
        })
        .collect();
    Some(SweepSummary { sweep_param: param, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        ScenarioConfig { m: 2, n_h: 2, n_v: 2, ..ScenarioConfig::default() }
    }

    fn spec(param: SweepParam, values: Vec<f64>, modes: Vec<Mode>, trials: usize) -> SweepSpec {
        SweepSpec { param, values, trials, modes, seed: 3, record_time: false }
    }

    #[test]
    fn one_trial_one_value_one_row() {
        let s = spec(SweepParam::PT, vec![10.0], vec![Mode::TxOnly], 1);
        let out = run_sweep(&tiny(), &s, &AoOptions::default(), 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        let r = &out.rows[0];
        assert_eq!(r.max_crb, r.crbs.iter().cloned().fold(0.0, f64::max));
        assert_eq!(r.ao_iters, 1);
    }

    #[test]
    fn row_count_and_round_trip() {
        let s = spec(SweepParam::M, vec![2.0, 3.0], vec![Mode::TxOnly, Mode::RbfOnly], 2);
        let out = run_sweep(&tiny(), &s, &AoOptions { max_outer: 2, ..AoOptions::default() }, 2).unwrap();
        assert_eq!(out.rows.len(), 8);
        let text = to_csv(&out.rows, 2);
        assert_eq!(text.lines().count(), 9);
        let back = from_csv(&text).unwrap();
        assert_eq!(back, out.rows);
        assert_eq!(to_csv(&back, 2), text);
        assert_eq!(summarize(&back), summarize(&out.rows));
        let order: Vec<(f64, Mode, u64)> = out.rows.iter().map(|r| (r.sweep_value, r.mode, r.seed)).collect();
        assert_eq!(order[0], (2.0, Mode::TxOnly, 3));
        assert_eq!(order[3], (2.0, Mode::RbfOnly, 4));
        assert_eq!(order[7], (3.0, Mode::RbfOnly, 4));
    }

    #[test]
    fn bad_rows_are_recorded_not_fatal() {
        let s = spec(SweepParam::M, vec![1.5, 2.0], vec![Mode::TxOnly], 1);
        let out = run_sweep(&tiny(), &s, &AoOptions::default(), 1).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(!out.rows[0].is_ok());
        assert!(out.rows[1].is_ok());
        let sum = summarize(&out.rows).unwrap();
        assert_eq!(sum.point(1.5, Mode::TxOnly).unwrap().failed, 1);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(SweepParam::PT, vec![], vec![Mode::Joint], 1).validate().is_err());
        assert!(spec(SweepParam::PT, vec![-1.0], vec![Mode::Joint], 1).validate().is_err());
        assert!(spec(SweepParam::PT, vec![1.0], vec![Mode::Joint], 0).validate().is_err());
        assert!(spec(SweepParam::PT, vec![1.0], vec![], 1).validate().is_err());
        assert_eq!("P_t".parse::<SweepParam>().unwrap(), SweepParam::PT);
        assert_eq!("a-max".parse::<SweepParam>().unwrap(), SweepParam::AMax);
        assert!("k".parse::<SweepParam>().is_err());
    }

    #[test]
    fn summary_statistics() {
        let row = |x: f64| ResultRow {
            sweep_param: SweepParam::PS,
            sweep_value: 1.0,
            mode: Mode::Joint,
            seed: 0,
            max_crb: x,
            crbs: vec![x],
            ao_iters: 1,
            status: "converged".into(),
            wall_ms: 0.0,
        };
        let rows = vec![row(1.0), row(2.0), row(3.0), row(6.0)];
        let s = summarize(&rows).unwrap();
        let p = &s.points[0];
        assert_eq!(p.mean, 3.0);
        assert_eq!(p.median, 2.5);
        assert!((p.std_err - (14.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }
}
