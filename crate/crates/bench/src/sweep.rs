//! Seeded parameter sweeps over the optimization schemes.

use std::fs;
use std::path::{Path, PathBuf};

use fstar_core::ao::{run_ao, AoSettings, AoState, BaselineKind};
use fstar_core::scenario::{dbm_to_watts, rate_to_sinr, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "FSTAR_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// Element count.
    #[serde(rename = "L")]
    Elements,
    #[serde(rename = "p_max_dbm")]
    PowerDbm,
    /// Movement-region side in wavelengths.
    #[serde(rename = "aperture_side")]
    ApertureSide,
    /// Per-user rate floor, bps/Hz.
    #[serde(rename = "qos_rate")]
    QosRate,
    /// BS antenna count.
    #[serde(rename = "M")]
    Antennas,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Elements => "L",
            SweepParam::PowerDbm => "p_max_dbm",
            SweepParam::ApertureSide => "aperture_side",
            SweepParam::QosRate => "qos_rate",
            SweepParam::Antennas => "M",
        }
    }

    /// Copy of `base` with the parameter set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(BenchError::Sweep(format!("{} needs whole values, got {v}", self.name())))
            }
        };
        match self {
            SweepParam::Elements => s.elements = count(value)?,
            SweepParam::PowerDbm => s.max_power = dbm_to_watts(value),
            SweepParam::ApertureSide => s.aperture_side = value * s.wavelength,
            SweepParam::QosRate => s.sinr_min = rate_to_sinr(value),
            SweepParam::Antennas => s.antennas = count(value)?,
        }
        s.validate()?;
        Ok(s)
    }

    /// Whether more of the parameter should never hurt the optimum.
    pub fn rate_should_grow(self) -> bool {
        !matches!(self, SweepParam::QosRate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    pub schemes: Vec<BaselineKind>,
    pub seeds: Vec<u64>,
    /// Base scenario file; the shipped reference when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.schemes.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::Sweep("values, schemes and seeds must be non-empty".into()));
        }
        Ok(())
    }
}

pub fn load_spec(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| BenchError::parse(path, &e))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Infeasible,
    Error,
}

/// One AO run of the sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub value: f64,
    pub scheme: BaselineKind,
    pub seed: u64,
    pub outcome: std::result::Result<AoState, String>,
    pub seconds: f64,
}

impl Cell {
    pub fn status(&self) -> CellStatus {
        match &self.outcome {
            Ok(st) if st.failure.is_none() => CellStatus::Ok,
            Ok(_) => CellStatus::Infeasible,
            Err(_) => CellStatus::Error,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match &self.outcome {
            Ok(st) if st.failure.is_none() => Some(st.objective()),
            _ => None,
        }
    }

    pub fn row(&self, parameter: SweepParam) -> Row {
        let (iterations, detail) = match &self.outcome {
            Ok(st) => (st.iterations, st.failure.clone().unwrap_or_default()),
            Err(e) => (0, e.clone()),
        };
        Row {
            parameter: parameter.name().to_string(),
            value: self.value,
            scheme: self.scheme.to_string(),
            seed: self.seed,
            status: self.status(),
            rate: self.rate(),
            iterations,
            wall_seconds: self.seconds,
            detail,
        }
    }
}

/// CSV row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub parameter: String,
    pub value: f64,
    pub scheme: String,
    pub seed: u64,
    pub status: CellStatus,
    pub rate: Option<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub detail: String,
}

fn seconds_since(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Runs every scheme on one scenario. The OMA comparator reuses the
/// fixed-surface run when both are requested.
pub fn run_schemes(scenario: &Scenario, schemes: &[BaselineKind], settings: &AoSettings) -> Vec<(BaselineKind, std::result::Result<AoState, String>, f64)> {
    let mut out: Vec<(BaselineKind, std::result::Result<AoState, String>, f64)> = Vec::new();
    let mut order: Vec<BaselineKind> = schemes.to_vec();
    order.sort_by_key(|&k| k == BaselineKind::Oma);
    for kind in order {
        let start = std::time::Instant::now();
        let prior = out
            .iter()
            .find(|(k, r, _)| *k == BaselineKind::TStar && r.is_ok())
            .and_then(|(_, r, _)| r.as_ref().ok())
            .filter(|_| kind == BaselineKind::Oma);
        let result = run_ao(scenario, kind, prior, settings).map_err(|e| e.to_string());
        out.push((kind, result, seconds_since(start)));
    }
    out
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs all `(value, seed)` jobs on a bounded pool; cells come back sorted by
/// `(value, scheme, seed)` whatever the completion order.
pub fn run_sweep(spec: &SweepSpec, base: &Scenario, settings: &AoSettings, workers: usize) -> Result<Vec<Cell>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &value in &spec.values {
        let scenario = spec.parameter.apply(base, value)?;
        for &seed in &spec.seeds {
            let mut s = scenario.clone();
            s.seed = seed;
            jobs.push((value, s));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Sweep(e.to_string()))?;
    let mut cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|(value, s)| {
                log::info!("{} = {value}, seed {}", spec.parameter.name(), s.seed);
                run_schemes(s, &spec.schemes, settings)
                    .into_iter()
                    .map(move |(scheme, outcome, seconds)| Cell {
                        value: *value,
                        scheme,
                        seed: s.seed,
                        outcome,
                        seconds,
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    });
    cells.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.scheme.cmp(&b.scheme))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(cells)
}
