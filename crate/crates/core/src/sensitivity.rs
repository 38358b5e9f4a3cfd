//! Estimation error as a function of the number of samples used.

use std::io::Write;

use rand::seq::index;
use serde::Serialize;
use thiserror::Error;

use crate::estimate::{estimate_all, EstimatorConfig, Quality};
use crate::measurement::MeasurementSet;
use crate::report::{err_delta_deg, err_pct, median, Benchmark};
use crate::synth::stream_rng;
use crate::topology::{GridTopology, Phase};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("requested {requested} samples but the longest series has {available}")]
    SizeExceedsData { requested: usize, available: usize },
    #[error("no sample sizes requested")]
    NoSizes,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How the first `n` samples of each series are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsample {
    /// The earliest `n` samples.
    Prefix,
    /// `n` samples drawn without replacement, kept in time order.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub n_samples: usize,
    pub line_id: String,
    pub phase: Phase,
    pub err_pct: Option<f64>,
    pub err_delta_deg: Option<f64>,
}

pub fn subsample(set: &MeasurementSet, n: usize, mode: Subsample) -> MeasurementSet {
    match mode {
        Subsample::Prefix => set.truncated(n),
        Subsample::Random { seed } => set.map_series(|s| {
            if s.len() <= n {
                return s.clone();
            }
            let mut rng = stream_rng(seed, &format!("subsample/{}/{}/{n}", s.node, s.phase));
            let mut keep = index::sample(&mut rng, s.len(), n).into_vec();
            keep.sort_unstable();
            s.select(&keep)
        }),
    }
}

/// Re-estimates with each sample budget and scores the lines measured at
/// both ends against the benchmark. Rows are ordered by size, then line,
/// then phase; lines whose estimate is undetermined at some size carry
/// empty errors.
pub fn run_sensitivity(
    t: &GridTopology,
    set: &MeasurementSet,
    config: &EstimatorConfig,
    bench: &Benchmark,
    sizes: &[usize],
    mode: Subsample,
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    let available = set.max_series_len();
    let requested = *sizes.iter().max().ok_or(SensitivityError::NoSizes)?;
    if requested > available {
        return Err(SensitivityError::SizeExceedsData { requested, available });
    }
    let full = estimate_all(t, set, config);
    let selected: Vec<(String, Phase)> = full
        .classifications
        .iter()
        .filter(|c| c.case == crate::decompose::LineCase::Case1)
        .flat_map(|c| Phase::ALL.map(|ph| (c.line.line_id.clone(), ph)))
        .filter(|(id, ph)| bench.get(id, *ph).is_some())
        .collect();

    let mut rows = Vec::new();
    for &n in sizes {
        let run = estimate_all(t, &subsample(set, n, mode), config);
        for (id, ph) in &selected {
            let (zb, db) = bench.get(id, *ph).expect("filtered");
            let est = run.get(id, *ph).filter(|e| e.quality == Quality::Exact);
            rows.push(SensitivityRow {
                n_samples: n,
                line_id: id.clone(),
                phase: *ph,
                err_pct: est.and_then(|e| e.z_mag).map(|z| err_pct(z, zb)),
                err_delta_deg: est.and_then(|e| e.delta).map(|d| err_delta_deg(d, db)),
            });
        }
    }
    Ok(rows)
}

/// Median magnitude error over all rows of size `n`.
pub fn median_err_at(rows: &[SensitivityRow], n: usize) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.n_samples == n).filter_map(|r| r.err_pct).collect();
    median(&v)
}

pub fn write_sensitivity_csv<W: Write>(rows: &[SensitivityRow], out: W) -> Result<(), SensitivityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_samples", "line_id", "phase", "err_pct", "err_delta_deg"])?;
    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n_samples.to_string(),
            r.line_id.clone(),
            r.phase.to_string(),
            f(r.err_pct),
            f(r.err_delta_deg),
        ])?;
    }
    w.flush()?;
    Ok(())
}
