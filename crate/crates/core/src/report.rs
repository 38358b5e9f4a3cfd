//! Report files: estimates, classifications, benchmark comparison.
//!
//! Angles are radians everywhere except the `err_delta_deg` columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{LineCase, LineClassification};
use crate::estimate::{BenchmarkLine, ImpedanceEstimate, Quality, Reason};
use crate::topology::Phase;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {msg}")]
    Field { row: usize, msg: String },
    #[error("unrecognized header `{0}`")]
    Header(String),
}

pub const ESTIMATE_HEADER: [&str; 10] = [
    "line_id", "phase", "case", "quality", "z_ohm", "delta_rad", "z_lower", "z_upper", "n_samples", "reason",
];

pub const COMPARISON_EXTRA: [&str; 4] = ["z_bench", "delta_bench", "err_pct", "err_delta_deg"];

/// Flat, file-level form of an [`ImpedanceEstimate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub line_id: String,
    pub phase: Phase,
    pub case: u8,
    pub quality: Quality,
    #[serde(with = "opt_float")]
    pub z_ohm: Option<f64>,
    #[serde(with = "opt_float")]
    pub delta_rad: Option<f64>,
    #[serde(with = "opt_float")]
    pub z_lower: Option<f64>,
    #[serde(with = "opt_float")]
    pub z_upper: Option<f64>,
    pub n_samples: usize,
    pub reason: Option<Reason>,
}

impl From<&ImpedanceEstimate> for EstimateRecord {
    fn from(e: &ImpedanceEstimate) -> Self {
        EstimateRecord {
            line_id: e.line.line_id.clone(),
            phase: e.phase,
            case: e.case.number(),
            quality: e.quality,
            z_ohm: e.z_mag,
            delta_rad: e.delta,
            z_lower: e.z_lower,
            z_upper: e.z_upper,
            n_samples: e.n_samples_used,
            reason: e.reason,
        }
    }
}

/// JSON has no infinity; non-finite values travel as strings.
mod opt_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) => s.serialize_some(&x.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, row: usize, col: &str) -> Result<Option<f64>, ReportError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| ReportError::Field {
        row,
        msg: format!("bad {col} `{s}`"),
    })
}

fn estimate_fields(r: &EstimateRecord) -> Vec<String> {
    vec![
        r.line_id.clone(),
        r.phase.to_string(),
        r.case.to_string(),
        r.quality.to_string(),
        fmt_opt(r.z_ohm),
        fmt_opt(r.delta_rad),
        fmt_opt(r.z_lower),
        fmt_opt(r.z_upper),
        r.n_samples.to_string(),
        r.reason.map(|x| x.to_string()).unwrap_or_default(),
    ]
}

pub fn write_estimates_csv<W: Write>(estimates: &[ImpedanceEstimate], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER)?;
    for e in estimates {
        w.write_record(estimate_fields(&EstimateRecord::from(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates_csv<R: Read>(input: R) -> Result<Vec<EstimateRecord>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < ESTIMATE_HEADER.len() || header[..ESTIMATE_HEADER.len()] != ESTIMATE_HEADER {
        return Err(ReportError::Header(header.join(",")));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let bad = |msg: String| ReportError::Field { row, msg };
        let phase = Phase::parse(&rec[1]).ok_or_else(|| bad(format!("bad phase `{}`", &rec[1])))?;
        let case: u8 = rec[2].parse().map_err(|_| bad(format!("bad case `{}`", &rec[2])))?;
        LineCase::from_number(case).ok_or_else(|| bad(format!("bad case `{case}`")))?;
        let quality = Quality::parse(&rec[3]).ok_or_else(|| bad(format!("bad quality `{}`", &rec[3])))?;
        let reason = if rec[9].is_empty() {
            None
        } else {
            Some(Reason::parse(&rec[9]).ok_or_else(|| bad(format!("bad reason `{}`", &rec[9])))?)
        };
        out.push(EstimateRecord {
            line_id: rec[0].to_string(),
            phase,
            case,
            quality,
            z_ohm: parse_opt(&rec[4], row, "z_ohm")?,
            delta_rad: parse_opt(&rec[5], row, "delta_rad")?,
            z_lower: parse_opt(&rec[6], row, "z_lower")?,
            z_upper: parse_opt(&rec[7], row, "z_upper")?,
            n_samples: rec[8].parse().map_err(|_| bad(format!("bad n_samples `{}`", &rec[8])))?,
            reason,
        });
    }
    Ok(out)
}

pub fn estimates_to_json(estimates: &[ImpedanceEstimate]) -> String {
    let records: Vec<EstimateRecord> = estimates.iter().map(EstimateRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

pub fn estimates_from_json(text: &str) -> Result<Vec<EstimateRecord>, ReportError> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_classification_csv<W: Write>(classes: &[LineClassification], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line_id", "from", "to", "case"])?;
    for c in classes {
        w.write_record([
            c.line.line_id.as_str(),
            c.line.parent.as_str(),
            c.line.child.as_str(),
            &c.case.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text table of the classification, one line per grid line.
pub fn classification_table(classes: &[LineClassification]) -> String {
    let w_id = classes.iter().map(|c| c.line.line_id.len()).max().unwrap_or(0).max(4);
    let w_from = classes.iter().map(|c| c.line.parent.as_str().len()).max().unwrap_or(0).max(4);
    let w_to = classes.iter().map(|c| c.line.child.as_str().len()).max().unwrap_or(0).max(2);
    let mut s = String::new();
    let _ = writeln!(s, "{:<w_id$}  {:<w_from$}  {:<w_to$}  case", "line", "from", "to");
    for c in classes {
        let _ = writeln!(
            s,
            "{:<w_id$}  {:<w_from$}  {:<w_to$}  {}",
            c.line.line_id, c.line.parent, c.line.child, c.case
        );
    }
    s
}

/// Reference impedances per (line, phase), as (|Z| Ω, δ rad).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Benchmark {
    values: BTreeMap<(String, Phase), (f64, f64)>,
}

impl Benchmark {
    pub fn insert(&mut self, line_id: &str, phase: Phase, z: f64, delta: f64) {
        self.values.insert((line_id.to_string(), phase), (z, delta));
    }

    pub fn get(&self, line_id: &str, phase: Phase) -> Option<(f64, f64)> {
        self.values.get(&(line_id.to_string(), phase)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn from_lines(lines: &[BenchmarkLine], frequency_hz: f64) -> Self {
        let mut b = Benchmark::default();
        for l in lines {
            let (z, d) = l.impedance(frequency_hz);
            for ph in Phase::ALL {
                b.insert(&l.line_id, ph, z, d);
            }
        }
        b
    }

    /// Reads either a data-sheet file (`line_id,r_ohm_per_km,l_h_per_km,
    /// length_km`, same for every phase) or a per-phase truth file
    /// (`line_id,phase,z_ohm,delta_rad`).
    pub fn read_csv<R: Read>(input: R, frequency_hz: f64) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let num = |s: &str, row: usize| -> Result<f64, ReportError> {
            s.trim().parse().map_err(|_| ReportError::Field {
                row,
                msg: format!("bad number `{s}`"),
            })
        };
        match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["line_id", "r_ohm_per_km", "l_h_per_km", "length_km", ..] => {
                let mut lines = Vec::new();
                for (k, rec) in rdr.records().enumerate() {
                    let rec = rec?;
                    lines.push(BenchmarkLine {
                        line_id: rec[0].to_string(),
                        r_ohm_per_km: num(&rec[1], k + 2)?,
                        l_h_per_km: num(&rec[2], k + 2)?,
                        length_km: num(&rec[3], k + 2)?,
                    });
                }
                Ok(Self::from_lines(&lines, frequency_hz))
            }
            ["line_id", "phase", "z_ohm", "delta_rad", ..] => {
                let mut b = Benchmark::default();
                for (k, rec) in rdr.records().enumerate() {
                    let rec = rec?;
                    let phase = Phase::parse(&rec[1]).ok_or_else(|| ReportError::Field {
                        row: k + 2,
                        msg: format!("bad phase `{}`", &rec[1]),
                    })?;
                    b.insert(&rec[0], phase, num(&rec[2], k + 2)?, num(&rec[3], k + 2)?);
                }
                Ok(b)
            }
            _ => Err(ReportError::Header(header.join(","))),
        }
    }
}

/// Percentage magnitude error `100 |z - z_ref| / z_ref`.
pub fn err_pct(z: f64, z_ref: f64) -> f64 {
    100.0 * (z - z_ref).abs() / z_ref
}

/// Absolute angle error in degrees.
pub fn err_delta_deg(delta: f64, delta_ref: f64) -> f64 {
    (delta - delta_ref).abs().to_degrees()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub estimate: EstimateRecord,
    pub z_bench: Option<f64>,
    pub delta_bench: Option<f64>,
    pub err_pct: Option<f64>,
    pub err_delta_deg: Option<f64>,
}

pub fn compare(estimates: &[ImpedanceEstimate], bench: &Benchmark) -> Vec<ComparisonRow> {
    estimates
        .iter()
        .map(|e| {
            let b = bench.get(&e.line.line_id, e.phase);
            let usable = e.is_determined();
            ComparisonRow {
                estimate: e.into(),
                z_bench: b.map(|x| x.0),
                delta_bench: b.map(|x| x.1),
                err_pct: match (b, e.z_mag) {
                    (Some((zb, _)), Some(z)) if usable => Some(err_pct(z, zb)),
                    _ => None,
                },
                err_delta_deg: match (b, e.delta) {
                    (Some((_, db)), Some(d)) if usable => Some(err_delta_deg(d, db)),
                    _ => None,
                },
            }
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER.iter().chain(COMPARISON_EXTRA.iter()))?;
    for r in rows {
        let mut f = estimate_fields(&r.estimate);
        f.extend([r.z_bench, r.delta_bench, r.err_pct, r.err_delta_deg].map(fmt_opt));
        w.write_record(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Errors of one line, averaged over the phases that have them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineError {
    pub line_id: String,
    pub case: u8,
    pub err_pct: f64,
    pub err_delta_deg: Option<f64>,
    /// Spread of the phase magnitudes relative to their mean, %.
    pub phase_spread_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorStats {
    pub n_lines: usize,
    pub mean_err_pct: Option<f64>,
    pub median_err_pct: Option<f64>,
    pub max_err_pct: Option<f64>,
    pub mean_err_delta_deg: Option<f64>,
    pub max_err_delta_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonSummary {
    /// Lines measured at both ends.
    pub exact: ErrorStats,
    /// Every line with a magnitude estimate.
    pub all: ErrorStats,
    pub lines: Vec<LineError>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn max(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::max)
}

/// Per-line errors, averaged over the phases that have them.
pub fn line_errors(rows: &[ComparisonRow]) -> Vec<LineError> {
    let mut by_line: BTreeMap<&str, Vec<&ComparisonRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let entry = by_line.entry(r.estimate.line_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.estimate.line_id.as_str());
        }
        entry.push(r);
    }
    order
        .into_iter()
        .filter_map(|id| {
            let rs = &by_line[id];
            let errs: Vec<f64> = rs.iter().filter_map(|r| r.err_pct).collect();
            let derr: Vec<f64> = rs.iter().filter_map(|r| r.err_delta_deg).collect();
            let zs: Vec<f64> = rs
                .iter()
                .filter(|r| r.err_pct.is_some())
                .filter_map(|r| r.estimate.z_ohm)
                .collect();
            let m = mean(&errs)?;
            let zmean = mean(&zs).unwrap_or(0.0);
            let spread = if zmean > 0.0 {
                100.0 * (max(&zs).unwrap_or(0.0) - zs.iter().copied().fold(f64::INFINITY, f64::min)) / zmean
            } else {
                0.0
            };
            Some(LineError {
                line_id: id.to_string(),
                case: rs[0].estimate.case,
                err_pct: m,
                err_delta_deg: mean(&derr),
                phase_spread_pct: spread,
            })
        })
        .collect()
}

fn stats(lines: &[&LineError]) -> ErrorStats {
    let e: Vec<f64> = lines.iter().map(|l| l.err_pct).collect();
    let d: Vec<f64> = lines.iter().filter_map(|l| l.err_delta_deg).collect();
    ErrorStats {
        n_lines: lines.len(),
        mean_err_pct: mean(&e),
        median_err_pct: median(&e),
        max_err_pct: max(&e),
        mean_err_delta_deg: mean(&d),
        max_err_delta_deg: max(&d),
    }
}

pub fn summarize(rows: &[ComparisonRow]) -> ComparisonSummary {
    let lines = line_errors(rows);
    let exact: Vec<&LineError> = lines.iter().filter(|l| l.case == 1).collect();
    let all: Vec<&LineError> = lines.iter().collect();
    ComparisonSummary {
        exact: stats(&exact),
        all: stats(&all),
        lines,
    }
}

/// Human-readable summary.
pub fn summary_text(s: &ComparisonSummary) -> String {
    let f = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    for (name, st) in [("exact (case 1)", &s.exact), ("all estimated", &s.all)] {
        let _ = writeln!(
            out,
            "{name}: {} lines, err% mean {} median {} max {}, angle err mean {} max {} deg",
            st.n_lines,
            f(st.mean_err_pct),
            f(st.median_err_pct),
            f(st.max_err_pct),
            f(st.mean_err_delta_deg),
            f(st.max_err_delta_deg)
        );
    }
    out
}
