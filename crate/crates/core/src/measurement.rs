//! Non-synchronized per-node, per-phase P/Q/|V| series and their moments.
//!
//! Sign convention: `p` and `q` are the powers leaving the measured node
//! into its feeding line, so a consuming node reports negative `p`.
//! Equivalently, `-p - jq` is the complex power entering the node from
//! upstream. For the root the upstream side is the supply transformer.
//!
//! Missing fields are stored as NaN and exposed as `Option<f64>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, Phase};

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("cannot read measurement stream: {0}")]
    UnreadableStream(String),
    #[error("measurement stream has no valid rows")]
    EmptyInput,
    #[error("zero apparent power: power-factor angle undefined")]
    ZeroApparentPower,
    #[error("non-positive voltage {0}")]
    NonPositiveVoltage(f64),
    #[error("no usable samples")]
    InsufficientData,
}

/// One reading; any of `p`, `q`, `v` may be missing.
#[derive(Clone, Copy, Debug)]
pub struct MeasurementSample {
    pub timestamp: i64,
    p: f64,
    q: f64,
    v: f64,
}

impl PartialEq for MeasurementSample {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp && self.p() == other.p() && self.q() == other.q() && self.v() == other.v()
    }
}

fn opt(x: f64) -> Option<f64> {
    if x.is_nan() {
        None
    } else {
        Some(x)
    }
}

impl MeasurementSample {
    pub fn new(timestamp: i64, p: Option<f64>, q: Option<f64>, v: Option<f64>) -> Self {
        MeasurementSample {
            timestamp,
            p: p.filter(|x| x.is_finite()).unwrap_or(f64::NAN),
            q: q.filter(|x| x.is_finite()).unwrap_or(f64::NAN),
            v: v.filter(|x| x.is_finite() && *x > 0.0).unwrap_or(f64::NAN),
        }
    }

    pub fn complete(timestamp: i64, p: f64, q: f64, v: f64) -> Self {
        Self::new(timestamp, Some(p), Some(q), Some(v))
    }

    pub fn p(&self) -> Option<f64> {
        opt(self.p)
    }

    pub fn q(&self) -> Option<f64> {
        opt(self.q)
    }

    pub fn v(&self) -> Option<f64> {
        opt(self.v)
    }

    fn all(&self) -> Option<(f64, f64, f64)> {
        Some((self.p()?, self.q()?, self.v()?))
    }
}

/// Time-ordered samples of one (node, phase) channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSeries {
    pub node: NodeId,
    pub phase: Phase,
    samples: Vec<MeasurementSample>,
}

impl MeasurementSeries {
    /// Sorts by timestamp and keeps the first of any duplicate timestamps.
    /// Returns the series and the number of dropped duplicates.
    pub fn from_samples(node: NodeId, phase: Phase, mut samples: Vec<MeasurementSample>) -> (Self, usize) {
        samples.sort_by_key(|s| s.timestamp);
        let before = samples.len();
        samples.dedup_by_key(|s| s.timestamp);
        let dropped = before - samples.len();
        (MeasurementSeries { node, phase, samples }, dropped)
    }

    pub fn samples(&self) -> &[MeasurementSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window(&self) -> Option<(i64, i64)> {
        Some((self.samples.first()?.timestamp, self.samples.last()?.timestamp))
    }

    pub fn prefix(&self, n: usize) -> MeasurementSeries {
        MeasurementSeries {
            node: self.node.clone(),
            phase: self.phase,
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
        }
    }

    /// Keeps the samples whose positions are listed in `keep` (sorted).
    pub fn select(&self, keep: &[usize]) -> MeasurementSeries {
        MeasurementSeries {
            node: self.node.clone(),
            phase: self.phase,
            samples: keep.iter().map(|&i| self.samples[i]).collect(),
        }
    }
}

/// All series of a data set, keyed by (node, phase).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    series: BTreeMap<(NodeId, Phase), MeasurementSeries>,
}

impl MeasurementSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: MeasurementSeries) {
        self.series.insert((series.node.clone(), series.phase), series);
    }

    pub fn get(&self, node: &NodeId, phase: Phase) -> Option<&MeasurementSeries> {
        self.series.get(&(node.clone(), phase))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MeasurementSeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn max_series_len(&self) -> usize {
        self.series.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// First `n` samples of every series.
    pub fn truncated(&self, n: usize) -> MeasurementSet {
        MeasurementSet {
            series: self
                .series
                .iter()
                .map(|(k, s)| (k.clone(), s.prefix(n)))
                .collect(),
        }
    }

    pub fn map_series<F>(&self, mut f: F) -> MeasurementSet
    where
        F: FnMut(&MeasurementSeries) -> MeasurementSeries,
    {
        MeasurementSet {
            series: self.series.iter().map(|(k, s)| (k.clone(), f(s))).collect(),
        }
    }
}

/// Counters collected while reading a CSV stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub skipped: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub missing_p: usize,
    pub missing_q: usize,
    pub missing_v: usize,
}

pub const CSV_HEADER: [&str; 6] = ["timestamp", "node", "phase", "p_w", "q_var", "v_v"];

/// Parses an integer epoch-seconds value or an ISO-8601 date-time
/// (RFC 3339 with offset, or naive `YYYY-MM-DDTHH:MM:SS[.f]` taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

enum Field {
    Value(f64),
    Missing,
    Bad,
}

/// Plain decimal with `.` as separator; empty or `NaN` means missing.
fn parse_field(s: &str) -> Field {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Field::Missing;
    }
    if s.contains(',') || s.contains('_') {
        return Field::Bad;
    }
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Field::Value(x),
        _ => Field::Bad,
    }
}

/// Reads the measurement CSV format, grouping rows by (node, phase).
pub fn ingest_csv<R: Read>(stream: R) -> Result<(MeasurementSet, IngestReport), MeasurementError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let headers = reader
        .headers()
        .map_err(|e| MeasurementError::UnreadableStream(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let cols: Vec<usize> = CSV_HEADER
        .iter()
        .map(|h| col(h))
        .collect::<Option<_>>()
        .ok_or_else(|| {
            MeasurementError::UnreadableStream(format!(
                "expected header {}",
                CSV_HEADER.join(",")
            ))
        })?;

    let mut report = IngestReport::default();
    let mut groups: BTreeMap<(NodeId, Phase), Vec<MeasurementSample>> = BTreeMap::new();
    for record in reader.records() {
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(csv_err) if csv_err.is_io_error() => {
                return Err(MeasurementError::UnreadableStream(csv_err.to_string()))
            }
            Err(_) => {
                report.malformed += 1;
                continue;
            }
        };
        let get = |i: usize| record.get(cols[i]);
        let (Some(ts), Some(node), Some(phase)) = (get(0), get(1), get(2)) else {
            report.malformed += 1;
            continue;
        };
        let (Some(ts), Some(phase)) = (parse_timestamp(ts), Phase::parse(phase)) else {
            report.malformed += 1;
            continue;
        };
        if node.is_empty() {
            report.malformed += 1;
            continue;
        }
        let mut values = [None; 3];
        let mut bad = false;
        for (k, slot) in values.iter_mut().enumerate() {
            match parse_field(get(3 + k).unwrap_or("")) {
                Field::Value(x) => *slot = Some(x),
                Field::Missing => {}
                Field::Bad => bad = true,
            }
        }
        if bad {
            report.malformed += 1;
            continue;
        }
        let [p, q, mut v] = values;
        if v.is_some_and(|v| v <= 0.0) {
            v = None;
        }
        report.missing_p += p.is_none() as usize;
        report.missing_q += q.is_none() as usize;
        report.missing_v += v.is_none() as usize;
        groups
            .entry((NodeId::new(node), phase))
            .or_default()
            .push(MeasurementSample::new(ts, p, q, v));
    }

    let mut set = MeasurementSet::new();
    for ((node, phase), samples) in groups {
        let (series, dropped) = MeasurementSeries::from_samples(node, phase, samples);
        report.duplicates += dropped;
        set.insert(series);
    }
    report.skipped = report.malformed + report.duplicates;
    if set.iter().all(|s| s.is_empty()) {
        return Err(MeasurementError::EmptyInput);
    }
    Ok((set, report))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the measurement CSV format. Rows are ordered by
/// (timestamp, node, phase).
pub fn write_csv<W: Write>(set: &MeasurementSet, out: W) -> std::io::Result<()> {
    let mut rows: Vec<(i64, &NodeId, Phase, &MeasurementSample)> = set
        .iter()
        .flat_map(|s| s.samples.iter().map(move |x| (x.timestamp, &s.node, s.phase, x)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (ts, node, phase, s) in rows {
        w.write_record([
            ts.to_string(),
            node.to_string(),
            phase.to_string(),
            fmt_opt(s.p()),
            fmt_opt(s.q()),
            fmt_opt(s.v()),
        ])?;
    }
    w.flush()
}

fn current_sign(p: f64) -> f64 {
    if p > 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Power-factor angle of a metered flow, in [-π/2, π/2].
///
/// The magnitude is `acos(|p| / |S|)`. The sign is positive when the
/// reactive power flows in the same direction as the signed current of
/// [`compute_current`] (inductive load behind the meter), which makes the
/// angle of a normally loaded inductive line positive. For `p != 0` this
/// equals `atan(q / p)`.
pub fn compute_phi(p: f64, q: f64) -> Result<f64, MeasurementError> {
    let s = p.hypot(q);
    if s == 0.0 {
        return Err(MeasurementError::ZeroApparentPower);
    }
    let mag = (p.abs() / s).min(1.0).acos();
    // reactive power in the direction of the signed current
    let q_along = -current_sign(p) * q;
    Ok(if q_along < 0.0 { -mag } else { mag })
}

/// Signed current magnitude `sign(-p) * |S| / v`; positive toward a
/// consuming node.
pub fn compute_current(p: f64, q: f64, v: f64) -> Result<f64, MeasurementError> {
    if v.is_nan() || v <= 0.0 {
        return Err(MeasurementError::NonPositiveVoltage(v));
    }
    Ok(current_sign(p) * p.hypot(q) / v)
}

/// Sample means consumed by the estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMoments {
    pub mean_v: f64,
    pub mean_i: f64,
    pub mean_phi: f64,
    pub mean_i_sq: f64,
    pub mean_p: f64,
    pub mean_q: f64,
    pub n_samples: usize,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
}

impl PhaseMoments {
    /// Moments with only the means set; used where a caller already has
    /// aggregated statistics.
    pub fn from_means(mean_v: f64, mean_i: f64, mean_phi: f64, n_samples: usize) -> Self {
        PhaseMoments {
            mean_v,
            mean_i,
            mean_phi,
            mean_i_sq: mean_i * mean_i,
            mean_p: 0.0,
            mean_q: 0.0,
            n_samples,
            first_timestamp: 0,
            last_timestamp: 0,
        }
    }
}

/// Means of V, signed I, Φ, I², P and Q over the samples where `v` comes
/// from `series_v` and `p`, `q` from `series_pq`, matched by timestamp.
/// Usually both are the same series. Samples with any field missing are
/// dropped; zero-power samples contribute I = 0 but no angle.
pub fn moments(series_v: &MeasurementSeries, series_pq: &MeasurementSeries) -> Result<PhaseMoments, MeasurementError> {
    if std::ptr::eq(series_v, series_pq) {
        return accumulate(series_v.samples.iter().filter_map(|s| {
            let (p, q, v) = s.all()?;
            Some((s.timestamp, p, q, v))
        }));
    }
    let pq = &series_pq.samples;
    accumulate(series_v.samples.iter().filter_map(|s| {
        let v = s.v()?;
        let k = pq.binary_search_by_key(&s.timestamp, |x| x.timestamp).ok()?;
        Some((s.timestamp, pq[k].p()?, pq[k].q()?, v))
    }))
}

fn accumulate<I>(rows: I) -> Result<PhaseMoments, MeasurementError>
where
    I: Iterator<Item = (i64, f64, f64, f64)>,
{
    let (mut sv, mut si, mut si2, mut sp, mut sq, mut sphi) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut n, mut n_phi) = (0usize, 0usize);
    let (mut first, mut last) = (i64::MAX, i64::MIN);
    for (ts, p, q, v) in rows {
        let i = compute_current(p, q, v)?;
        sv += v;
        si += i;
        si2 += i * i;
        sp += p;
        sq += q;
        if let Ok(phi) = compute_phi(p, q) {
            sphi += phi;
            n_phi += 1;
        }
        n += 1;
        first = first.min(ts);
        last = last.max(ts);
    }
    if n == 0 {
        return Err(MeasurementError::InsufficientData);
    }
    let nf = n as f64;
    Ok(PhaseMoments {
        mean_v: sv / nf,
        mean_i: si / nf,
        mean_phi: if n_phi > 0 { sphi / n_phi as f64 } else { 0.0 },
        mean_i_sq: si2 / nf,
        mean_p: sp / nf,
        mean_q: sq / nf,
        n_samples: n,
        first_timestamp: first,
        last_timestamp: last,
    })
}

/// Mean of `(v_i - v_j)^2` over sample pairs matched to the nearest
/// timestamp within `max_skew_s`. Returns the mean and pair count.
pub fn mean_square_drop(
    series_i: &MeasurementSeries,
    series_j: &MeasurementSeries,
    max_skew_s: i64,
) -> Result<(f64, usize), MeasurementError> {
    let vi: Vec<(i64, f64)> = series_i
        .samples
        .iter()
        .filter_map(|s| Some((s.timestamp, s.v()?)))
        .collect();
    if vi.is_empty() {
        return Err(MeasurementError::InsufficientData);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    let mut k = 0usize;
    for s in &series_j.samples {
        let Some(vj) = s.v() else { continue };
        while k + 1 < vi.len() && (vi[k + 1].0 - s.timestamp).abs() <= (vi[k].0 - s.timestamp).abs() {
            k += 1;
        }
        if (vi[k].0 - s.timestamp).abs() <= max_skew_s {
            let d = vi[k].1 - vj;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MeasurementError::InsufficientData);
    }
    Ok((sum / n as f64, n))
}
