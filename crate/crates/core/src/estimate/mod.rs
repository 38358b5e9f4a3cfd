//! Per-line, per-phase impedance estimation.
//!
//! Each line is handled by the procedure matching its sensor case:
//!
//! | case | sensors        | result                                   |
//! |------|----------------|------------------------------------------|
//! | 1    | parent + child | magnitude and angle ([`Quality::Exact`]) |
//! | 2    | child only     | `[0, z_upper]` and angle ([`Quality::Bounded`]) |
//! | 3    | parent only    | equivalent impedance incl. downstream load |
//! | 4    | neither        | share of a measured ancestor's equivalent |
//!
//! [`estimate_all`] runs them in dependency order: cases 1 and 2 first,
//! then case 3 (which reads their results), then case 4 (which reads
//! case 3). The [`EstimationContext`] is only extended between these
//! stages.

mod cable;
mod cases;

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{decompose, LineCase, LineClassification};
use crate::measurement::{mean_square_drop, moments, MeasurementSet, PhaseMoments};
use crate::topology::{GridTopology, Line, NodeId, Phase};

pub use cable::{cable_inductance, BenchmarkLine, CableError};
pub use cases::{
    case1_impedance, case1_second_moment, case2_upper_bound, equivalent_impedance, estimate_case1,
    estimate_case2, estimate_case3, estimate_case4, Case4Outcome, EquivalentParts,
};

/// Admissible node-voltage range used to bound case-2 lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleVoltageBand {
    pub v_nominal: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl FeasibleVoltageBand {
    /// ±5 % around nominal.
    pub fn new(v_nominal: f64) -> Result<Self, EstimateError> {
        Self::with_limits(v_nominal, 0.95 * v_nominal, 1.05 * v_nominal)
    }

    pub fn with_limits(v_nominal: f64, v_min: f64, v_max: f64) -> Result<Self, EstimateError> {
        if !(v_nominal > 0.0 && v_min < v_max && v_min.is_finite() && v_max.is_finite()) {
            return Err(EstimateError::InvalidBand { v_min, v_max });
        }
        Ok(FeasibleVoltageBand { v_nominal, v_min, v_max })
    }
}

/// How case-1 magnitudes (and case-3 loss terms) use the current moments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorVariant {
    /// `Z = (E[V_i] - E[V_j]) / E[I]`, losses from `E[I]^2`.
    #[default]
    FirstMoment,
    /// `Z = sqrt(E[(V_i - V_j)^2] / E[I^2])` over time-paired samples,
    /// losses from `E[I^2]`.
    SecondMoment,
}

/// How case-3 residual power is turned into an impedance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case3Form {
    /// `R = V^2/P`, `X = V^2/Q`, `Z = sqrt(R^2 + X^2)`, `δ = atan(X/R)`.
    #[default]
    Literal,
    /// `Z = V^2 / S*`: the series impedance that draws the residual power.
    ParallelEquivalent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub band: FeasibleVoltageBand,
    /// Minimum usable samples per (node, phase).
    pub min_samples: usize,
    /// Minimum time overlap of the two observation windows of a case-1
    /// line, as a fraction of the shorter window.
    pub min_window_overlap: f64,
    pub variant: EstimatorVariant,
    pub case3_form: Case3Form,
    /// Pairing tolerance for the second-moment variant.
    pub pairing_skew_s: i64,
}

impl EstimatorConfig {
    pub fn new(band: FeasibleVoltageBand) -> Self {
        EstimatorConfig {
            band,
            min_samples: 100,
            min_window_overlap: 0.5,
            variant: EstimatorVariant::FirstMoment,
            case3_form: Case3Form::Literal,
            pairing_skew_s: 150,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Exact,
    Bounded,
    EquivalentLoad,
    Shared,
    Undetermined,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Exact => "exact",
            Quality::Bounded => "bounded",
            Quality::EquivalentLoad => "equivalent_load",
            Quality::Shared => "shared",
            Quality::Undetermined => "undetermined",
        }
    }

    pub fn parse(s: &str) -> Option<Quality> {
        Some(match s {
            "exact" => Quality::Exact,
            "bounded" => Quality::Bounded,
            "equivalent_load" => Quality::EquivalentLoad,
            "shared" => Quality::Shared,
            "undetermined" => Quality::Undetermined,
            _ => return None,
        })
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why an estimate is undetermined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    InsufficientData,
    ZeroMeanCurrent,
    SignConventionSuspect,
    WindowMismatch,
    VoltageOutsideBand,
    ZeroResidualPower,
    NoMeasuredAncestor,
    AncestorUndetermined,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::InsufficientData => "insufficient_data",
            Reason::ZeroMeanCurrent => "zero_mean_current",
            Reason::SignConventionSuspect => "sign_convention_suspect",
            Reason::WindowMismatch => "window_mismatch",
            Reason::VoltageOutsideBand => "voltage_outside_band",
            Reason::ZeroResidualPower => "zero_residual_power",
            Reason::NoMeasuredAncestor => "no_measured_ancestor",
            Reason::AncestorUndetermined => "ancestor_undetermined",
        }
    }

    pub fn parse(s: &str) -> Option<Reason> {
        [
            Reason::InsufficientData,
            Reason::ZeroMeanCurrent,
            Reason::SignConventionSuspect,
            Reason::WindowMismatch,
            Reason::VoltageOutsideBand,
            Reason::ZeroResidualPower,
            Reason::NoMeasuredAncestor,
            Reason::AncestorUndetermined,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("not enough usable samples")]
    InsufficientData,
    #[error("mean current is zero")]
    ZeroMeanCurrent,
    #[error("negative magnitude {z_raw} suggests a sign-convention error")]
    SignConventionSuspect { z_raw: f64, delta: f64 },
    #[error("observation windows overlap by only {0:.3}")]
    WindowMismatch(f64),
    #[error("mean child voltage lies outside the feasible band")]
    VoltageOutsideBand { delta: f64 },
    #[error("residual power is zero")]
    ZeroResidualPower(Box<EquivalentParts>),
    #[error("no measured ancestor")]
    NoMeasuredAncestor,
    #[error("ancestor equivalent impedance is undetermined")]
    AncestorUndetermined,
    #[error("invalid voltage band [{v_min}, {v_max}]")]
    InvalidBand { v_min: f64, v_max: f64 },
}

impl EstimateError {
    pub fn reason(&self) -> Reason {
        match self {
            EstimateError::InsufficientData | EstimateError::InvalidBand { .. } => Reason::InsufficientData,
            EstimateError::ZeroMeanCurrent => Reason::ZeroMeanCurrent,
            EstimateError::SignConventionSuspect { .. } => Reason::SignConventionSuspect,
            EstimateError::WindowMismatch(_) => Reason::WindowMismatch,
            EstimateError::VoltageOutsideBand { .. } => Reason::VoltageOutsideBand,
            EstimateError::ZeroResidualPower(_) => Reason::ZeroResidualPower,
            EstimateError::NoMeasuredAncestor => Reason::NoMeasuredAncestor,
            EstimateError::AncestorUndetermined => Reason::AncestorUndetermined,
        }
    }
}

/// Result for one (line, phase).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceEstimate {
    pub line: Line,
    pub phase: Phase,
    pub case: LineCase,
    /// Magnitude in ohm. For undetermined case-1 results flagged
    /// `SignConventionSuspect` this holds the raw negative value.
    pub z_mag: Option<f64>,
    /// Angle in radians, within (-π/2, π/2].
    pub delta: Option<f64>,
    pub z_lower: Option<f64>,
    pub z_upper: Option<f64>,
    pub quality: Quality,
    pub n_samples_used: usize,
    pub reason: Option<Reason>,
    /// Raw residual powers and R/X components of case-3 results.
    pub equivalent: Option<EquivalentParts>,
}

impl ImpedanceEstimate {
    pub(crate) fn blank(line: &Line, phase: Phase, case: LineCase, quality: Quality) -> Self {
        ImpedanceEstimate {
            line: line.clone(),
            phase,
            case,
            z_mag: None,
            delta: None,
            z_lower: None,
            z_upper: None,
            quality,
            n_samples_used: 0,
            reason: None,
            equivalent: None,
        }
    }

    pub fn undetermined(line: &Line, phase: Phase, case: LineCase, err: &EstimateError) -> Self {
        let mut e = Self::blank(line, phase, case, Quality::Undetermined);
        e.reason = Some(err.reason());
        match err {
            EstimateError::SignConventionSuspect { z_raw, delta } => {
                e.z_mag = Some(*z_raw);
                e.delta = Some(*delta);
            }
            EstimateError::VoltageOutsideBand { delta } => e.delta = Some(*delta),
            EstimateError::ZeroResidualPower(parts) => e.equivalent = Some((**parts).clone()),
            _ => {}
        }
        e
    }

    pub fn is_determined(&self) -> bool {
        self.quality != Quality::Undetermined
    }
}

/// Maps an angle into (-π/2, π/2].
pub fn reduce_angle(delta: f64) -> f64 {
    let mut d = delta;
    while d > FRAC_PI_2 {
        d -= std::f64::consts::PI;
    }
    while d <= -FRAC_PI_2 {
        d += std::f64::consts::PI;
    }
    d
}

/// One case-4 sharing step: the equivalent impedance found at the measured
/// ancestor's case-3 line split over the `n_branch` lines of the path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingGroup {
    pub phase: Phase,
    /// Case-3 line at the measured ancestor.
    pub head_line: String,
    pub equivalent_z: f64,
    pub delta: f64,
    pub n_branch: usize,
    /// (line id, assigned magnitude) for every line on the path, the head
    /// line included.
    pub shares: Vec<(String, f64)>,
}

impl SharingGroup {
    pub fn share_sum(&self) -> f64 {
        self.shares.iter().map(|(_, z)| z).sum()
    }
}

/// Read-only inputs and completed results visible to an estimator.
#[derive(Debug, Default)]
pub struct EstimationContext {
    moments: HashMap<(NodeId, Phase), PhaseMoments>,
    estimates: HashMap<(String, Phase), ImpedanceEstimate>,
}

impl EstimationContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_moments(&mut self, node: NodeId, phase: Phase, m: PhaseMoments) {
        self.moments.insert((node, phase), m);
    }

    pub fn insert_estimate(&mut self, e: ImpedanceEstimate) {
        self.estimates.insert((e.line.line_id.clone(), e.phase), e);
    }

    pub fn moments(&self, node: &NodeId, phase: Phase) -> Option<&PhaseMoments> {
        self.moments.get(&(node.clone(), phase))
    }

    pub fn estimate(&self, line_id: &str, phase: Phase) -> Option<&ImpedanceEstimate> {
        self.estimates.get(&(line_id.to_string(), phase))
    }
}

/// Everything produced by [`estimate_all`].
#[derive(Clone, Debug)]
pub struct EstimationRun {
    pub classifications: Vec<LineClassification>,
    /// One entry per (line, phase), in classification order then phase.
    pub estimates: Vec<ImpedanceEstimate>,
    pub sharing_groups: Vec<SharingGroup>,
}

impl EstimationRun {
    pub fn get(&self, line_id: &str, phase: Phase) -> Option<&ImpedanceEstimate> {
        self.estimates
            .iter()
            .find(|e| e.line.line_id == line_id && e.phase == phase)
    }

    pub fn determined_count(&self) -> usize {
        self.estimates.iter().filter(|e| e.is_determined()).count()
    }
}

fn window_overlap(a: &PhaseMoments, b: &PhaseMoments) -> f64 {
    let start = a.first_timestamp.max(b.first_timestamp);
    let end = a.last_timestamp.min(b.last_timestamp);
    let shorter = (a.last_timestamp - a.first_timestamp).min(b.last_timestamp - b.first_timestamp);
    if end < start {
        return 0.0;
    }
    if shorter <= 0 {
        return 1.0;
    }
    ((end - start) as f64 / shorter as f64).min(1.0)
}

/// Decomposes the grid and estimates every (line, phase). Failures are
/// reported as undetermined entries; the run itself never fails.
pub fn estimate_all(t: &GridTopology, series: &MeasurementSet, config: &EstimatorConfig) -> EstimationRun {
    let classifications = decompose(t);
    let mut ctx = EstimationContext::new();

    for node in t.nodes().iter().filter(|n| t.is_measured(n)) {
        for phase in Phase::ALL {
            let m = series
                .get(node, phase)
                .and_then(|s| moments(s, s).ok())
                .filter(|m| m.n_samples >= config.min_samples);
            if let Some(m) = m {
                ctx.insert_moments(node.clone(), phase, m);
            }
        }
    }
    let data = |ctx: &EstimationContext, n: &NodeId, ph: Phase| -> Result<PhaseMoments, EstimateError> {
        ctx.moments(n, ph).copied().ok_or(EstimateError::InsufficientData)
    };

    let mut results: HashMap<(String, Phase), ImpedanceEstimate> = HashMap::new();

    // cases 1 and 2: independent per line
    let mut stage: Vec<ImpedanceEstimate> = Vec::new();
    for lc in &classifications {
        let line = &lc.line;
        for phase in Phase::ALL {
            let outcome = match lc.case {
                LineCase::Case1 => (|| {
                    let mi = data(&ctx, &line.parent, phase)?;
                    let mj = data(&ctx, &line.child, phase)?;
                    let overlap = window_overlap(&mi, &mj);
                    if overlap < config.min_window_overlap {
                        return Err(EstimateError::WindowMismatch(overlap));
                    }
                    match config.variant {
                        EstimatorVariant::FirstMoment => estimate_case1(line, phase, &mi, &mj),
                        EstimatorVariant::SecondMoment => {
                            let (si, sj) = match (series.get(&line.parent, phase), series.get(&line.child, phase)) {
                                (Some(si), Some(sj)) => (si, sj),
                                _ => return Err(EstimateError::InsufficientData),
                            };
                            let (msd, pairs) = mean_square_drop(si, sj, config.pairing_skew_s)
                                .map_err(|_| EstimateError::InsufficientData)?;
                            if pairs < config.min_samples {
                                return Err(EstimateError::InsufficientData);
                            }
                            let (z, delta) = case1_second_moment(msd, &mj)?;
                            let mut e = ImpedanceEstimate::blank(line, phase, LineCase::Case1, Quality::Exact);
                            e.z_mag = Some(z);
                            e.delta = Some(delta);
                            e.n_samples_used = pairs;
                            Ok(e)
                        }
                    }
                })(),
                LineCase::Case2 => {
                    data(&ctx, &line.child, phase).and_then(|mj| estimate_case2(line, phase, &mj, &config.band))
                }
                _ => continue,
            };
            stage.push(outcome.unwrap_or_else(|e| ImpedanceEstimate::undetermined(line, phase, lc.case, &e)));
        }
    }
    for e in stage.drain(..) {
        ctx.insert_estimate(e.clone());
        results.insert((e.line.line_id.clone(), e.phase), e);
    }

    // case 3 reads cases 1 and 2
    for lc in classifications.iter().filter(|lc| lc.case == LineCase::Case3) {
        for phase in Phase::ALL {
            let e = estimate_case3(&lc.line, phase, t, &ctx, config)
                .unwrap_or_else(|err| ImpedanceEstimate::undetermined(&lc.line, phase, lc.case, &err));
            stage.push(e);
        }
    }
    for e in stage.drain(..) {
        ctx.insert_estimate(e.clone());
        results.insert((e.line.line_id.clone(), e.phase), e);
    }

    // case 4 reads case 3; the deepest unassigned line starts each walk
    let mut groups = Vec::new();
    for lc in classifications.iter().filter(|lc| lc.case == LineCase::Case4) {
        for phase in Phase::ALL {
            if results.contains_key(&(lc.line.line_id.clone(), phase)) {
                continue;
            }
            match estimate_case4(&lc.line, phase, t, &ctx) {
                Ok(outcome) => {
                    for e in outcome.estimates {
                        results.entry((e.line.line_id.clone(), phase)).or_insert(e);
                    }
                    groups.push(outcome.group);
                }
                Err((err, path)) => {
                    for line in path {
                        results
                            .entry((line.line_id.clone(), phase))
                            .or_insert_with(|| ImpedanceEstimate::undetermined(&line, phase, LineCase::Case4, &err));
                    }
                }
            }
        }
    }

    let estimates = classifications
        .iter()
        .flat_map(|lc| Phase::ALL.into_iter().map(move |ph| (lc, ph)))
        .map(|(lc, ph)| {
            results
                .remove(&(lc.line.line_id.clone(), ph))
                .unwrap_or_else(|| ImpedanceEstimate::undetermined(&lc.line, ph, lc.case, &EstimateError::InsufficientData))
        })
        .collect();
    EstimationRun {
        classifications,
        estimates,
        sharing_groups: groups,
    }
}

#[cfg(test)]
mod tests;
