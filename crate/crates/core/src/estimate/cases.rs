use serde::{Deserialize, Serialize};

use super::{
    reduce_angle, Case3Form, EstimateError, EstimationContext, EstimatorConfig, EstimatorVariant,
    FeasibleVoltageBand, ImpedanceEstimate, Quality, SharingGroup,
};
use crate::decompose::LineCase;
use crate::measurement::PhaseMoments;
use crate::topology::{GridTopology, Line, NodeId, Phase};

/// Magnitude and angle from first moments: the mean voltage drop over the
/// mean signed current, and the mean power-factor angle at the child.
pub fn case1_impedance(m_i: &PhaseMoments, m_j: &PhaseMoments) -> Result<(f64, f64), EstimateError> {
    if m_j.mean_i == 0.0 {
        return Err(EstimateError::ZeroMeanCurrent);
    }
    let z = (m_i.mean_v - m_j.mean_v) / m_j.mean_i;
    let delta = reduce_angle(m_j.mean_phi);
    if z < 0.0 {
        return Err(EstimateError::SignConventionSuspect { z_raw: z, delta });
    }
    Ok((z, delta))
}

/// `sqrt(E[(V_i - V_j)^2] / E[I^2])` with the same angle rule as case 1.
pub fn case1_second_moment(mean_sq_drop: f64, m_j: &PhaseMoments) -> Result<(f64, f64), EstimateError> {
    if m_j.mean_i_sq == 0.0 {
        return Err(EstimateError::ZeroMeanCurrent);
    }
    Ok(((mean_sq_drop / m_j.mean_i_sq).sqrt(), reduce_angle(m_j.mean_phi)))
}

pub fn estimate_case1(
    line: &Line,
    phase: Phase,
    m_i: &PhaseMoments,
    m_j: &PhaseMoments,
) -> Result<ImpedanceEstimate, EstimateError> {
    let (z, delta) = case1_impedance(m_i, m_j)?;
    let mut e = ImpedanceEstimate::blank(line, phase, LineCase::Case1, Quality::Exact);
    e.z_mag = Some(z);
    e.delta = Some(delta);
    e.n_samples_used = m_i.n_samples.min(m_j.n_samples);
    Ok(e)
}

/// Upper bound on the magnitude when the sending voltage is unknown but
/// inside `band`. Infinite when the mean current is zero.
pub fn case2_upper_bound(m_j: &PhaseMoments, band: &FeasibleVoltageBand) -> f64 {
    if m_j.mean_i > 0.0 {
        (band.v_max - m_j.mean_v) / m_j.mean_i
    } else if m_j.mean_i < 0.0 {
        (band.v_min - m_j.mean_v) / m_j.mean_i
    } else {
        f64::INFINITY
    }
}

pub fn estimate_case2(
    line: &Line,
    phase: Phase,
    m_j: &PhaseMoments,
    band: &FeasibleVoltageBand,
) -> Result<ImpedanceEstimate, EstimateError> {
    if m_j.n_samples == 0 {
        return Err(EstimateError::InsufficientData);
    }
    let delta = reduce_angle(m_j.mean_phi);
    let upper = case2_upper_bound(m_j, band);
    if upper < 0.0 {
        return Err(EstimateError::VoltageOutsideBand { delta });
    }
    let mut e = ImpedanceEstimate::blank(line, phase, LineCase::Case2, Quality::Bounded);
    e.z_lower = Some(0.0);
    e.z_upper = Some(upper);
    e.delta = Some(delta);
    e.n_samples_used = m_j.n_samples;
    Ok(e)
}

/// Intermediate values of an equivalent-impedance computation. Residual
/// powers keep their sign; a negative residual means net generation
/// downstream of the line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalentParts {
    pub v_mean: f64,
    pub p_residual: f64,
    pub q_residual: f64,
    pub r_raw: Option<f64>,
    pub x_raw: Option<f64>,
    pub n_branch: usize,
    pub z: Option<f64>,
    pub delta: Option<f64>,
}

/// Impedance that absorbs the residual power `p + jq` at voltage `v_mean`.
pub fn equivalent_impedance(
    v_mean: f64,
    p_residual: f64,
    q_residual: f64,
    form: Case3Form,
) -> Result<EquivalentParts, EstimateError> {
    let v2 = v_mean * v_mean;
    let mut parts = EquivalentParts {
        v_mean,
        p_residual,
        q_residual,
        r_raw: None,
        x_raw: None,
        n_branch: 1,
        z: None,
        delta: None,
    };
    let (r, x) = match form {
        Case3Form::Literal => {
            let r = (p_residual != 0.0).then(|| v2 / p_residual);
            let x = (q_residual != 0.0).then(|| v2 / q_residual);
            parts.r_raw = r;
            parts.x_raw = x;
            match (r, x) {
                (Some(r), Some(x)) => (r, x),
                _ => return Err(EstimateError::ZeroResidualPower(Box::new(parts))),
            }
        }
        Case3Form::ParallelEquivalent => {
            let s2 = p_residual * p_residual + q_residual * q_residual;
            if s2 == 0.0 {
                return Err(EstimateError::ZeroResidualPower(Box::new(parts)));
            }
            let (r, x) = (v2 * p_residual / s2, v2 * q_residual / s2);
            parts.r_raw = Some(r);
            parts.x_raw = Some(x);
            (r, x)
        }
    };
    parts.z = Some(r.hypot(x));
    parts.delta = Some(if r == 0.0 {
        std::f64::consts::FRAC_PI_2
    } else {
        reduce_angle((x / r).atan())
    });
    Ok(parts)
}

/// Sending-end power of an estimated line: its loss plus the power
/// delivered to the metered child. `None` unless the line is estimated and
/// the child has moments.
fn sending_power(
    line: &Line,
    phase: Phase,
    ctx: &EstimationContext,
    variant: EstimatorVariant,
) -> Option<(f64, f64)> {
    let est = ctx.estimate(&line.line_id, phase)?;
    let z = match est.quality {
        Quality::Exact => est.z_mag?,
        Quality::Bounded => est.z_lower?,
        _ => return None,
    };
    let delta = est.delta?;
    let m = ctx.moments(&line.child, phase)?;
    let i2 = match variant {
        EstimatorVariant::FirstMoment => m.mean_i * m.mean_i,
        EstimatorVariant::SecondMoment => m.mean_i_sq,
    };
    Some((i2 * z * delta.cos() - m.mean_p, i2 * z * delta.sin() - m.mean_q))
}

/// Known power leaving `node` into its already-estimated child lines.
fn lower_bound_below(
    t: &GridTopology,
    node: &NodeId,
    phase: Phase,
    ctx: &EstimationContext,
    variant: EstimatorVariant,
) -> (f64, f64) {
    let mut acc = (0.0, 0.0);
    for line in t.child_lines(node).expect("node of topology") {
        if let Some((p, q)) = sending_power(line, phase, ctx, variant) {
            acc.0 += p;
            acc.1 += q;
        }
    }
    acc
}

/// Equivalent impedance of a line whose parent is metered and child is not.
///
/// The power entering the parent, minus the known power leaving it through
/// estimated sibling lines and the known power below each unmeasured
/// branch, is shared equally among the unmeasured branches.
pub fn estimate_case3(
    line: &Line,
    phase: Phase,
    t: &GridTopology,
    ctx: &EstimationContext,
    config: &EstimatorConfig,
) -> Result<ImpedanceEstimate, EstimateError> {
    let m_i = ctx
        .moments(&line.parent, phase)
        .ok_or(EstimateError::InsufficientData)?;
    let variant = config.variant;

    let below_j = lower_bound_below(t, &line.child, phase, ctx, variant);
    let mut siblings = (0.0, 0.0);
    let mut n_branch = 1usize;
    for other in t.child_lines(&line.parent).expect("node of topology") {
        if other.line_id == line.line_id {
            continue;
        }
        match sending_power(other, phase, ctx, variant) {
            Some((p, q)) => {
                siblings.0 += p;
                siblings.1 += q;
            }
            None => {
                n_branch += 1;
                let (p, q) = lower_bound_below(t, &other.child, phase, ctx, variant);
                siblings.0 += p;
                siblings.1 += q;
            }
        }
    }

    // metered p, q leave the node, so the power entering it is their negation
    let n = n_branch as f64;
    let p_res = (-m_i.mean_p - siblings.0 - below_j.0) / n;
    let q_res = (-m_i.mean_q - siblings.1 - below_j.1) / n;
    let mut parts = equivalent_impedance(m_i.mean_v, p_res, q_res, config.case3_form).map_err(|e| match e {
        EstimateError::ZeroResidualPower(mut p) => {
            p.n_branch = n_branch;
            EstimateError::ZeroResidualPower(p)
        }
        other => other,
    })?;
    parts.n_branch = n_branch;

    let mut e = ImpedanceEstimate::blank(line, phase, LineCase::Case3, Quality::EquivalentLoad);
    e.z_mag = parts.z;
    e.delta = parts.delta;
    e.n_samples_used = m_i.n_samples;
    e.equivalent = Some(parts);
    Ok(e)
}

/// Result of one case-4 walk.
#[derive(Clone, Debug)]
pub struct Case4Outcome {
    /// Estimates for every case-4 line on the walked path, starting line first.
    pub estimates: Vec<ImpedanceEstimate>,
    pub group: SharingGroup,
}

/// Walks from `line` toward the root until a metered node is found, then
/// splits that node's case-3 equivalent impedance equally over the
/// `n_branch` lines of the path.
///
/// On failure the error is returned together with the case-4 lines walked,
/// which share the same fate.
pub fn estimate_case4(
    line: &Line,
    phase: Phase,
    t: &GridTopology,
    ctx: &EstimationContext,
) -> Result<Case4Outcome, (EstimateError, Vec<Line>)> {
    let mut path: Vec<Line> = vec![line.clone()];
    let mut node = line.parent.clone();
    let head = loop {
        let Some(up) = t.parent_line(&node).expect("node of topology") else {
            return Err((EstimateError::NoMeasuredAncestor, path));
        };
        if t.is_measured(&up.parent) {
            break up.clone();
        }
        node = up.parent.clone();
        path.push(up.clone());
    };

    let Some(head_est) = ctx.estimate(&head.line_id, phase).filter(|e| e.is_determined()) else {
        return Err((EstimateError::AncestorUndetermined, path));
    };
    let (Some(z), Some(delta)) = (head_est.z_mag, head_est.delta) else {
        return Err((EstimateError::AncestorUndetermined, path));
    };

    let n_branch = path.len() + 1;
    let share = z / n_branch as f64;
    let mut shares: Vec<(String, f64)> = path.iter().map(|l| (l.line_id.clone(), share)).collect();
    shares.push((head.line_id.clone(), share));

    let estimates = path
        .iter()
        .map(|l| {
            let mut e = ImpedanceEstimate::blank(l, phase, LineCase::Case4, Quality::Shared);
            e.z_mag = Some(share);
            e.delta = Some(delta);
            e.n_samples_used = head_est.n_samples_used;
            e
        })
        .collect();
    Ok(Case4Outcome {
        estimates,
        group: SharingGroup {
            phase,
            head_line: head.line_id.clone(),
            equivalent_z: z,
            delta,
            n_branch,
            shares,
        },
    })
}
