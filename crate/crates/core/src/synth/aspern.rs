//! Generator for small urban low-voltage feeders with partial meter coverage.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, LineImpedance, LoadModel, ProfileParams, SimulationScenario, SynthError};
use crate::decompose::{decompose, CaseCounts};
use crate::estimate::{cable_inductance, BenchmarkLine};
use crate::topology::{GridTopology, Line, NodeId, Phase};

/// Four-core aluminium cable with a formation constant and geometry for the
/// inductance formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CableType {
    pub name: &'static str,
    pub r_ohm_per_km: f64,
    pub k_formation: f64,
    pub s_axial_mm: f64,
    pub d_conductor_mm: f64,
}

impl CableType {
    pub fn l_h_per_km(&self) -> f64 {
        cable_inductance(self.k_formation, self.s_axial_mm, self.d_conductor_mm).expect("catalog geometry") * 1e3
    }
}

pub const CABLE_CATALOG: [CableType; 3] = [
    CableType {
        name: "NAYY 4x150 trefoil",
        r_ohm_per_km: 0.206,
        k_formation: 0.05,
        s_axial_mm: 20.0,
        d_conductor_mm: 14.0,
    },
    CableType {
        name: "NAYY 4x150 flat",
        r_ohm_per_km: 0.206,
        k_formation: 0.0578,
        s_axial_mm: 22.0,
        d_conductor_mm: 14.0,
    },
    CableType {
        name: "NAYY 4x150 compact",
        r_ohm_per_km: 0.206,
        k_formation: 0.05,
        s_axial_mm: 19.0,
        d_conductor_mm: 14.0,
    },
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AspernConfig {
    pub nodes: usize,
    /// Fraction of nodes carrying a meter.
    pub coverage: f64,
    /// Per-phase deviation of each base load, as a fraction of the node's
    /// mean.
    pub imbalance: f64,
    pub days: f64,
    pub sample_interval_s: i64,
    pub noise_pct: f64,
    pub calibration_pct: f64,
    pub missing_rate: f64,
    pub v_nominal: f64,
    /// Uniform range of the mean base load per phase, W.
    pub load_w: (f64, f64),
    /// Mean and standard deviation of the load power-factor angle, rad.
    pub load_angle_rad: (f64, f64),
    /// Uniform range of line lengths, km.
    pub length_km: (f64, f64),
    pub profile: ProfileParams,
    pub seed: u64,
}

impl Default for AspernConfig {
    fn default() -> Self {
        AspernConfig {
            nodes: 15,
            coverage: 0.5,
            imbalance: 0.3,
            days: 30.0,
            sample_interval_s: 150,
            noise_pct: 0.01,
            calibration_pct: 0.0001,
            missing_rate: 0.01,
            v_nominal: 230.0,
            load_w: (400.0, 1500.0),
            load_angle_rad: (0.385, 0.02),
            length_km: (0.03, 0.12),
            profile: ProfileParams::default(),
            seed: 1,
        }
    }
}

impl AspernConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.nodes < 2 {
            return bad("at least two nodes are needed");
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad("coverage must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.imbalance) {
            return bad("imbalance must lie in [0, 1)");
        }
        if self.days.is_nan() || self.days <= 0.0 || self.sample_interval_s <= 0 {
            return bad("duration and sample interval must be positive");
        }
        if !(0.0 < self.load_w.0 && self.load_w.0 <= self.load_w.1) {
            return bad("load range must be positive and ordered");
        }
        if !(0.0 < self.length_km.0 && self.length_km.0 <= self.length_km.1) {
            return bad("length range must be positive and ordered");
        }
        if !(self.load_angle_rad.1 >= 0.0 && self.load_angle_rad.0.abs() < std::f64::consts::FRAC_PI_2) {
            return bad("load angle must lie in (-π/2, π/2) with non-negative spread");
        }
        if self.v_nominal.is_nan() || self.v_nominal <= 0.0 {
            return bad("nominal voltage must be positive");
        }
        if !(0.0..1.0).contains(&self.missing_rate) || self.noise_pct < 0.0 || self.calibration_pct < 0.0 {
            return bad("noise levels must be non-negative and missing_rate in [0, 1)");
        }
        Ok(())
    }
}

pub fn node_name(k: usize) -> NodeId {
    NodeId::new(format!("N{k:02}"))
}

/// Random tree: each new node extends the previous one about half the time,
/// otherwise attaches to any node with fewer than three children.
fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut children = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    for k in 1..n {
        let prev = k - 1;
        let parent = if rng.gen_bool(0.55) && children[prev] < 3 {
            prev
        } else {
            let open: Vec<usize> = (0..k).filter(|&i| children[i] < if i == 0 { 2 } else { 3 }).collect();
            *open.choose(rng).unwrap_or(&prev)
        };
        children[parent] += 1;
        edges.push((parent, k));
    }
    edges
}

fn placement(n: usize, coverage: f64, rng: &mut impl Rng) -> BTreeSet<NodeId> {
    let count = (coverage * n as f64).round() as usize;
    if count == 0 {
        return BTreeSet::new();
    }
    if count >= n {
        return (0..n).map(node_name).collect();
    }
    let mut others: Vec<usize> = (1..n).collect();
    others.shuffle(rng);
    std::iter::once(0)
        .chain(others.into_iter().take(count - 1))
        .map(node_name)
        .collect()
}

/// Builds a seeded feeder. With partial coverage the meter placement is
/// redrawn until the decomposition contains every line case.
pub fn make_aspern_like(config: &AspernConfig) -> Result<SimulationScenario, SynthError> {
    config.validate()?;
    let n = config.nodes;
    let mut rng = stream_rng(config.seed, "aspern/topology");
    let names: Vec<NodeId> = (0..n).map(node_name).collect();

    let mut topology = None;
    'search: for _ in 0..32 {
        let edges = random_tree(n, &mut rng);
        let lines: Vec<Line> = edges
            .iter()
            .map(|&(p, c)| Line::new(format!("L{c:02}"), names[p].as_str(), names[c].as_str()))
            .collect();
        for _ in 0..64 {
            let measured = placement(n, config.coverage, &mut rng);
            let t = GridTopology::build(&names, &lines, &names[0], &measured)?;
            let partial = config.coverage > 0.0 && config.coverage < 1.0;
            let done = !partial || CaseCounts::of(&decompose(&t)).all_present();
            topology = Some(t);
            if done {
                break 'search;
            }
        }
    }
    let topology = topology.expect("at least one attempt");

    let mut lrng = stream_rng(config.seed, "aspern/lines");
    let mut true_impedances = BTreeMap::new();
    let mut benchmark = Vec::new();
    for line in topology.lines() {
        let cable = CABLE_CATALOG.choose(&mut lrng).expect("catalog");
        let length = lrng.gen_range(config.length_km.0..=config.length_km.1);
        let b = BenchmarkLine {
            line_id: line.line_id.clone(),
            r_ohm_per_km: cable.r_ohm_per_km,
            l_h_per_km: cable.l_h_per_km(),
            length_km: length,
        };
        let (z, delta) = b.impedance(50.0);
        for ph in Phase::ALL {
            true_impedances.insert((line.line_id.clone(), ph), LineImpedance { z_ohm: z, delta_rad: delta });
        }
        benchmark.push(b);
    }

    let mut prng = stream_rng(config.seed, "aspern/loads");
    let angle = Normal::new(config.load_angle_rad.0, config.load_angle_rad.1).expect("finite");
    let mut loads = BTreeMap::new();
    for node in names.iter().skip(1) {
        let mean = prng.gen_range(config.load_w.0..=config.load_w.1);
        for ph in Phase::ALL {
            let p = mean * (1.0 + config.imbalance * prng.gen_range(-1.0..=1.0));
            let phi: f64 = angle.sample(&mut prng);
            loads.insert(
                (node.clone(), ph),
                LoadModel::ConstantPower {
                    p_w: p,
                    q_var: p * phi.tan(),
                },
            );
        }
    }

    let mut crng = stream_rng(config.seed, "aspern/clocks");
    let clock_offsets = names
        .iter()
        .map(|n| (n.clone(), crng.gen_range(0..config.sample_interval_s)))
        .collect();

    let mut s = SimulationScenario::new(topology, true_impedances, loads, config.v_nominal);
    s.profile = config.profile;
    s.noise_pct = config.noise_pct;
    s.calibration_pct = config.calibration_pct;
    s.missing_rate = config.missing_rate;
    s.sample_interval_s = config.sample_interval_s;
    s.duration_s = (config.days * 86_400.0).round() as i64;
    s.clock_offsets = clock_offsets;
    s.seed = config.seed;
    s.benchmark = benchmark;
    s.validate()?;
    Ok(s)
}
