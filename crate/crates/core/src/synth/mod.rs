//! Ground-truth synthetic feeders: a phasor power flow and a sensor emulator
//! that writes the same measurement format the estimator reads.

mod aspern;
mod emulator;
mod powerflow;
mod profile;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::BenchmarkLine;
use crate::topology::{GridTopology, NodeId, Phase, TopologyError, TopologyFile};

pub use aspern::{node_name, make_aspern_like, AspernConfig, CableType, CABLE_CATALOG};
pub use emulator::{emulate_sensors, emulate_with};
pub use powerflow::{sweep, LineFlow, LoadModel, PhaseSolution, SweepOptions};
pub use profile::{LoadProfiles, ProfileParams};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("power flow did not converge after {iterations} sweeps")]
    NonConvergence { iterations: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{0}")]
    Io(String),
}

/// True series impedance of one line phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineImpedance {
    pub z_ohm: f64,
    pub delta_rad: f64,
}

impl LineImpedance {
    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.z_ohm, self.delta_rad)
    }
}

/// A complete, seeded description of a synthetic feeder and its sensors.
#[derive(Clone, Debug)]
pub struct SimulationScenario {
    pub topology: GridTopology,
    pub true_impedances: BTreeMap<(String, Phase), LineImpedance>,
    /// Base load per (node, phase); nodes without an entry draw nothing.
    pub loads: BTreeMap<(NodeId, Phase), LoadModel>,
    /// Time variation applied to every base load.
    pub profile: ProfileParams,
    pub v_nominal: f64,
    /// Root voltage magnitude; the root angle is zero.
    pub source_voltage: f64,
    pub frequency_hz: f64,
    /// Relative standard deviation of the per-sample multiplicative noise.
    pub noise_pct: f64,
    /// Relative standard deviation of a fixed per-meter, per-channel gain
    /// error, drawn once per scenario.
    pub calibration_pct: f64,
    pub missing_rate: f64,
    pub sample_interval_s: i64,
    pub duration_s: i64,
    pub start_epoch: i64,
    /// Per-node clock offsets in seconds. Measured nodes without an entry
    /// draw one uniformly from `[0, sample_interval_s)`.
    pub clock_offsets: BTreeMap<NodeId, i64>,
    pub seed: u64,
    /// Data-sheet parameters of the lines, when they come from a catalog.
    pub benchmark: Vec<BenchmarkLine>,
}

pub const DEFAULT_START_EPOCH: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

impl SimulationScenario {
    /// A noiseless scenario with constant loads and no clock offsets; fields
    /// are public for further adjustment.
    pub fn new(
        topology: GridTopology,
        true_impedances: BTreeMap<(String, Phase), LineImpedance>,
        loads: BTreeMap<(NodeId, Phase), LoadModel>,
        v_nominal: f64,
    ) -> Self {
        let clock_offsets = topology.nodes().iter().map(|n| (n.clone(), 0)).collect();
        SimulationScenario {
            topology,
            true_impedances,
            loads,
            profile: ProfileParams::constant(),
            v_nominal,
            source_voltage: v_nominal,
            frequency_hz: 50.0,
            noise_pct: 0.0,
            calibration_pct: 0.0,
            missing_rate: 0.0,
            sample_interval_s: 150,
            duration_s: 86_400,
            start_epoch: DEFAULT_START_EPOCH,
            clock_offsets,
            seed: 0,
            benchmark: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        for line in self.topology.lines() {
            for ph in Phase::ALL {
                match self.true_impedances.get(&(line.line_id.clone(), ph)) {
                    None => return bad(format!("no impedance for line {} phase {ph}", line.line_id)),
                    Some(z) if !(z.z_ohm > 0.0 && z.z_ohm.is_finite() && z.delta_rad.is_finite()) => {
                        return bad(format!("impedance of line {} phase {ph} must be positive", line.line_id))
                    }
                    _ => {}
                }
            }
        }
        for (node, _) in self.loads.keys() {
            if !self.topology.contains(node) {
                return bad(format!("load at unknown node {node}"));
            }
        }
        if !(self.noise_pct >= 0.0 && self.calibration_pct >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} outside [0, 1)", self.missing_rate));
        }
        if self.sample_interval_s <= 0 || self.duration_s < 0 {
            return bad("sample interval must be positive and duration non-negative".into());
        }
        if !(self.v_nominal > 0.0 && self.source_voltage > 0.0 && self.frequency_hz > 0.0) {
            return bad("voltages and frequency must be positive".into());
        }
        for (node, off) in &self.clock_offsets {
            if !self.topology.contains(node) {
                return bad(format!("clock offset for unknown node {node}"));
            }
            if *off < 0 {
                return bad(format!("negative clock offset for node {node}"));
            }
        }
        self.profile.validate()
    }

    /// Samples per measured node: `duration_s / sample_interval_s`.
    pub fn samples_per_node(&self) -> usize {
        (self.duration_s / self.sample_interval_s) as usize
    }

    /// `line_id,phase,z_ohm,delta_rad`, in topology line order.
    pub fn write_ground_truth<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["line_id", "phase", "z_ohm", "delta_rad"])?;
        for line in self.topology.lines() {
            for ph in Phase::ALL {
                if let Some(z) = self.true_impedances.get(&(line.line_id.clone(), ph)) {
                    w.write_record([
                        line.line_id.clone(),
                        ph.to_string(),
                        z.z_ohm.to_string(),
                        z.delta_rad.to_string(),
                    ])?;
                }
            }
        }
        w.flush()
    }

    /// `line_id,r_ohm_per_km,l_h_per_km,length_km` for catalog lines.
    pub fn write_benchmark<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["line_id", "r_ohm_per_km", "l_h_per_km", "length_km"])?;
        for b in &self.benchmark {
            w.write_record([
                b.line_id.clone(),
                b.r_ohm_per_km.to_string(),
                b.l_h_per_km.to_string(),
                b.length_km.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn to_file(&self) -> ScenarioFile {
        let mut lines: BTreeMap<String, [LineImpedance; 3]> = BTreeMap::new();
        for ((id, ph), z) in &self.true_impedances {
            lines
                .entry(id.clone())
                .or_insert([LineImpedance { z_ohm: 0.0, delta_rad: 0.0 }; 3])[ph.index()] = *z;
        }
        ScenarioFile {
            topology: self.topology.to_file(),
            impedances: lines
                .into_iter()
                .map(|(line_id, z)| ImpedanceRecord { line_id, a: z[0], b: z[1], c: z[2] })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|((node, phase), model)| LoadRecord {
                    node: node.clone(),
                    phase: *phase,
                    model: *model,
                })
                .collect(),
            profile: self.profile,
            v_nominal: self.v_nominal,
            source_voltage: Some(self.source_voltage),
            frequency_hz: self.frequency_hz,
            noise_pct: self.noise_pct,
            calibration_pct: self.calibration_pct,
            missing_rate: self.missing_rate,
            sample_interval_s: self.sample_interval_s,
            duration_s: self.duration_s,
            start_epoch: self.start_epoch,
            clock_offsets: self.clock_offsets.clone(),
            seed: self.seed,
            benchmark: self.benchmark.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImpedanceRecord {
    pub line_id: String,
    pub a: LineImpedance,
    pub b: LineImpedance,
    pub c: LineImpedance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadRecord {
    pub node: NodeId,
    pub phase: Phase,
    #[serde(flatten)]
    pub model: LoadModel,
}

fn default_interval() -> i64 {
    150
}

fn default_noise() -> f64 {
    0.01
}

fn default_frequency() -> f64 {
    50.0
}

fn default_start() -> i64 {
    DEFAULT_START_EPOCH
}

/// JSON scenario document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub topology: TopologyFile,
    pub impedances: Vec<ImpedanceRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub profile: ProfileParams,
    pub v_nominal: f64,
    #[serde(default)]
    pub source_voltage: Option<f64>,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default = "default_noise")]
    pub noise_pct: f64,
    #[serde(default)]
    pub calibration_pct: f64,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default = "default_interval")]
    pub sample_interval_s: i64,
    pub duration_s: i64,
    #[serde(default = "default_start")]
    pub start_epoch: i64,
    #[serde(default)]
    pub clock_offsets: BTreeMap<NodeId, i64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub benchmark: Vec<BenchmarkLine>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<ScenarioFile, SynthError> {
        serde_json::from_str(text).map_err(|e| SynthError::InvalidScenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ScenarioFile, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn build(&self) -> Result<SimulationScenario, SynthError> {
        let topology = self.topology.build()?;
        let mut true_impedances = BTreeMap::new();
        for rec in &self.impedances {
            if topology.line(&rec.line_id).is_none() {
                return Err(SynthError::InvalidScenario(format!("impedance for unknown line {}", rec.line_id)));
            }
            for (ph, z) in Phase::ALL.into_iter().zip([rec.a, rec.b, rec.c]) {
                true_impedances.insert((rec.line_id.clone(), ph), z);
            }
        }
        let loads = self.loads.iter().map(|l| ((l.node.clone(), l.phase), l.model)).collect();
        let scenario = SimulationScenario {
            topology,
            true_impedances,
            loads,
            profile: self.profile,
            v_nominal: self.v_nominal,
            source_voltage: self.source_voltage.unwrap_or(self.v_nominal),
            frequency_hz: self.frequency_hz,
            noise_pct: self.noise_pct,
            calibration_pct: self.calibration_pct,
            missing_rate: self.missing_rate,
            sample_interval_s: self.sample_interval_s,
            duration_s: self.duration_s,
            start_epoch: self.start_epoch,
            clock_offsets: self.clock_offsets.clone(),
            seed: self.seed,
            benchmark: self.benchmark.clone(),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Independent, reproducible RNG stream for `(seed, tag)`.
pub fn stream_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    // FNV-1a over seed and tag, then a splitmix finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    ChaCha8Rng::seed_from_u64(h)
}

/// Solved state of all three phases at one instant.
#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub phases: [PhaseSolution; 3],
}

impl PowerFlowSolution {
    pub fn voltage(&self, t: &GridTopology, node: &NodeId, phase: Phase) -> Option<Complex64> {
        let i = t.indexed().index_of(node)?;
        Some(self.phases[phase.index()].voltages[i])
    }

    /// Complex power entering `node` from upstream.
    pub fn injection(&self, t: &GridTopology, node: &NodeId, phase: Phase) -> Option<Complex64> {
        let i = t.indexed().index_of(node)?;
        Some(self.phases[phase.index()].injection(i))
    }

    pub fn line_flow(&self, t: &GridTopology, line_id: &str, phase: Phase) -> Option<LineFlow> {
        let tree = t.indexed();
        let child = tree.index_of(&t.line(line_id)?.child)?;
        self.phases[phase.index()].line_flow(&tree, child)
    }

    /// Largest voltage-angle difference across any line, any phase.
    pub fn max_angle_step(&self, t: &GridTopology) -> f64 {
        let tree = t.indexed();
        let mut worst: f64 = 0.0;
        for sol in &self.phases {
            for i in 0..tree.len() {
                if let Some(p) = tree.parent(i) {
                    let d = (sol.voltages[i] / sol.voltages[p]).arg();
                    worst = worst.max(d.abs());
                }
            }
        }
        worst
    }
}

/// A validated scenario with its load profiles realized.
pub struct Simulator<'a> {
    scenario: &'a SimulationScenario,
    profiles: LoadProfiles,
    z: [Vec<Complex64>; 3],
    base: [Vec<LoadModel>; 3],
    options: SweepOptions,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a SimulationScenario) -> Result<Self, SynthError> {
        scenario.validate()?;
        let t = &scenario.topology;
        let tree = t.indexed();
        let n = tree.len();
        let mut z: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); n]);
        let mut base: [Vec<LoadModel>; 3] = std::array::from_fn(|_| vec![LoadModel::none(); n]);
        for i in 0..n {
            for ph in Phase::ALL {
                if let Some(line) = tree.parent_line(i) {
                    z[ph.index()][i] = scenario.true_impedances[&(line.line_id.clone(), ph)].complex();
                }
                if let Some(l) = scenario.loads.get(&(tree.node(i).clone(), ph)) {
                    base[ph.index()][i] = *l;
                }
            }
        }
        let max_offset = scenario.clock_offsets.values().copied().max().unwrap_or(0).max(scenario.sample_interval_s);
        let profiles = LoadProfiles::generate(scenario, scenario.duration_s + max_offset);
        Ok(Simulator {
            scenario,
            profiles,
            z,
            base,
            options: SweepOptions::default(),
        })
    }

    pub fn scenario(&self) -> &SimulationScenario {
        self.scenario
    }

    /// Solves every phase at `t` seconds after the scenario start.
    pub fn solve(&self, t: i64) -> Result<PowerFlowSolution, SynthError> {
        let topo = &self.scenario.topology;
        let tree = topo.indexed();
        let source = Complex64::new(self.scenario.source_voltage, 0.0);
        let mut loads = vec![LoadModel::none(); tree.len()];
        let mut solve_phase = |ph: Phase| {
            for (i, slot) in loads.iter_mut().enumerate() {
                *slot = self.base[ph.index()][i].scaled(self.profiles.multiplier(i, ph, t));
            }
            sweep(topo, &self.z[ph.index()], &loads, source, &self.options)
        };
        Ok(PowerFlowSolution {
            phases: [solve_phase(Phase::A)?, solve_phase(Phase::B)?, solve_phase(Phase::C)?],
        })
    }
}

/// Solves the scenario at `t` seconds after its start.
pub fn solve_power_flow(scenario: &SimulationScenario, t: i64) -> Result<PowerFlowSolution, SynthError> {
    Simulator::new(scenario)?.solve(t)
}
