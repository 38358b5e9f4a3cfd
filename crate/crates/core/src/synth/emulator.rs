//! Sensor emulation: what an unsynchronized P/Q/|V| meter at each measured
//! node would have recorded.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream_rng, SimulationScenario, Simulator, SynthError};
use crate::measurement::{MeasurementSample, MeasurementSeries, MeasurementSet};
use crate::topology::{NodeId, Phase};

/// Runs the power flow and emulates every measured node.
pub fn emulate_sensors(scenario: &SimulationScenario) -> Result<MeasurementSet, SynthError> {
    emulate_with(&Simulator::new(scenario)?)
}

/// Clock offset of `node`: configured, or drawn from its own stream.
fn clock_offset(s: &SimulationScenario, node: &NodeId) -> i64 {
    match s.clock_offsets.get(node) {
        Some(off) => *off,
        None => stream_rng(s.seed, &format!("clock/{node}")).gen_range(0..s.sample_interval_s),
    }
}

/// Multiplicative factor `1 + ε`, `ε ~ N(0, sd²)`.
struct Channel {
    rng: rand_chacha::ChaCha8Rng,
    noise: Option<Normal<f64>>,
    gain: f64,
}

impl Channel {
    fn new(s: &SimulationScenario, tag: &str) -> Self {
        let gain = if s.calibration_pct > 0.0 {
            let mut rng = stream_rng(s.seed, &format!("gain/{tag}"));
            1.0 + Normal::new(0.0, s.calibration_pct).expect("finite").sample(&mut rng)
        } else {
            1.0
        };
        Channel {
            rng: stream_rng(s.seed, &format!("noise/{tag}")),
            noise: (s.noise_pct > 0.0).then(|| Normal::new(0.0, s.noise_pct).expect("finite")),
            gain,
        }
    }

    fn apply(&mut self, x: f64) -> f64 {
        let eps = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        x * (1.0 + eps) * self.gain
    }
}

/// Emulates all measured nodes of an already prepared simulator.
pub fn emulate_with(sim: &Simulator<'_>) -> Result<MeasurementSet, SynthError> {
    let s = sim.scenario();
    let topo = &s.topology;
    let tree = topo.indexed();
    let n = s.samples_per_node();

    // nodes sharing a clock offset share their power-flow solves
    let mut groups: BTreeMap<i64, Vec<NodeId>> = BTreeMap::new();
    for node in topo.nodes().iter().filter(|n| topo.is_measured(n)) {
        groups.entry(clock_offset(s, node)).or_default().push(node.clone());
    }

    let mut set = MeasurementSet::new();
    for (offset, nodes) in groups {
        let idx: Vec<usize> = nodes.iter().map(|n| tree.index_of(n).expect("measured node")).collect();
        // raw[node][phase] = (p, q, v) per sample
        let mut raw: Vec<[Vec<(f64, f64, f64)>; 3]> = nodes
            .iter()
            .map(|_| std::array::from_fn(|_| Vec::with_capacity(n)))
            .collect();
        for k in 0..n {
            let t = k as i64 * s.sample_interval_s + offset;
            let sol = sim.solve(t)?;
            for (slot, &i) in raw.iter_mut().zip(&idx) {
                for ph in Phase::ALL {
                    let phase = &sol.phases[ph.index()];
                    let s_in = phase.injection(i);
                    // metered power leaves the node toward its feeder
                    slot[ph.index()].push((-s_in.re, -s_in.im, phase.voltages[i].norm()));
                }
            }
        }
        for (node, per_phase) in nodes.iter().zip(raw) {
            for (ph, values) in Phase::ALL.into_iter().zip(per_phase) {
                let tag = format!("{node}/{ph}");
                let mut cp = Channel::new(s, &format!("{tag}/p"));
                let mut cq = Channel::new(s, &format!("{tag}/q"));
                let mut cv = Channel::new(s, &format!("{tag}/v"));
                let mut drop_rng = stream_rng(s.seed, &format!("missing/{tag}"));
                let mut samples = Vec::with_capacity(values.len());
                for (k, (p, q, v)) in values.into_iter().enumerate() {
                    // every channel advances even for dropped rows, so the
                    // noise sequence does not depend on the missing rate
                    let (p, q, v) = (cp.apply(p), cq.apply(q), cv.apply(v));
                    if s.missing_rate > 0.0 && drop_rng.gen::<f64>() < s.missing_rate {
                        continue;
                    }
                    let ts = s.start_epoch + k as i64 * s.sample_interval_s + offset;
                    samples.push(MeasurementSample::complete(ts, p, q, v));
                }
                set.insert(MeasurementSeries::from_samples(node.clone(), ph, samples).0);
            }
        }
    }
    Ok(set)
}
