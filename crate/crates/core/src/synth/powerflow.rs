//! Backward/forward sweep for a radial feeder, one phase at a time.
//!
//! Full complex phasors are kept; nothing here assumes small angles.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::topology::{GridTopology, IndexedTree};

/// Voltage-dependent load at a node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LoadModel {
    /// Fixed consumed power `p_w + j q_var`.
    ConstantPower { p_w: f64, q_var: f64 },
    /// Fixed current phasor drawn from the node (absolute angle).
    ConstantCurrent { re_a: f64, im_a: f64 },
    /// Fixed shunt impedance to ground.
    ConstantImpedance { r_ohm: f64, x_ohm: f64 },
}

impl LoadModel {
    pub fn none() -> Self {
        LoadModel::ConstantPower { p_w: 0.0, q_var: 0.0 }
    }

    /// Same model with its demand scaled by `k`.
    pub fn scaled(self, k: f64) -> Self {
        match self {
            LoadModel::ConstantPower { p_w, q_var } => LoadModel::ConstantPower {
                p_w: p_w * k,
                q_var: q_var * k,
            },
            LoadModel::ConstantCurrent { re_a, im_a } => LoadModel::ConstantCurrent {
                re_a: re_a * k,
                im_a: im_a * k,
            },
            LoadModel::ConstantImpedance { r_ohm, x_ohm } => LoadModel::ConstantImpedance {
                r_ohm: r_ohm / k,
                x_ohm: x_ohm / k,
            },
        }
    }

    fn current(&self, v: Complex64) -> Complex64 {
        match *self {
            LoadModel::ConstantPower { p_w, q_var } => {
                if p_w == 0.0 && q_var == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    (Complex64::new(p_w, q_var) / v).conj()
                }
            }
            LoadModel::ConstantCurrent { re_a, im_a } => Complex64::new(re_a, im_a),
            LoadModel::ConstantImpedance { r_ohm, x_ohm } => v / Complex64::new(r_ohm, x_ohm),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    /// Convergence threshold on the largest voltage change between sweeps, V.
    pub tolerance_v: f64,
    pub max_iterations: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tolerance_v: 1e-10,
            max_iterations: 100,
        }
    }
}

/// Converged state of one phase.
#[derive(Clone, Debug)]
pub struct PhaseSolution {
    /// Node voltages, indexed like the topology.
    pub voltages: Vec<Complex64>,
    /// Current entering each node from upstream (parent line, or the source
    /// for the root), flowing parent → child.
    pub currents: Vec<Complex64>,
    pub iterations: usize,
}

/// Flow through one line, parent → child.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFlow {
    pub current: Complex64,
    pub s_send: Complex64,
    pub s_recv: Complex64,
}

impl PhaseSolution {
    /// Complex power entering node `i` from upstream.
    pub fn injection(&self, i: usize) -> Complex64 {
        self.voltages[i] * self.currents[i].conj()
    }

    pub fn line_flow(&self, tree: &IndexedTree<'_>, child: usize) -> Option<LineFlow> {
        let parent = tree.parent(child)?;
        let current = self.currents[child];
        Some(LineFlow {
            current,
            s_send: self.voltages[parent] * current.conj(),
            s_recv: self.voltages[child] * current.conj(),
        })
    }
}

/// Solves one phase. `z[i]` is the impedance of the line feeding node `i`
/// (ignored for the root); `loads[i]` is the load at node `i`.
pub fn sweep(
    topo: &GridTopology,
    z: &[Complex64],
    loads: &[LoadModel],
    source: Complex64,
    opts: &SweepOptions,
) -> Result<PhaseSolution, SynthError> {
    let tree = topo.indexed();
    let n = tree.len();
    debug_assert_eq!(z.len(), n);
    debug_assert_eq!(loads.len(), n);
    let order = tree.order();
    let mut v = vec![source; n];
    let mut branch = vec![Complex64::new(0.0, 0.0); n];

    for iteration in 1..=opts.max_iterations {
        for i in 0..n {
            branch[i] = loads[i].current(v[i]);
        }
        for &i in order.iter().rev() {
            if let Some(p) = tree.parent(i) {
                let flow = branch[i];
                branch[p] += flow;
            }
        }
        let mut change: f64 = 0.0;
        v[tree.root()] = source;
        for &i in order {
            if let Some(p) = tree.parent(i) {
                let updated = v[p] - z[i] * branch[i];
                change = change.max((updated - v[i]).norm());
                v[i] = updated;
            }
        }
        if !change.is_finite() {
            break;
        }
        if change < opts.tolerance_v {
            return Ok(PhaseSolution {
                voltages: v,
                currents: branch,
                iterations: iteration,
            });
        }
    }
    Err(SynthError::NonConvergence {
        iterations: opts.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Line, NodeId};
    use std::collections::BTreeSet;

    fn two_bus() -> GridTopology {
        GridTopology::build(
            &[NodeId::from("R"), NodeId::from("J")],
            &[Line::new("RJ", "R", "J")],
            &"R".into(),
            &BTreeSet::new(),
        )
        .unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_impedance_keeps_root_voltage() {
        let t = two_bus();
        let j = t.indexed().index_of(&"J".into()).unwrap();
        let mut loads = vec![LoadModel::none(); 2];
        loads[j] = LoadModel::ConstantPower { p_w: 5000.0, q_var: 1000.0 };
        let sol = sweep(&t, &[c(0.0, 0.0); 2], &loads, c(230.0, 0.0), &SweepOptions::default()).unwrap();
        assert_eq!(sol.voltages[j], c(230.0, 0.0));
    }

    #[test]
    fn constant_current_ohms_law() {
        let t = two_bus();
        let j = t.indexed().index_of(&"J".into()).unwrap();
        let mut loads = vec![LoadModel::none(); 2];
        loads[j] = LoadModel::ConstantCurrent { re_a: 10.0, im_a: 0.0 };
        let z = vec![c(0.1, 0.0); 2];
        let sol = sweep(&t, &z, &loads, c(230.0, 0.0), &SweepOptions::default()).unwrap();
        assert!((sol.voltages[j] - c(229.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn constant_power_matches_quadratic_root() {
        let t = two_bus();
        let j = t.indexed().index_of(&"J".into()).unwrap();
        let mut loads = vec![LoadModel::none(); 2];
        loads[j] = LoadModel::ConstantPower { p_w: 2300.0, q_var: 0.0 };
        let z = vec![c(0.1, 0.0); 2];
        let sol = sweep(&t, &z, &loads, c(230.0, 0.0), &SweepOptions::default()).unwrap();
        // V (230 - V) / 0.1 = 2300  =>  V^2 - 230 V + 230 = 0, upper root
        let root = (230.0 + (230.0f64 * 230.0 - 4.0 * 230.0).sqrt()) / 2.0;
        assert!((sol.voltages[j].re - root).abs() < 1e-9);
        assert!(sol.voltages[j].im.abs() < 1e-12);
        assert!((root - 228.995_6).abs() < 1e-4);
    }

    #[test]
    fn infeasible_load_does_not_converge() {
        let t = two_bus();
        let j = t.indexed().index_of(&"J".into()).unwrap();
        let mut loads = vec![LoadModel::none(); 2];
        loads[j] = LoadModel::ConstantPower { p_w: 2e6, q_var: 0.0 };
        let z = vec![c(0.1, 0.0); 2];
        let err = sweep(&t, &z, &loads, c(230.0, 0.0), &SweepOptions::default()).unwrap_err();
        assert!(matches!(err, SynthError::NonConvergence { .. }));
    }
}
