//! Seeded load-variation profiles: a mean-reverting random walk times a
//! daily cycle, piecewise linear between knots.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, SimulationScenario, SynthError};
use crate::topology::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileParams {
    /// Knot spacing in seconds.
    pub step_s: i64,
    /// Standard deviation of the walk's innovation per knot.
    pub walk_sigma: f64,
    /// Fraction of the distance back to 1 recovered per knot.
    pub reversion: f64,
    /// Relative amplitude of the daily sinusoid.
    pub daily_amplitude: f64,
    /// Lower clamp on the combined multiplier.
    pub min_multiplier: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            step_s: 150,
            walk_sigma: 0.04,
            reversion: 0.02,
            daily_amplitude: 0.35,
            min_multiplier: 0.1,
        }
    }
}

impl ProfileParams {
    /// Loads fixed at their base value.
    pub fn constant() -> Self {
        ProfileParams {
            walk_sigma: 0.0,
            daily_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn is_constant(&self) -> bool {
        self.walk_sigma == 0.0 && self.daily_amplitude == 0.0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.step_s > 0
            && self.walk_sigma >= 0.0
            && (0.0..=1.0).contains(&self.reversion)
            && (0.0..1.0).contains(&self.daily_amplitude)
            && self.min_multiplier >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidScenario(format!("bad profile parameters {self:?}")))
        }
    }
}

/// Realized multipliers for every loaded (node, phase).
#[derive(Clone, Debug)]
pub struct LoadProfiles {
    params: ProfileParams,
    start_epoch: i64,
    /// Indexed by `node * 3 + phase`; `None` for constant or absent loads.
    walks: Vec<Option<Vec<f64>>>,
}

impl LoadProfiles {
    /// Covers `[0, horizon_s]` seconds after the scenario start.
    pub fn generate(scenario: &SimulationScenario, horizon_s: i64) -> Self {
        let p = scenario.profile;
        let tree = scenario.topology.indexed();
        let knots = (horizon_s.max(0) / p.step_s + 2) as usize;
        let mut walks = vec![None; tree.len() * 3];
        if p.walk_sigma > 0.0 {
            let noise = Normal::new(0.0, p.walk_sigma).expect("finite sigma");
            for i in 0..tree.len() {
                for ph in Phase::ALL {
                    if !scenario.loads.contains_key(&(tree.node(i).clone(), ph)) {
                        continue;
                    }
                    let mut rng = stream_rng(scenario.seed, &format!("profile/{}/{ph}", tree.node(i)));
                    let mut w = Vec::with_capacity(knots);
                    let mut x = 1.0;
                    for _ in 0..knots {
                        w.push(x);
                        x += p.reversion * (1.0 - x) + noise.sample(&mut rng);
                    }
                    walks[i * 3 + ph.index()] = Some(w);
                }
            }
        }
        LoadProfiles {
            params: p,
            start_epoch: scenario.start_epoch,
            walks,
        }
    }

    /// Demand multiplier for node index `node` at `t` seconds after start.
    pub fn multiplier(&self, node: usize, phase: Phase, t: i64) -> f64 {
        let p = &self.params;
        if p.is_constant() {
            return 1.0;
        }
        let day = ((self.start_epoch + t).rem_euclid(86_400)) as f64 / 86_400.0;
        let daily = 1.0 + p.daily_amplitude * (2.0 * std::f64::consts::PI * (day - 0.3)).sin();
        let walk = match &self.walks[node * 3 + phase.index()] {
            Some(w) => {
                let pos = t.max(0) as f64 / p.step_s as f64;
                let k = (pos.floor() as usize).min(w.len() - 2);
                let frac = pos - k as f64;
                w[k] + (w[k + 1] - w[k]) * frac
            }
            None => 1.0,
        };
        (daily * walk).max(p.min_multiplier)
    }
}
