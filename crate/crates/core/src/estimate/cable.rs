use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CableError {
    #[error("non-positive cable geometry (spacing {s_mm} mm, diameter {d_mm} mm)")]
    NonPositiveGeometry { s_mm: f64, d_mm: f64 },
}

/// Per-phase cable inductance in H/m, self and mutual parts combined:
/// `(K + 0.2 ln(2S/d)) * 1e-6`, with axial spacing `S` and conductor
/// diameter `d` in mm and `K` the conductor formation constant.
pub fn cable_inductance(k_formation: f64, s_axial_mm: f64, d_conductor_mm: f64) -> Result<f64, CableError> {
    if !(s_axial_mm > 0.0 && d_conductor_mm > 0.0) {
        return Err(CableError::NonPositiveGeometry {
            s_mm: s_axial_mm,
            d_mm: d_conductor_mm,
        });
    }
    Ok((k_formation + 0.2 * (2.0 * s_axial_mm / d_conductor_mm).ln()) * 1e-6)
}

/// Data-sheet description of a line used as a comparison benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLine {
    pub line_id: String,
    pub r_ohm_per_km: f64,
    pub l_h_per_km: f64,
    pub length_km: f64,
}

impl BenchmarkLine {
    /// (|Z|, δ) at `frequency_hz`.
    pub fn impedance(&self, frequency_hz: f64) -> (f64, f64) {
        let r = self.r_ohm_per_km * self.length_km;
        let x = 2.0 * std::f64::consts::PI * frequency_hz * self.l_h_per_km * self.length_km;
        (r.hypot(x), x.atan2(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_term_vanishes_when_diameter_is_twice_spacing() {
        assert!((cable_inductance(0.5, 10.0, 20.0).unwrap() - 0.5e-6).abs() < 1e-18);
    }

    #[test]
    fn equal_spacing_and_diameter() {
        let l = cable_inductance(0.0, 7.0, 7.0).unwrap();
        assert!((l - 0.2 * 2f64.ln() * 1e-6).abs() < 1e-20);
        assert!((l - 1.386e-7).abs() < 1e-10);
    }

    #[test]
    fn continuous_toward_k() {
        let k = 0.05;
        let near = cable_inductance(k, 10.0, 20.0 - 1e-9).unwrap();
        assert!((near - k * 1e-6).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(cable_inductance(0.05, 0.0, 10.0).is_err());
        assert!(cable_inductance(0.05, 10.0, -1.0).is_err());
    }

    #[test]
    fn benchmark_impedance() {
        let b = BenchmarkLine {
            line_id: "x".into(),
            r_ohm_per_km: 0.3,
            l_h_per_km: 0.4 / (2.0 * std::f64::consts::PI * 50.0),
            length_km: 0.5,
        };
        let (z, d) = b.impedance(50.0);
        assert!((z - 0.25).abs() < 1e-12);
        assert!((d - (0.4f64 / 0.3).atan()).abs() < 1e-12);
    }
}
