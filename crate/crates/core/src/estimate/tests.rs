use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::measurement::{MeasurementSample, MeasurementSeries};
use crate::synth::{emulate_sensors, make_aspern_like, AspernConfig, LineImpedance, LoadModel, SimulationScenario};

fn m(v: f64, i: f64, phi: f64) -> PhaseMoments {
    PhaseMoments::from_means(v, i, phi, 1000)
}

fn topo(nodes: &[&str], lines: &[(&str, &str)], measured: &[&str]) -> GridTopology {
    let nodes: Vec<NodeId> = nodes.iter().map(|s| NodeId::from(*s)).collect();
    let lines: Vec<Line> = lines.iter().map(|(a, b)| Line::new(format!("{a}{b}"), *a, *b)).collect();
    let measured = measured.iter().map(|s| NodeId::from(*s)).collect();
    GridTopology::build(&nodes, &lines, &nodes[0], &measured).unwrap()
}

fn band() -> FeasibleVoltageBand {
    FeasibleVoltageBand::new(230.0).unwrap()
}

fn line(a: &str, b: &str) -> Line {
    Line::new(format!("{a}{b}"), a, b)
}

fn scenario(t: GridTopology, z: &[(&str, f64, f64)], loads: &[(&str, LoadModel)]) -> SimulationScenario {
    let mut imp = BTreeMap::new();
    for (id, zm, d) in z {
        for ph in Phase::ALL {
            imp.insert((id.to_string(), ph), LineImpedance { z_ohm: *zm, delta_rad: *d });
        }
    }
    let mut l = BTreeMap::new();
    for (node, model) in loads {
        for ph in Phase::ALL {
            l.insert((NodeId::from(*node), ph), *model);
        }
    }
    SimulationScenario::new(t, imp, l, 230.0)
}

fn pq(p: f64, angle: f64) -> LoadModel {
    LoadModel::ConstantPower {
        p_w: p,
        q_var: p * angle.tan(),
    }
}

// case 1

#[test]
fn case1_arithmetic() {
    let e = estimate_case1(&line("i", "j"), Phase::A, &m(230.0, 0.0, 0.0), &m(228.0, 4.0, 0.2)).unwrap();
    assert_eq!(e.z_mag, Some(0.5));
    assert_eq!(e.delta, Some(0.2));
    assert_eq!(e.quality, Quality::Exact);
    assert_eq!(e.case, LineCase::Case1);
}

#[test]
fn case1_equal_voltages_is_zero_length() {
    let (z, _) = case1_impedance(&m(230.0, 0.0, 0.0), &m(230.0, 3.0, 0.1)).unwrap();
    assert_eq!(z, 0.0);
}

#[test]
fn case1_errors() {
    assert_eq!(
        case1_impedance(&m(230.0, 0.0, 0.0), &m(228.0, 0.0, 0.2)),
        Err(EstimateError::ZeroMeanCurrent)
    );
    let err = case1_impedance(&m(228.0, 0.0, 0.0), &m(230.0, 4.0, 0.2)).unwrap_err();
    assert_eq!(err, EstimateError::SignConventionSuspect { z_raw: -0.5, delta: 0.2 });
    let u = ImpedanceEstimate::undetermined(&line("i", "j"), Phase::A, LineCase::Case1, &err);
    assert_eq!(u.z_mag, Some(-0.5));
    assert_eq!(u.reason, Some(Reason::SignConventionSuspect));
}

#[test]
fn case1_two_bus_recovery() {
    let t = topo(&["R", "J"], &[("R", "J")], &["R", "J"]);
    // constant load whose power-factor angle equals the line angle
    let mut s = scenario(t, &[("RJ", 0.10, 0.45)], &[("J", pq(2000.0, 0.45))]);
    s.duration_s = 150 * 200;
    let set = emulate_sensors(&s).unwrap();
    let run = estimate_all(&s.topology, &set, &EstimatorConfig::new(band()));
    for ph in Phase::ALL {
        let e = run.get("RJ", ph).unwrap();
        assert_eq!(e.quality, Quality::Exact);
        assert!((e.z_mag.unwrap() - 0.10).abs() / 0.10 < 0.01, "{:?}", e.z_mag);
        assert!((e.delta.unwrap() - 0.45).abs() < 0.01);
    }
}

// case 2

#[test]
fn case2_bounds() {
    let b = band();
    assert!((case2_upper_bound(&m(235.0, 5.0, 0.1), &b) - 1.3).abs() < 1e-12);
    assert!((case2_upper_bound(&m(225.0, -5.0, 0.1), &b) - 1.3).abs() < 1e-12);
    assert_eq!(case2_upper_bound(&m(225.0, 0.0, 0.1), &b), f64::INFINITY);
    let e = estimate_case2(&line("i", "j"), Phase::C, &m(235.0, 5.0, 0.1), &b).unwrap();
    assert_eq!(e.quality, Quality::Bounded);
    assert_eq!(e.z_lower, Some(0.0));
    assert_eq!(e.z_mag, None);
    assert_eq!(e.delta, Some(0.1));
}

#[test]
fn case2_outside_band() {
    let err = estimate_case2(&line("i", "j"), Phase::A, &m(245.0, 5.0, 0.1), &band()).unwrap_err();
    assert_eq!(err.reason(), Reason::VoltageOutsideBand);
}

#[test]
fn band_defaults_and_validation() {
    let b = band();
    assert!((b.v_min - 218.5).abs() < 1e-12);
    assert!((b.v_max - 241.5).abs() < 1e-12);
    assert!(FeasibleVoltageBand::with_limits(230.0, 240.0, 220.0).is_err());
    assert!(FeasibleVoltageBand::new(0.0).is_err());
}

// case 3

fn ctx_with(node: &str, mom: PhaseMoments) -> EstimationContext {
    let mut ctx = EstimationContext::new();
    for ph in Phase::ALL {
        ctx.insert_moments(node.into(), ph, mom);
    }
    ctx
}

#[test]
fn case3_zero_reactive_residual() {
    let t = topo(&["i", "j"], &[("i", "j")], &["i"]);
    let mut mi = m(230.0, 20.0, 0.0);
    mi.mean_p = -4600.0;
    mi.mean_q = 0.0;
    let ctx = ctx_with("i", mi);
    let cfg = EstimatorConfig::new(band());
    let err = estimate_case3(&line("i", "j"), Phase::A, &t, &ctx, &cfg).unwrap_err();
    let EstimateError::ZeroResidualPower(parts) = &err else {
        panic!("{err:?}")
    };
    assert!((parts.r_raw.unwrap() - 11.5).abs() < 1e-12);
    assert_eq!(parts.x_raw, None);
    let u = ImpedanceEstimate::undetermined(&line("i", "j"), Phase::A, LineCase::Case3, &err);
    assert_eq!(u.quality, Quality::Undetermined);
    assert_eq!(u.reason, Some(Reason::ZeroResidualPower));
}

#[test]
fn case3_literal_arithmetic() {
    let p = equivalent_impedance(230.0, -529.0, -529.0, Case3Form::Literal).unwrap();
    assert!((p.r_raw.unwrap() + 100.0).abs() < 1e-12);
    assert!((p.x_raw.unwrap() + 100.0).abs() < 1e-12);
    assert!((p.z.unwrap() - 141.421_356_237_309_5).abs() < 1e-9);
    assert!((p.delta.unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
}

#[test]
fn case3_parallel_form_is_series_combination() {
    // i measured and fed from a measured root; j an unmeasured leaf with a
    // shunt impedance load much larger than the line
    let t = topo(&["R", "i", "j"], &[("R", "i"), ("i", "j")], &["R", "i"]);
    let (zl, dl) = (0.05, 0.38);
    let load = LoadModel::ConstantImpedance { r_ohm: 20.0, x_ohm: 8.0 };
    let mut s = scenario(t, &[("Ri", 0.04, 0.38), ("ij", zl, dl)], &[("j", load)]);
    s.duration_s = 150 * 200;
    let set = emulate_sensors(&s).unwrap();
    let mut cfg = EstimatorConfig::new(band());
    cfg.case3_form = Case3Form::ParallelEquivalent;
    let run = estimate_all(&s.topology, &set, &cfg);
    let oracle = num_complex::Complex64::from_polar(zl, dl) + num_complex::Complex64::new(20.0, 8.0);
    for ph in Phase::ALL {
        let e = run.get("ij", ph).unwrap();
        assert_eq!(e.quality, Quality::EquivalentLoad);
        assert!((e.z_mag.unwrap() - oracle.norm()).abs() / oracle.norm() < 0.02);
        assert!((e.delta.unwrap() - oracle.arg()).abs() < 0.02);
    }
}

#[test]
fn case3_siblings_and_branches() {
    // i feeds a measured child a (case 1) and two unmeasured leaves b, c
    let t = topo(&["i", "a", "b", "c"], &[("i", "a"), ("i", "b"), ("i", "c")], &["i", "a"]);
    let mut ctx = EstimationContext::new();
    let mut mi = m(230.0, 30.0, 0.3);
    mi.mean_p = -6000.0;
    mi.mean_q = -2000.0;
    let mut ma = m(229.0, 10.0, 0.3);
    ma.mean_p = -2000.0;
    ma.mean_q = -600.0;
    for ph in Phase::ALL {
        ctx.insert_moments("i".into(), ph, mi);
        ctx.insert_moments("a".into(), ph, ma);
        let mut e = ImpedanceEstimate::blank(&line("i", "a"), ph, LineCase::Case1, Quality::Exact);
        e.z_mag = Some(0.1);
        e.delta = Some(0.0);
        ctx.insert_estimate(e);
    }
    let cfg = EstimatorConfig::new(band());
    let e = estimate_case3(&line("i", "b"), Phase::A, &t, &ctx, &cfg).unwrap();
    let parts = e.equivalent.unwrap();
    assert_eq!(parts.n_branch, 2);
    // sibling a draws 2000 W + 100 * 0.1 W loss and 600 var
    assert!((parts.p_residual - (6000.0 - 2010.0) / 2.0).abs() < 1e-9);
    assert!((parts.q_residual - (2000.0 - 600.0) / 2.0).abs() < 1e-9);
}

// case 4

#[test]
fn case4_chain_shares() {
    let t = topo(&["R", "A", "B"], &[("R", "A"), ("A", "B")], &["R"]);
    let mut mr = m(230.0, 20.0, 0.3);
    mr.mean_p = -4000.0;
    mr.mean_q = -1200.0;
    let mut ctx = ctx_with("R", mr);
    let cfg = EstimatorConfig::new(band());
    let head = estimate_case3(&line("R", "A"), Phase::A, &t, &ctx, &cfg).unwrap();
    let z = head.z_mag.unwrap();
    ctx.insert_estimate(head);
    let out = estimate_case4(&line("A", "B"), Phase::A, &t, &ctx).unwrap();
    assert_eq!(out.group.n_branch, 2);
    assert_eq!(out.group.head_line, "RA");
    assert_eq!(out.estimates.len(), 1);
    assert!((out.estimates[0].z_mag.unwrap() - z / 2.0).abs() < 1e-12);
    assert!((out.group.share_sum() - z).abs() <= 1e-9 * z);
    assert_eq!(out.estimates[0].quality, Quality::Shared);
}

#[test]
fn case4_equal_split_of_two_ohms() {
    let t = topo(&["R", "A", "B"], &[("R", "A"), ("A", "B")], &["R"]);
    let mut ctx = EstimationContext::new();
    let mut head = ImpedanceEstimate::blank(&line("R", "A"), Phase::B, LineCase::Case3, Quality::EquivalentLoad);
    head.z_mag = Some(2.0);
    head.delta = Some(0.3);
    ctx.insert_estimate(head);
    let out = estimate_case4(&line("A", "B"), Phase::B, &t, &ctx).unwrap();
    assert_eq!(out.group.shares, vec![("AB".to_string(), 1.0), ("RA".to_string(), 1.0)]);
    assert_eq!(out.estimates[0].delta, Some(0.3));
}

#[test]
fn case4_without_measured_ancestor() {
    let t = topo(&["R", "A", "B"], &[("R", "A"), ("A", "B")], &[]);
    let ctx = EstimationContext::new();
    let (err, path) = estimate_case4(&line("A", "B"), Phase::A, &t, &ctx).unwrap_err();
    assert_eq!(err, EstimateError::NoMeasuredAncestor);
    assert_eq!(path.len(), 2);
}

#[test]
fn case4_undetermined_head() {
    let t = topo(&["R", "A", "B"], &[("R", "A"), ("A", "B")], &["R"]);
    let ctx = EstimationContext::new();
    let (err, _) = estimate_case4(&line("A", "B"), Phase::A, &t, &ctx).unwrap_err();
    assert_eq!(err, EstimateError::AncestorUndetermined);
}

// whole pipeline

#[test]
fn aspern_like_coverage() {
    let s = make_aspern_like(&AspernConfig {
        days: 2.0,
        ..AspernConfig::default()
    })
    .unwrap();
    let set = emulate_sensors(&s).unwrap();
    let run = estimate_all(&s.topology, &set, &EstimatorConfig::new(band()));
    assert_eq!(run.estimates.len(), 3 * s.topology.lines().len());
    for e in &run.estimates {
        assert_eq!(e.is_determined(), e.reason.is_none());
        let expected = match e.case {
            LineCase::Case1 => Quality::Exact,
            LineCase::Case2 => Quality::Bounded,
            LineCase::Case3 => Quality::EquivalentLoad,
            LineCase::Case4 => Quality::Shared,
        };
        assert!(e.quality == expected || e.quality == Quality::Undetermined);
        if let Some(d) = e.delta {
            assert!(d > -std::f64::consts::FRAC_PI_2 && d <= std::f64::consts::FRAC_PI_2);
        }
        if e.is_determined() {
            if let Some(z) = e.z_mag {
                assert!(z >= 0.0);
            }
        }
    }
    for g in &run.sharing_groups {
        assert!((g.share_sum() - g.equivalent_z).abs() <= 1e-9 * g.equivalent_z);
    }
}

#[test]
fn all_measured_chain_is_exact() {
    let t = topo(&["R", "A", "B"], &[("R", "A"), ("A", "B")], &["R", "A", "B"]);
    let mut s = scenario(
        t,
        &[("RA", 0.03, 0.38), ("AB", 0.02, 0.38)],
        &[("A", pq(1500.0, 0.38)), ("B", pq(900.0, 0.38))],
    );
    s.duration_s = 150 * 150;
    let set = emulate_sensors(&s).unwrap();
    let run = estimate_all(&s.topology, &set, &EstimatorConfig::new(band()));
    assert!(run.estimates.iter().all(|e| e.quality == Quality::Exact));
}

#[test]
fn no_sensors_leaves_everything_undetermined() {
    let t = topo(&["R", "A", "B", "C"], &[("R", "A"), ("A", "B"), ("A", "C")], &[]);
    let run = estimate_all(&t, &MeasurementSet::new(), &EstimatorConfig::new(band()));
    assert_eq!(run.estimates.len(), 9);
    for e in &run.estimates {
        assert_eq!(e.quality, Quality::Undetermined);
        assert_eq!(e.reason, Some(Reason::NoMeasuredAncestor));
    }
}

#[test]
fn short_series_are_insufficient() {
    let t = topo(&["R", "A"], &[("R", "A")], &["R", "A"]);
    let mut set = MeasurementSet::new();
    for (node, v) in [("R", 230.0), ("A", 229.0)] {
        let samples = (0..50).map(|k| MeasurementSample::complete(k * 150, -1000.0, -300.0, v)).collect();
        set.insert(MeasurementSeries::from_samples(node.into(), Phase::A, samples).0);
    }
    let run = estimate_all(&t, &set, &EstimatorConfig::new(band()));
    assert_eq!(run.get("RA", Phase::A).unwrap().reason, Some(Reason::InsufficientData));
    let mut cfg = EstimatorConfig::new(band());
    cfg.min_samples = 10;
    assert_eq!(estimate_all(&t, &set, &cfg).get("RA", Phase::A).unwrap().quality, Quality::Exact);
}

#[test]
fn disjoint_windows_are_rejected() {
    let t = topo(&["R", "A"], &[("R", "A")], &["R", "A"]);
    let mut set = MeasurementSet::new();
    for (node, v, start) in [("R", 230.0, 0), ("A", 229.0, 1_000_000)] {
        let samples = (0..200)
            .map(|k| MeasurementSample::complete(start + k * 150, -1000.0, -300.0, v))
            .collect();
        set.insert(MeasurementSeries::from_samples(node.into(), Phase::A, samples).0);
    }
    let run = estimate_all(&t, &set, &EstimatorConfig::new(band()));
    assert_eq!(run.get("RA", Phase::A).unwrap().reason, Some(Reason::WindowMismatch));
}

#[test]
fn second_moment_variant_on_constant_load() {
    let t = topo(&["R", "J"], &[("R", "J")], &["R", "J"]);
    let mut s = scenario(t, &[("RJ", 0.10, 0.45)], &[("J", pq(2000.0, 0.45))]);
    s.duration_s = 150 * 200;
    let set = emulate_sensors(&s).unwrap();
    let mut cfg = EstimatorConfig::new(band());
    cfg.variant = EstimatorVariant::SecondMoment;
    let e = estimate_all(&s.topology, &set, &cfg).get("RJ", Phase::A).unwrap().clone();
    assert!((e.z_mag.unwrap() - 0.10).abs() / 0.10 < 0.01);
}

#[test]
fn reduce_angle_range() {
    assert!((reduce_angle(std::f64::consts::PI - 0.1) + 0.1).abs() < 1e-12);
    assert_eq!(reduce_angle(std::f64::consts::FRAC_PI_2), std::f64::consts::FRAC_PI_2);
    assert!((reduce_angle(-std::f64::consts::FRAC_PI_2) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn reason_and_quality_names_round_trip() {
    for q in [Quality::Exact, Quality::Bounded, Quality::EquivalentLoad, Quality::Shared, Quality::Undetermined] {
        assert_eq!(Quality::parse(q.as_str()), Some(q));
    }
    for r in [Reason::InsufficientData, Reason::WindowMismatch, Reason::AncestorUndetermined] {
        assert_eq!(Reason::parse(r.as_str()), Some(r));
    }
}

fn series_of(node: &str, rows: &[(f64, f64, f64)]) -> MeasurementSeries {
    let samples = rows
        .iter()
        .enumerate()
        .map(|(k, &(p, q, v))| MeasurementSample::complete(k as i64 * 150, p, q, v))
        .collect();
    MeasurementSeries::from_samples(node.into(), Phase::A, samples).0
}

proptest! {
    #[test]
    fn case1_scale_invariance(
        rows in prop::collection::vec((-5000.0f64..-100.0, -2000.0f64..-10.0, 225.0f64..229.0, 0.0f64..1.0), 5..40),
        k in 0.2f64..5.0,
    ) {
        let j: Vec<_> = rows.iter().map(|&(p, q, v, _)| (p, q, v)).collect();
        let i: Vec<_> = rows.iter().map(|&(p, q, v, d)| (p, q, v + 1.0 + d)).collect();
        let scale = |r: &[(f64, f64, f64)]| -> Vec<(f64, f64, f64)> {
            r.iter().map(|&(p, q, v)| (p * k * k, q * k * k, v * k)).collect()
        };
        let est = |i: &[(f64, f64, f64)], j: &[(f64, f64, f64)]| {
            let (si, sj) = (series_of("i", i), series_of("j", j));
            case1_impedance(
                &crate::measurement::moments(&si, &si).unwrap(),
                &crate::measurement::moments(&sj, &sj).unwrap(),
            ).unwrap()
        };
        let (z0, d0) = est(&i, &j);
        let (z1, d1) = est(&scale(&i), &scale(&j));
        prop_assert!((z0 - z1).abs() <= 1e-9 * z0.abs().max(1e-12));
        prop_assert!((d0 - d1).abs() <= 1e-12);
    }

    #[test]
    fn delta_invariant_under_power_scaling(
        rows in prop::collection::vec((-5000.0f64..-100.0, -2000.0f64..2000.0, 220.0f64..240.0), 1..40),
        k in 0.01f64..100.0,
    ) {
        let s0 = series_of("j", &rows);
        let scaled: Vec<_> = rows.iter().map(|&(p, q, v)| (p * k, q * k, v)).collect();
        let s1 = series_of("j", &scaled);
        let a = crate::measurement::moments(&s0, &s0).unwrap();
        let b = crate::measurement::moments(&s1, &s1).unwrap();
        let band = band();
        let e0 = estimate_case2(&line("i", "j"), Phase::A, &a, &band);
        let e1 = estimate_case2(&line("i", "j"), Phase::A, &b, &band);
        let d = |e: Result<ImpedanceEstimate, EstimateError>| match e {
            Ok(e) => e.delta.unwrap(),
            Err(EstimateError::VoltageOutsideBand { delta }) => delta,
            Err(other) => panic!("{other:?}"),
        };
        prop_assert!((d(e0) - d(e1)).abs() < 1e-12);
    }

    #[test]
    fn case2_bound_holds_for_in_band_sources(
        z in 0.01f64..0.3,
        delta in 0.2f64..0.6,
        p in 300.0f64..6000.0,
        angle in -0.2f64..0.6,
        src in 0.96f64..1.04,
        generating in any::<bool>(),
    ) {
        let t = topo(&["R", "J"], &[("R", "J")], &["J"]);
        let sign = if generating { -1.0 } else { 1.0 };
        let mut s = scenario(t, &[("RJ", z, delta)], &[("J", pq(sign * p, angle))]);
        s.source_voltage = 230.0 * src;
        s.duration_s = 150 * 20;
        let set = emulate_sensors(&s).unwrap();
        let mut cfg = EstimatorConfig::new(band());
        cfg.min_samples = 10;
        let e = estimate_all(&s.topology, &set, &cfg).get("RJ", Phase::A).unwrap().clone();
        prop_assert_eq!(e.quality, Quality::Bounded);
        prop_assert!(z <= e.z_upper.unwrap());
    }
}

#[test]
fn measured_set_is_ignored_for_unmeasured_nodes() {
    // readings for a node the topology does not mark as measured are unused
    let t = topo(&["R", "A"], &[("R", "A")], &[]);
    let mut set = MeasurementSet::new();
    set.insert(series_of("A", &[(-1000.0, -300.0, 229.0); 200]));
    let run = estimate_all(&t, &set, &EstimatorConfig::new(band()));
    assert_eq!(run.get("RA", Phase::A).unwrap().reason, Some(Reason::NoMeasuredAncestor));
}
