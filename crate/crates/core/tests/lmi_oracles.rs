mod common;

use nalgebra::{DMatrix, DVector};

use common::{hinf_frequency_sweep, random_matrix, random_plant, reference_gain, rng, spectral_radius};
use whrt_core::constraints::WhrtConstraint;
use whrt_core::graph::{build_graph, build_lifted_graph, unlift, Alphabet, Edge, NodeTracker, WhrtGraph};
use whrt_core::lmi::{
    analyze, analyze_lifted, analyze_nonlifted, evaluate_lyapunov, synthesize, verify_certificate,
    AnalysisCertificate, LmiError, LyapunovFunction, ModeTable, SolverOptions,
};
use whrt_core::systems::{closed_loop, lift, lifted_closed_loop, ModeMatrices, Plant, Strategy};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn single_node_binary() -> WhrtGraph {
    WhrtGraph::new(1, vec![Edge::new(0, 0, 0), Edge::new(0, 0, 1)], Alphabet::Binary, vec![0]).unwrap()
}

fn scalar_mode(a: f64) -> ModeMatrices {
    ModeMatrices {
        a: DMatrix::from_element(1, 1, a),
        bw: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        dw: DMatrix::from_element(1, 1, 0.0),
    }
}

#[test]
fn scalar_single_mode_matches_frequency_sweep() {
    let mode = scalar_mode(0.5);
    let modes = ModeTable::Common([(0, mode.clone()), (1, mode.clone())].into());
    let cert = analyze(&modes, &single_node_binary(), &opts()).unwrap();
    let sweep = hinf_frequency_sweep(&mode);
    assert!((sweep - 2.0).abs() < 1e-9, "sweep {sweep}");
    assert!((cert.gamma - sweep).abs() <= 1e-2 * sweep, "γ {} vs {sweep}", cert.gamma);
}

#[test]
fn lossless_lifted_analysis_matches_frequency_sweep() {
    let c = WhrtConstraint::any_hit(1, 1).unwrap();
    let g = build_lifted_graph(&c).unwrap();
    assert_eq!((g.node_count(), g.edge_count()), (1, 1));
    let mut r = rng(11);
    let mut checked = 0;
    while checked < 8 {
        let n = 2 + checked % 2;
        let plant = random_plant(&mut r, n, 1.1);
        let k = random_matrix(&mut r, 1, n, 0.6);
        let cl = plant.a() + plant.b() * &k;
        if spectral_radius(&cl) > 0.9 {
            continue;
        }
        let f = lift(&plant, &Strategy::Zero, [0]);
        let cert = analyze_lifted(&f, &k, &g, &opts()).unwrap();
        let sweep = hinf_frequency_sweep(&lifted_closed_loop(&f, &k).unwrap()[&0]);
        assert!(
            (cert.gamma - sweep).abs() <= 1e-2 * sweep,
            "case {checked}: γ {} vs sweep {sweep}",
            cert.gamma
        );
        checked += 1;
    }
}

#[test]
fn open_loop_certificate_bounds_the_peak_gain() {
    let mut r = rng(5);
    let g = build_lifted_graph(&WhrtConstraint::any_hit(1, 1).unwrap()).unwrap();
    for _ in 0..5 {
        let plant = random_plant(&mut r, 2, 0.8);
        let k = DMatrix::zeros(1, 2);
        let f = lift(&plant, &Strategy::Zero, [0]);
        let cert = analyze_lifted(&f, &k, &g, &opts()).unwrap();
        let open = ModeMatrices {
            a: plant.a().clone(),
            bw: plant.bw().clone(),
            c: plant.c().clone(),
            dw: plant.dw().clone(),
        };
        assert!(cert.gamma >= hinf_frequency_sweep(&open) * (1.0 - 1e-6));
    }
}

#[test]
fn unstable_open_loop_is_infeasible() {
    let plant = Plant::example();
    let k = DMatrix::zeros(1, 2);
    let c = WhrtConstraint::any_miss(2, 3).unwrap();
    let cls = closed_loop(&plant, &k, &Strategy::Zero).unwrap();
    let err = analyze_nonlifted(&cls, &build_graph(&c).unwrap(), &opts()).unwrap_err();
    assert!(matches!(err, LmiError::Infeasible), "{err:?}");
    let f = lift(&plant, &Strategy::Zero, 0..=2);
    let err = analyze_lifted(&f, &k, &build_lifted_graph(&c).unwrap(), &opts()).unwrap_err();
    assert!(matches!(err, LmiError::Infeasible), "{err:?}");
}

fn reference_certificate() -> (AnalysisCertificate, ModeTable, WhrtGraph) {
    let plant = Plant::example();
    let c = WhrtConstraint::any_hit(2, 3).unwrap();
    let g = build_lifted_graph(&c).unwrap();
    let f = lift(&plant, &Strategy::Zero, g.labels());
    let k = reference_gain();
    let cert = analyze_lifted(&f, &k, &g, &opts()).unwrap();
    let modes = ModeTable::Common(lifted_closed_loop(&f, &k).unwrap());
    (cert, modes, g)
}

#[test]
fn verification_rejects_negated_storage() {
    let (cert, modes, g) = reference_certificate();
    assert!(verify_certificate(&cert, &modes, &g, None).passed);
    let mut bad = cert.clone();
    bad.s[0] = -bad.s[0].clone();
    let report = verify_certificate(&bad, &modes, &g, None);
    assert!(!report.passed);
    assert!(report.failing_nodes.contains(&0));
    assert!(!report.failing_edges.is_empty());
    for e in &report.failing_edges {
        assert!(e.from == 0 || e.to == 0, "edge {e:?} does not touch node 0");
    }
}

#[test]
fn verification_degrades_gracefully_under_perturbation() {
    let (cert, modes, g) = reference_certificate();
    let base = verify_certificate(&cert, &modes, &g, None).min_edge_eigenvalue();
    let mut r = rng(99);
    for _ in 0..20 {
        let mut noisy = cert.clone();
        for s in noisy.s.iter_mut() {
            let scale = 1e-3 * s.norm();
            let e = random_matrix(&mut r, s.nrows(), s.ncols(), scale);
            *s += (&e + e.transpose()) * 0.5;
        }
        for gm in noisy.g.iter_mut() {
            let scale = 1e-3 * gm.norm();
            *gm += random_matrix(&mut r, gm.nrows(), gm.ncols(), scale);
        }
        let eig = verify_certificate(&noisy, &modes, &g, None).min_edge_eigenvalue();
        // Each edge block is affine in (S, G) with coefficients bounded by
        // 1 + the mode norms, and Weyl's inequality bounds the shift.
        let data: f64 = g
            .labels()
            .iter()
            .filter_map(|&l| modes.get(0, l))
            .map(|m| m.max_norm())
            .fold(0.0, f64::max);
        let bound = 1e-3 * cert.norm() * (3.0 + 2.0 * data);
        assert!((base - eig).abs() <= bound, "shift {} > {bound}", (base - eig).abs());
    }
}

#[test]
fn lyapunov_function_decreases_without_disturbance() {
    let (cert, modes, g) = reference_certificate();
    let v = LyapunovFunction::from_certificate(&cert).unwrap();
    let mut tracker = NodeTracker::at_initial(&g).unwrap();
    let mut x = DVector::from_column_slice(&[1.0, -0.5]);
    let mut prev = evaluate_lyapunov(&cert, &tracker, &x).unwrap();
    assert!((prev - v.value(tracker.current(), &x)).abs() < 1e-12 * (1.0 + prev));
    // Cycle through the lifted labels 1, 0, 1, 0, ... (pattern 10 1 10 1).
    for step in 0..60 {
        let label = step % 2;
        let mode = modes.get(tracker.current(), label).unwrap();
        let w = DVector::zeros(mode.bw.ncols());
        x = mode.step(&x, &w).0;
        tracker = tracker.step(label).unwrap();
        let next = evaluate_lyapunov(&cert, &tracker, &x).unwrap();
        if prev < 1e-20 {
            break;
        }
        assert!(next < prev, "step {step}: {next} ≥ {prev}");
        prev = next;
    }
    assert_eq!(evaluate_lyapunov(&cert, &tracker, &DVector::zeros(2)).unwrap(), 0.0);
}

#[test]
fn identity_storage_evaluates_the_squared_norm() {
    let cert = AnalysisCertificate {
        gamma: 1.0,
        s: vec![DMatrix::identity(2, 2)],
        g: vec![DMatrix::identity(2, 2)],
        epsilon: 0.0,
        min_eigenvalue: 0.0,
    };
    let g = build_lifted_graph(&WhrtConstraint::any_hit(1, 1).unwrap()).unwrap();
    let tracker = NodeTracker::at_initial(&g).unwrap();
    let v = evaluate_lyapunov(&cert, &tracker, &DVector::from_column_slice(&[1.0, 1.0])).unwrap();
    assert!((v - 2.0).abs() < 1e-12);
}

#[test]
fn lifted_and_nonlifted_agree_for_both_strategies() {
    let plant = Plant::example();
    let k = reference_gain();
    for text in ["anyhit(2,3)", "anyhit(2,4)", "rowhit(2,4)", "anymiss(1,3)"] {
        let c: WhrtConstraint = text.parse().unwrap();
        let lifted = build_lifted_graph(&c).unwrap();
        let binary = unlift(&lifted).unwrap();
        for strategy in [Strategy::Zero, Strategy::hold()] {
            let f = lift(&plant, &strategy, lifted.labels());
            let cls = closed_loop(&plant, &k, &strategy).unwrap();
            let a = analyze_lifted(&f, &k, &lifted, &opts());
            let b = analyze_nonlifted(&cls, &binary, &opts());
            match (a, b) {
                (Ok(a), Ok(b)) => assert!(
                    (a.gamma - b.gamma).abs() <= 1e-2 * (1.0 + a.gamma),
                    "{text} {}: lifted {} non-lifted {}",
                    strategy.name(),
                    a.gamma,
                    b.gamma
                ),
                (Err(LmiError::Infeasible), Err(LmiError::Infeasible)) => {}
                (a, b) => panic!("{text} {}: {a:?} vs {b:?}", strategy.name()),
            }
        }
    }
}

fn check_synthesis(label: &str, plant: &Plant, g: &WhrtGraph) {
    let f = lift(plant, &Strategy::Zero, g.labels());
    let res = synthesize(&f, g, false, &opts()).unwrap();
    assert!(res.verify(&f, g, None).unwrap().passed, "{label}");
    let k = res.controller.gain_at(0);
    let again = analyze_lifted(&f, k, g, &opts()).unwrap();
    assert!(
        again.gamma <= res.gamma + 1e-6 * (1.0 + res.gamma),
        "{label}: re-analysis {} vs synthesis {}",
        again.gamma,
        res.gamma
    );
    if let Ok(fixed) = analyze_lifted(&f, &DMatrix::zeros(plant.m(), plant.n()), g, &opts()) {
        assert!(res.gamma <= fixed.gamma + 1e-6 * (1.0 + fixed.gamma), "{label}");
    }
    let switched = synthesize(&f, g, true, &opts()).unwrap();
    assert!(switched.gamma <= res.gamma + 1e-6 * (1.0 + res.gamma), "{label}");
    assert!(switched.verify(&f, g, None).unwrap().passed, "{label}");
}

#[test]
fn synthesized_gain_reanalyzes_to_the_same_bound() {
    let plant = Plant::example();
    for text in ["anyhit(2,3)", "rowhit(2,4)", "anyhit(3,5)"] {
        let c: WhrtConstraint = text.parse().unwrap();
        check_synthesis(text, &plant, &build_lifted_graph(&c).unwrap());
    }
    let lossless = build_lifted_graph(&WhrtConstraint::any_hit(1, 1).unwrap()).unwrap();
    let mut r = rng(21);
    for case in 0..4 {
        let plant = random_plant(&mut r, 2 + case % 2, 0.9);
        check_synthesis(&format!("lossless case {case}"), &plant, &lossless);
    }
}

#[test]
fn lossless_synthesis_matches_frequency_sweep_of_the_design() {
    let plant = Plant::example();
    let g = build_lifted_graph(&WhrtConstraint::any_hit(1, 1).unwrap()).unwrap();
    let f = lift(&plant, &Strategy::Zero, [0]);
    let res = synthesize(&f, &g, false, &opts()).unwrap();
    let mode = &lifted_closed_loop(&f, res.controller.gain_at(0)).unwrap()[&0];
    let sweep = hinf_frequency_sweep(mode);
    assert!(sweep <= res.gamma * (1.0 + 1e-6), "sweep {sweep} above certified {}", res.gamma);
}
