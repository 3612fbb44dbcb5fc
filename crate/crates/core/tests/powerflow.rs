use cardiff::guidance::{residual_correction, ConstraintPotential, ResidualMap};
use cardiff::powerflow::{
    build_ybus, parse_case, solve, GridCase, Injections, KirchhoffPotential, Layout, PowerFlowState,
};
use cardiff::Error;

fn two_bus(p_load_pu: f64) -> GridCase {
    let text = format!(
        "case two_bus\n[bus]\n1 slack 0 0 0 0 1 0 0\n2 pq {} 0 0 0 1 0 0\n[branch]\n1 2 0 0.1 0 1 0\n[gen]\n1 0 0 1\n",
        p_load_pu * 100.0
    );
    parse_case(&text).unwrap()
}

#[test]
fn two_bus_matches_closed_form() {
    // Lossless line, x = 0.1, Q = 0: P = 5 sin(2 theta), V = cos(theta).
    let case = two_bus(0.5);
    let y = build_ybus(&case).unwrap();
    let out = solve(&case, &y, &Injections::nominal(&case)).unwrap();
    let theta = -(0.1f64).asin() / 2.0;
    assert!((out.state.va[1] - theta).abs() < 1e-9);
    assert!((out.state.vm[1] - theta.cos()).abs() < 1e-9);
}

#[test]
fn infeasible_load_does_not_converge() {
    let case = two_bus(100.0);
    let y = build_ybus(&case).unwrap();
    assert!(matches!(
        solve(&case, &y, &Injections::nominal(&case)),
        Err(Error::NoConvergence { .. })
    ));
}

#[test]
fn ieee14_reproduces_reference_solution() {
    let case = GridCase::ieee14();
    let y = build_ybus(&case).unwrap();
    let out = solve(&case, &y, &Injections::nominal(&case)).unwrap();
    assert!(out.iterations <= 10);
    assert!(*out.mismatch_history.last().unwrap() < 1e-8);
    let reference = PowerFlowState::from_case(&case);
    for i in 0..14 {
        assert!((out.state.vm[i] - reference.vm[i]).abs() < 2e-3, "bus {} vm", i + 1);
        let deg = (out.state.va[i] - reference.va[i]).to_degrees();
        assert!(deg.abs() < 0.05, "bus {} va off by {deg}", i + 1);
    }
}

#[test]
fn ieee30_converges() {
    let case = GridCase::ieee30();
    let y = build_ybus(&case).unwrap();
    let out = solve(&case, &y, &Injections::nominal(&case)).unwrap();
    assert!(out.iterations <= 10);
    assert!(*out.mismatch_history.last().unwrap() < 1e-8);
}

#[test]
fn pseudoinverse_correction_agrees_with_newton() {
    let case = GridCase::ieee14();
    let y = build_ybus(&case).unwrap();
    let pot = KirchhoffPotential::new(&case, &y, Injections::nominal(&case));
    let layout = Layout::new(&case);
    let nr = solve(&case, &y, &pot.injections).unwrap().state.unknowns(&layout);
    let start: Vec<f64> = nr.iter().enumerate().map(|(k, v)| v + 0.02 * ((k as f64) * 1.3).cos()).collect();
    let corr = residual_correction(&pot, &start, 20, 1e-10).unwrap();
    assert!(corr.residual_norm < 1e-10);
    for (a, b) in corr.x.iter().zip(&nr) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!(pot.value(&corr.x) < 1e-18);
    assert!(pot.residual(&corr.x).iter().all(|r| r.abs() < 1e-9));
}
