use cardiff::adversarial::feasible_example;
use cardiff::guidance::{ConstraintPotential, ZeroPotential};
use cardiff::numerics::Rng;
use cardiff::potentials::{
    gradient_conformance, locate_stationary_points, sample_manifold_dataset, MullerBrownParams,
    MullerBrownPotential, RelationalConstraintSet, Sampler, StationaryKind, WORKING_BOX,
};
use cardiff::powerflow::{build_ybus, GridCase, Injections, KirchhoffPotential, Layout, PowerFlowState};
use proptest::prelude::*;

fn box_probes(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| lo.iter().zip(hi).map(|(a, b)| rng.uniform_range(*a, *b)).collect())
        .collect()
}

#[test]
fn muller_brown_gradient_conformance() {
    let pot = MullerBrownPotential::canonical();
    let (lo, hi) = WORKING_BOX;
    let probes = box_probes(&lo, &hi, 100, 1);
    assert!(gradient_conformance(&pot, &probes, 1.0).unwrap() < 1e-4);
}

#[test]
fn relational_gradient_conformance() {
    let set = RelationalConstraintSet::credit();
    let base = feasible_example(&set);
    let mut rng = Rng::new(2);
    let probes: Vec<Vec<f64>> = (0..100)
        .map(|_| base.iter().map(|v| v * (1.0 + 0.3 * rng.uniform_range(-1.0, 1.0)) + 0.1 * rng.normal()).collect())
        .collect();
    assert!(gradient_conformance(&set, &probes, 1.0).unwrap() < 1e-4);
}

#[test]
fn kirchhoff_gradient_conformance() {
    let case = GridCase::ieee14();
    let y = build_ybus(&case).unwrap();
    let pot = KirchhoffPotential::new(&case, &y, Injections::nominal(&case));
    let layout = Layout::new(&case);
    let flat = PowerFlowState::flat_start(&case).unknowns(&layout);
    let mut rng = Rng::new(3);
    let probes: Vec<Vec<f64>> = (0..100)
        .map(|_| flat.iter().map(|v| v + 0.1 * rng.uniform_range(-1.0, 1.0)).collect())
        .collect();
    assert!(gradient_conformance(&pot, &probes, 1.0).unwrap() < 1e-4);
}

/// Central-difference gradient of the raw landscape, independent of the
/// analytic one.
fn fd_grad(p: &MullerBrownParams, x: [f64; 2]) -> [f64; 2] {
    let h = 1e-6;
    [
        (p.eval(&[x[0] + h, x[1]]) - p.eval(&[x[0] - h, x[1]])) / (2.0 * h),
        (p.eval(&[x[0], x[1] + h]) - p.eval(&[x[0], x[1] - h])) / (2.0 * h),
    ]
}

/// Grid scan for discrete local minima, then finite-difference descent.
fn oracle_minima(p: &MullerBrownParams) -> Vec<([f64; 2], f64)> {
    let (lo, hi) = WORKING_BOX;
    let n = 301;
    let at = |i: usize, j: usize| {
        [
            lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
            lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
        ]
    };
    let mut out: Vec<([f64; 2], f64)> = Vec::new();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = p.eval(&at(i, j));
            let is_min = (-1i64..=1).all(|di| {
                (-1i64..=1).all(|dj| {
                    (di, dj) == (0, 0) || p.eval(&at((i as i64 + di) as usize, (j as i64 + dj) as usize)) > v
                })
            });
            if !is_min {
                continue;
            }
            let mut x = at(i, j);
            for _ in 0..200_000 {
                let g = fd_grad(p, x);
                if g[0].hypot(g[1]) < 1e-7 {
                    break;
                }
                x = [x[0] - 1e-4 * g[0], x[1] - 1e-4 * g[1]];
            }
            out.push((x, p.eval(&x)));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

#[test]
fn stationary_points_match_grid_oracle() {
    let p = MullerBrownParams::default();
    let located = locate_stationary_points(&p);
    let minima: Vec<_> = located.iter().filter(|s| s.kind == StationaryKind::Minimum).collect();
    let oracle = oracle_minima(&p);
    assert_eq!(minima.len(), oracle.len());
    for (m, (x, v)) in minima.iter().zip(&oracle) {
        assert!((m.location[0] - x[0]).hypot(m.location[1] - x[1]) < 1e-3, "{m:?} vs {x:?}");
        assert!((m.value - v).abs() < 1e-3);
    }
    // Saddles: vanishing gradient and one negative curvature direction.
    for s in located.iter().filter(|s| s.kind == StationaryKind::Saddle) {
        let g = fd_grad(&p, s.location);
        assert!(g[0].hypot(g[1]) < 1e-4);
        let h = 1e-4;
        let v = |dx: f64, dy: f64| p.eval(&[s.location[0] + dx, s.location[1] + dy]);
        let hxx = (v(h, 0.0) - 2.0 * v(0.0, 0.0) + v(-h, 0.0)) / (h * h);
        let hyy = (v(0.0, h) - 2.0 * v(0.0, 0.0) + v(0.0, -h)) / (h * h);
        let hxy = (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4.0 * h * h);
        assert!(hxx * hyy - hxy * hxy < 0.0);
    }
}

#[test]
fn wrapped_landscape_nonnegative_on_grid() {
    let pot = MullerBrownPotential::canonical();
    let (lo, hi) = WORKING_BOX;
    for i in 0..200 {
        for j in 0..200 {
            let x = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / 199.0,
                lo[1] + (hi[1] - lo[1]) * j as f64 / 199.0,
            ];
            assert!(pot.value(&x) >= 0.0);
        }
    }
}

/// Kolmogorov-Smirnov statistic against the uniform law on `[0, 1]`.
fn ks_uniform(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn flat_potential_samples_are_uniform() {
    let n = 2000;
    let data = sample_manifold_dataset(&ZeroPotential(2), &[0.0, 0.0], &[1.0, 1.0], n, Sampler::Rejection { kt: 1.0 }, 4)
        .unwrap();
    // 1.628 / sqrt(n) is the 1% critical value.
    let crit = 1.628 / (n as f64).sqrt();
    for k in 0..2 {
        assert!(ks_uniform(data.iter().map(|p| p[k]).collect()) < crit);
    }
}

#[test]
fn muller_brown_samples_concentrate_in_wells() {
    let pot = MullerBrownPotential::canonical();
    let (lo, hi) = WORKING_BOX;
    let data = sample_manifold_dataset(&pot, &lo, &hi, 2000, Sampler::metropolis(10.0), 5).unwrap();
    let minima = oracle_minima(&pot.params);
    let mut in_well = 0;
    for x in &data {
        if pot.value(x) >= 60.0 {
            continue;
        }
        let mut p = [x[0], x[1]];
        for _ in 0..20_000 {
            let g = fd_grad(&pot.params, p);
            p = [p[0] - 1e-4 * g[0], p[1] - 1e-4 * g[1]];
        }
        if minima.iter().any(|(m, _)| (m[0] - p[0]).hypot(m[1] - p[1]) < 0.05) {
            in_well += 1;
        }
    }
    assert!(in_well as f64 > 0.8 * data.len() as f64, "{in_well}");
    let again = sample_manifold_dataset(&pot, &lo, &hi, 2000, Sampler::metropolis(10.0), 5).unwrap();
    assert_eq!(data, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn phi_is_the_sum_of_its_breakdown(seed in any::<u64>()) {
        let set = RelationalConstraintSet::credit();
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = set.lower_bounds().iter().zip(set.upper_bounds())
            .map(|(a, b)| rng.uniform_range(*a, b)).collect();
        let (phi, _, parts) = set.evaluate(&x).unwrap();
        prop_assert!((phi - parts.iter().sum::<f64>()).abs() <= 1e-12 * phi.max(1.0));
        prop_assert!(parts.iter().all(|p| *p >= 0.0));
    }
}
