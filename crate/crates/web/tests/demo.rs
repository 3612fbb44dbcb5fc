use cardiff_web::demo::{thin, Demo, MAX_POINTS, VIEW};

/// Standard four-term landscape, written out independently.
fn muller_brown(x: f64, y: f64) -> f64 {
    let a = [-200.0, -100.0, -170.0, 15.0];
    let p = [-1.0, -1.0, -6.5, 0.7];
    let q = [0.0, 0.0, 11.0, 0.6];
    let r = [-10.0, -10.0, -6.5, 0.7];
    let cx = [1.0, 0.0, -0.5, -1.0];
    let cy = [0.0, 0.5, 1.5, 1.0];
    (0..4)
        .map(|i| {
            let (dx, dy) = (x - cx[i], y - cy[i]);
            a[i] * (p[i] * dx * dx + q[i] * dx * dy + r[i] * dy * dy).exp()
        })
        .sum()
}

/// Published global minimum value.
const V_MIN: f64 = -146.699_517;

#[test]
fn landscape_matches_independent_formula() {
    let demo = Demo::embedded().unwrap();
    let cap = 400.0;
    let g = demo.landscape(13, 9, cap).unwrap();
    assert_eq!((g.nx, g.ny, g.values.len()), (13, 9, 117));
    assert_eq!((g.lo, g.hi), VIEW);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let x = g.lo[0] + (g.hi[0] - g.lo[0]) * i as f64 / 12.0;
            let y = g.lo[1] + (g.hi[1] - g.lo[1]) * j as f64 / 8.0;
            let want = (muller_brown(x, y) - V_MIN).clamp(0.0, cap);
            let got = g.values[j * g.nx + i];
            assert!((got - want).abs() < 1e-3, "({x}, {y}): {got} vs {want}");
        }
    }
    assert!(demo.landscape(1, 5, cap).is_err());
}

#[test]
fn landmarks_are_the_known_stationary_points() {
    let marks = Demo::embedded().unwrap().landmarks();
    let count = |prefix: &str| marks.iter().filter(|m| m.label.starts_with(prefix)).count();
    assert_eq!(count("global"), 1);
    assert_eq!(count("local-"), 2);
    assert_eq!(count("saddle"), 2);
    let g = marks.iter().find(|m| m.label == "global").unwrap();
    assert!((g.x[0] + 0.558).abs() < 1e-3 && (g.x[1] - 1.442).abs() < 1e-3);
    assert!(g.phi < 1e-6);
}

#[test]
fn comparison_shows_three_behaviours() {
    let demo = Demo::embedded().unwrap();
    let start = [-0.3, 0.9625];
    let paths = demo.compare(start, 1.0).unwrap();
    let by = |m: &str| paths.iter().find(|p| p.method == m).unwrap();
    assert!(by("gd").basin.starts_with("local-"));
    assert_eq!(by("nr").basin, "saddle");
    assert_eq!(by("nr").saddle, Some(true));
    assert_eq!(by("cardiff").basin, "global");
    for p in &paths {
        assert!(p.points.len() <= MAX_POINTS);
        assert_eq!(&p.points[0][..2], &start[..]);
        let last = p.points.last().unwrap();
        assert_eq!([last[0], last[1]], p.end);
    }
}

#[test]
fn sweep_rows_follow_the_guided_chain() {
    let demo = Demo::embedded().unwrap();
    let start = [0.95, 1.525];
    let lambdas = [0.0, 1.0, 100.0];
    let rows = demo.sweep(start, &lambdas, Some(10.0)).unwrap();
    assert_eq!(rows.len(), 3);
    let steps = demo.config.refine.steps;
    for (row, l) in rows.iter().zip(lambdas) {
        assert_eq!(row.lambda, l);
        assert_eq!(row.gammas.len(), steps);
        assert_eq!(row.phis.len(), steps);
        assert!(row.phi.is_finite());
    }
    let guided = demo.compare(start, 1.0).unwrap().into_iter().find(|p| p.method == "cardiff").unwrap();
    assert_eq!(rows[1].end, guided.end);

    let unclipped = demo.sweep(start, &[1.0], None).unwrap();
    assert_eq!(unclipped[0].clip_events, 0);
    let tight = demo.sweep(start, &[1.0], Some(1e-9)).unwrap();
    assert!(tight[0].clip_events > 0);
}

#[test]
fn thinning_keeps_ends() {
    let v: Vec<usize> = (0..1000).collect();
    let t = thin(&v, 7);
    assert_eq!(t.len(), 7);
    assert_eq!((t[0], t[6]), (0, 999));
    assert!(t.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(thin(&v[..5], 7), v[..5].to_vec());
}

#[test]
fn rejects_bad_model_text() {
    assert!(Demo::from_model_json("{}").is_err());
    assert!(Demo::from_model_json("not json").is_err());
}
