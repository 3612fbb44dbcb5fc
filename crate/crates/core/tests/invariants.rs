use std::sync::OnceLock;

use proptest::prelude::*;

use cardiff::adversarial::{evaluate_attacks, AttackConfig, Classifier, TabularDataset};
use cardiff::diffusion::EpsModel;
use cardiff::guidance::{compute_gamma, GammaClip};
use cardiff::potentials::RelationalConstraintSet;
use cardiff::tracks::attack::{track_classifier, track_dataset, track_prior, AttackTrackConfig, ATTACKS};

struct Fixture {
    set: RelationalConstraintSet,
    data: TabularDataset,
    clf: Classifier,
    prior: EpsModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = AttackTrackConfig::default();
        cfg.data.n_train = 400;
        cfg.data.n_val = 100;
        cfg.data.n_test = 100;
        cfg.classifier.hidden = vec![16];
        cfg.classifier.train.epochs = 5;
        cfg.eps.hidden = vec![32, 32];
        cfg.eps.train.epochs = 3;
        let set = RelationalConstraintSet::credit();
        let data = track_dataset(&cfg, &set).unwrap();
        let clf = track_classifier(&data, &cfg).unwrap();
        let (prior, _) = track_prior(&data, &cfg).unwrap();
        Fixture { set, data, clf, prior }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attacks_respect_budget_bounds_and_log_every_cycle(
        epsilon in 0.01f64..0.6,
        step in 0.005f64..0.2,
        k in 1usize..5,
        cycles in 1usize..4,
        tau in 1usize..8,
        clip in prop::option::of(0.5f64..20.0),
        seed in any::<u64>(),
    ) {
        let f = fixture();
        let cfg = AttackConfig {
            epsilon,
            step_size: step,
            k,
            cycles,
            tau,
            gamma_clip: clip.map_or(GammaClip::None, |factor| GammaClip::Auto { factor }),
            seed,
            max_samples: 12,
            ..AttackConfig::default()
        };
        let eval = evaluate_attacks(&f.clf, &f.set, &f.data.test, &ATTACKS, &cfg, Some(&f.prior)).unwrap();
        prop_assert_eq!(eval.attacked.len(), 12);
        let (lo, hi) = (f.set.lower_bounds(), f.set.upper_bounds());
        for (row, per) in eval.rows.iter().zip(&eval.outcomes) {
            prop_assert!(row.still_correct <= row.attacked);
            for o in per {
                let x0 = &f.data.test.x[o.index];
                for j in 0..x0.len() {
                    let d = (o.x_adv[j] - x0[j]).abs() / f.clf.norm.scale[j];
                    prop_assert!(d <= epsilon + 1e-12, "{} feature {j}: {d} > {epsilon}", row.attack);
                    prop_assert!(o.x_adv[j] >= lo[j] && o.x_adv[j] <= hi[j]);
                }
                if row.attack == "cardiff" {
                    prop_assert_eq!(o.cycles.len(), cycles);
                    for c in &o.cycles {
                        prop_assert!(c.phi_after_pgd.is_finite() && c.phi_after_refine.is_finite());
                        prop_assert!(c.phi_after_projection.is_finite());
                    }
                } else {
                    prop_assert!(o.cycles.is_empty());
                }
            }
        }
        // Rows are all scored on the clean-correct samples, so the identity
        // row keeps every one of them.
        prop_assert_eq!(eval.rows[0].still_correct, eval.rows[0].attacked);
        let n = f.data.test.len() as f64;
        let pgd = &eval.rows[1];
        let robust = (eval.clean_accuracy * n - (pgd.attacked - pgd.still_correct) as f64) / n;
        prop_assert!(robust <= eval.clean_accuracy);
    }

    /// At lambda = 0 the step is `d cos(theta)`; its size grows with
    /// `|cos(theta)|` at fixed distance.
    #[test]
    fn gamma_magnitude_tracks_alignment(
        d in 1e-3f64..1e3,
        c1 in -1.0f64..1.0,
        c2 in -1.0f64..1.0,
        phi in 0.0f64..10.0,
        g in 1e-6f64..10.0,
    ) {
        let r = |c: f64| vec![d * c, d * (1.0 - c * c).max(0.0).sqrt()];
        let delta = [1.0, 0.0];
        let (a, b) = (compute_gamma(&r(c1), &delta, phi, g, 0.0), compute_gamma(&r(c2), &delta, phi, g, 0.0));
        if c1.abs() <= c2.abs() {
            prop_assert!(a.abs() <= b.abs() + 1e-12 * d);
        } else {
            prop_assert!(b.abs() <= a.abs() + 1e-12 * d);
        }
    }
}
