use datagrad_core::sampler::{rng_from_seed, tv_distance};
use datagrad_harness::config::Weights;
use datagrad_harness::experiment::{build_test_set, build_scene, draw_binned};
use datagrad_harness::{build_gap_experiment, run, ExperimentConfig, Method};

fn quick() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.outer.budget = 4;
    cfg.outer.per_class = 10;
    cfg.eval.test_per_class = 20;
    cfg.eval.train_per_class = 20;
    cfg
}

#[test]
fn one_hot_test_bin_confines_every_pose() {
    let mut cfg = quick();
    cfg.pose.bins = 8;
    cfg.pose.test = Weights::OneHot(0);
    let exp = build_gap_experiment(&cfg).unwrap();
    assert_eq!(exp.test.len(), 40);
    assert!(exp.test.examples().iter().all(|e| (0.0..45.0).contains(&e.params.phi)));
    cfg.pose.test = Weights::OneHot(5);
    let test = build_test_set(&cfg, &build_scene(&cfg).unwrap()).unwrap();
    assert!(test.examples().iter().all(|e| (225.0..270.0).contains(&e.params.phi)));
}

#[test]
fn binned_draws_match_configured_weights() {
    let weights = Weights::Dominant { bin: 2, mass: 0.55 }.resolve(5).unwrap();
    let mut rng = rng_from_seed(9);
    let n = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        let v = draw_binned(&weights, [0.0, 360.0], &mut rng);
        counts[(v / 72.0) as usize] += 1;
    }
    for (c, w) in counts.iter().zip(&weights) {
        assert!((*c as f64 / n as f64 - w).abs() < 0.01, "{counts:?} vs {weights:?}");
    }
}

#[test]
fn identical_seeds_give_identical_datasets() {
    let cfg = quick();
    let a = build_gap_experiment(&cfg).unwrap();
    let b = build_gap_experiment(&cfg).unwrap();
    assert_eq!(a.test, b.test);
    assert_eq!(a.theta0, b.theta0);
}

#[test]
fn no_gap_means_ns_matches_nso() {
    let mut cfg = quick();
    cfg.pose.init = Weights::OneHot(0);
    let exp = build_gap_experiment(&cfg).unwrap();
    let (mut ns, mut nso) = (0.0, 0.0);
    for seed in 0..5 {
        ns += run(&exp, &cfg, Method::Ns, seed, &mut ()).unwrap().final_row().val_accuracy / 5.0;
        nso += run(&exp, &cfg, Method::Nso, seed, &mut ()).unwrap().final_row().val_accuracy / 5.0;
    }
    assert!((ns - nso).abs() < 0.05, "NS {ns} vs NSO {nso}");
}

#[test]
fn runs_share_seeds_and_report_tv() {
    let cfg = quick();
    let exp = build_gap_experiment(&cfg).unwrap();
    let ns = run(&exp, &cfg, Method::Ns, 3, &mut ()).unwrap();
    assert_eq!(ns.rows.len(), 1);
    let tv = tv_distance(&ns.initial.probs(), &exp.test_pose);
    assert!((ns.final_row().tv_distance - tv).abs() < 1e-12);

    let nso = run(&exp, &cfg, Method::Nso, 3, &mut ()).unwrap();
    let score = run(&exp, &cfg, Method::Score, 3, &mut ()).unwrap();
    for r in [&nso, &score] {
        assert_eq!(r.rows.len(), cfg.outer.budget + 1);
        assert_eq!(r.records.len(), cfg.outer.budget);
        assert_eq!(r.final_row().iter, cfg.outer.budget);
    }
    // both evaluate their learned distribution with the same evaluation seed
    assert_eq!(ns.final_train.len(), nso.final_train.len());
}

#[test]
fn score_baseline_rejects_trainable_lighting() {
    let mut cfg = quick();
    cfg.lighting = Some(datagrad_harness::config::LightingConfig {
        embeddings: vec![vec![0.0, 0.8, 0.5], vec![-1.0, 0.8, 0.5]],
        test: 1,
        init: Weights::Uniform,
        trainable: true,
    });
    let exp = build_gap_experiment(&cfg).unwrap();
    assert!(run(&exp, &cfg, Method::Score, 0, &mut ()).is_err());
}
