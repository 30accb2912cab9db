//! Implicit hypergradients of the validation loss w.r.t. the rendering
//! distribution, and the outer optimization loop.

mod cg;
mod nerf;
mod outer;
mod samples;
mod task;

pub use cg::{conjugate_gradient, CgConfig, CgSolution};
pub use nerf::{
    grad_nerf_sample, grad_nerf_sample_dense, influence, mixed_contraction, score_sample,
    MemoryProbe,
};
pub use outer::{
    iteration_seed, momentum_step, optimize, outer_gradient, outer_step, projected_step,
    solve_tv, val_value_grad, Estimator, HessianSamples, HypergradConfig, HypergradReport,
    IterationRecord, OptimizeConfig, OuterState, Problem, TermNorms, Trajectory,
};
pub use samples::{build_train_set, derive_seeds, to_dataset, IdentityRenderer, TrainSample};
pub use task::{Classifier, Fit, InnerSolver, QuadraticProxy, TaskModel};

#[cfg(test)]
mod tests {
    use std::ops::Range;

    use super::*;
    use crate::autodiff::{hvp, Tape};
    use crate::error::{Error, Result};
    use crate::learner::{Architecture, Dataset, ModelParams, NewtonConfig, Role, TrainConfig};
    use crate::renderer::{render, Label, PatchLayout, RenderParams, Renderer, SceneSpec};
    use crate::sampler::{
        rng_from_seed, BinDistribution, DrawMode, LightingMixture, ParamSource,
        RenderDistribution,
    };
    use crate::scalar::Real;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn exact_cg() -> CgConfig {
        CgConfig {
            max_iters: None,
            residual_tol: 1e-12,
            damping: 0.0,
        }
    }

    #[test]
    fn cg_on_identity_and_diagonal() {
        let g = [0.3, -1.2, 2.0];
        let cfg = CgConfig::default();
        let z = conjugate_gradient(|v| Ok(v.to_vec()), &g, &cfg).unwrap();
        for (zi, gi) in z.z.iter().zip(&g) {
            assert!((zi - gi / (1.0 + cfg.damping)).abs() < 1e-12);
        }
        let z = conjugate_gradient(|v: &[f64]| Ok(vec![2.0 * v[0], 4.0 * v[1]]), &[2.0_f64, 4.0], &exact_cg()).unwrap();
        assert!((z.z[0] - 1.0).abs() < 1e-12 && (z.z[1] - 1.0).abs() < 1e-12);
        assert!(z.converged && z.iters <= 2);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = rng_from_seed(1);
        let m = 50;
        let q = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let a = q.transpose() * &q + DMatrix::identity(m, m) * 0.5;
        let g: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = CgConfig { max_iters: Some(500), residual_tol: 1e-12, damping: 1e-3 };
        let sol = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), &g, &cfg).unwrap();
        let dense = (&a + DMatrix::identity(m, m) * 1e-3).lu().solve(&DVector::from_column_slice(&g)).unwrap();
        assert!(rel(&sol.z, dense.as_slice()) < 1e-6);
    }

    #[test]
    fn cg_reports_negative_curvature() {
        let r = conjugate_gradient(|v| Ok(vec![-v[0], v[1]]), &[1.0, 1.0], &exact_cg());
        assert!(matches!(r, Err(Error::CgBreakdown { iter: 0, .. })));
        assert!(conjugate_gradient(|v| Ok(v.to_vec()), &[1.0], &CgConfig { residual_tol: 0.0, ..Default::default() }).is_err());
    }

    fn small_scene(size: usize, classes: usize) -> SceneSpec<f64> {
        SceneSpec::rotated_bars(size, classes)
    }

    fn val_set(scene: &SceneSpec<f64>, probs: &[f64], per_class: usize, seed: u64) -> Dataset<f64> {
        let dist = RenderDistribution::pose_only(BinDistribution::from_probs(probs, 0.0, 360.0).unwrap());
        let s = build_train_set(scene, &dist, per_class, 1, DrawMode::Hard, seed).unwrap();
        to_dataset(&s).unwrap().with_role(Role::Val)
    }

    fn linear(size: usize, classes: usize, wd: f64) -> Classifier {
        let mut arch = Architecture::mlp(size * size, &[], classes);
        arch.weight_decay = wd;
        Classifier { arch, inner: InnerSolver::Exact(NewtonConfig::default()) }
    }

    #[test]
    fn quadratic_proxy_matches_closed_form() {
        let dist = RenderDistribution::pose_only(BinDistribution::new(vec![0.3, -0.2, 0.5, 0.1], 0.0, 360.0).unwrap());
        let val = Dataset::new(
            vec![render(&IdentityRenderer, 0, &RenderParams::new(1.0, 0.0, 1.0).unwrap()).unwrap()],
            Role::Val,
        )
        .unwrap();
        let problem = Problem { scene: &IdentityRenderer, model: &QuadraticProxy, val: &val };
        let cfg = HypergradConfig { per_class: 7, cg: exact_cg(), patches: 1, ..Default::default() };
        let report = outer_gradient(&problem, &dist, &[0.0], &cfg, 3).unwrap();
        // analytic: d/dψ ½ v̄², dv/dlogit_l = y_l (c_l − b_ce) / τ
        let geom = dist.phi.geometry();
        let mut vbar = 0.0;
        let mut dv = vec![0.0; 4];
        for s in &build_train_set(&IdentityRenderer, &dist, 7, 1, DrawMode::Relaxed, 3).unwrap() {
            let v = s.example.params.phi;
            vbar += v / 7.0;
            let tape = Tape::new();
            let lv = tape.vars(dist.phi.logits());
            let y = crate::sampler::gumbel_weights(&lv, &s.noise.phi.gumbels, 0.1);
            let bce: f64 = y.iter().zip(&geom.centers).map(|(a, c)| a.value() * c).sum();
            for l in 0..4 {
                dv[l] += y[l].value() * (geom.centers[l] - bce) / 0.1 / 7.0;
            }
        }
        let expect: Vec<f64> = dv.iter().map(|d| vbar * d).collect();
        assert!(rel(&report.grad_psi, &expect) < 1e-8, "{:?} vs {expect:?}", report.grad_psi);
    }

    fn frozen_noise_objective(
        scene: &SceneSpec<f64>,
        model: &Classifier,
        val: &Dataset<f64>,
        dist: &RenderDistribution<f64>,
        theta0: &[f64],
        per_class: usize,
        seed: u64,
    ) -> f64 {
        let s = build_train_set(scene, dist, per_class, 1, DrawMode::Relaxed, seed).unwrap();
        let fit = model.fit(theta0, &to_dataset(&s).unwrap()).unwrap();
        val_value_grad(model, &fit.theta, val).unwrap().0
    }

    #[test]
    fn desk_pipeline_matches_frozen_noise_finite_differences() {
        let scene = small_scene(6, 2);
        let model = linear(6, 2, 1e-2);
        let val = val_set(&scene, &[0.7, 0.1, 0.1, 0.1], 6, 40);
        let dist = RenderDistribution::pose_only(BinDistribution::new(vec![0.2, -0.1, 0.4, 0.0], 0.0, 360.0).unwrap());
        let mut dist = dist;
        dist.tau = 0.5;
        let theta0 = vec![0.0; 74];
        let cfg = HypergradConfig { per_class: 3, cg: exact_cg(), patches: 4, ..Default::default() };
        let problem = Problem { scene: &scene, model: &model, val: &val };
        let report = outer_gradient(&problem, &dist, &theta0, &cfg, 9).unwrap();
        let h = 1e-4;
        let fd: Vec<f64> = (0..4)
            .map(|i| {
                let (mut up, mut dn) = (dist.clone(), dist.clone());
                let mut p = dist.psi();
                p[i] += h;
                up.set_psi(&p).unwrap();
                p[i] -= 2.0 * h;
                dn.set_psi(&p).unwrap();
                let f = |d: &RenderDistribution<f64>| frozen_noise_objective(&scene, &model, &val, d, &theta0, 3, 9);
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        assert!(rel(&report.grad_psi, &fd) < 1e-2, "{:?} vs {fd:?}", report.grad_psi);
        let total: f64 = report.grad_psi.iter().sum();
        assert!(total.abs() < 1e-8 * report.grad_psi.iter().map(|g| g.abs()).sum::<f64>().max(1.0));
    }

    fn tiny_instance(hidden: &[usize]) -> (SceneSpec<f64>, Classifier, RenderDistribution<f64>, Vec<f64>, Vec<TrainSample<f64>>) {
        let scene = small_scene(4, 2);
        let arch = Architecture::mlp(16, hidden, 2);
        let model = Classifier { arch: arch.clone(), inner: InnerSolver::Sgd(TrainConfig::default()) };
        let theta = ModelParams::<f64>::init(arch, 2).unwrap().theta;
        let mut dist = RenderDistribution::pose_only(BinDistribution::new(vec![0.1, 0.5, -0.3, 0.0, 0.2, -0.1, 0.3, 0.0], 0.0, 360.0).unwrap());
        dist.tau = 0.7;
        dist.zoom = ParamSource::Learned { dist: BinDistribution::uniform(4, 0.8, 1.2).unwrap(), trainable: true };
        let samples = build_train_set(&scene, &dist, 2, 4, DrawMode::Relaxed, 5).unwrap();
        (scene, model, dist, theta, samples)
    }

    #[test]
    fn ordered_contraction_matches_dense_product() {
        for hidden in [&[][..], &[2][..]] {
            let (scene, model, dist, theta, samples) = tiny_instance(hidden);
            let mut rng = rng_from_seed(7);
            let z: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (j, s) in samples.iter().enumerate() {
                let mut probe = MemoryProbe::default();
                let fast = grad_nerf_sample(&model, &scene, &dist, &theta, &z, s, None, j, &mut probe).unwrap();
                let dense = grad_nerf_sample_dense(&model, &scene, &dist, &theta, &z, s).unwrap();
                assert!(rel(&fast, &dense) < 1e-8);
                let md = theta.len() * 16;
                assert!(probe.largest_buffer < md && probe.peak_mixed_tape < md && probe.peak_render_tape < md);
            }
        }
    }

    #[test]
    fn zero_z_and_frozen_renderer_give_zero() {
        let (scene, model, dist, theta, samples) = tiny_instance(&[]);
        let mut probe = MemoryProbe::default();
        let g = grad_nerf_sample(&model, &scene, &dist, &theta, &vec![0.0; theta.len()], &samples[0], None, 0, &mut probe).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));

        struct Frozen(SceneSpec<f64>);
        impl Renderer<f64> for Frozen {
            fn width(&self) -> usize { self.0.width }
            fn height(&self) -> usize { self.0.height }
            fn num_classes(&self) -> usize { self.0.num_classes() }
            fn render_range<R: Real<f64>>(&self, class: usize, p: &RenderParams<R>, range: Range<usize>) -> Result<Vec<R>> {
                let px = self.0.render_range(class, &p.map(|x| x.value()), range)?;
                Ok(px.into_iter().map(|v| p.phi.lift(v)).collect())
            }
            fn label(&self, class: usize, p: &RenderParams<f64>) -> Result<Label> { self.0.label(class, p) }
        }
        let frozen = Frozen(scene);
        let z = vec![1.0; theta.len()];
        let g = grad_nerf_sample(&model, &frozen, &dist, &theta, &z, &samples[0], None, 0, &mut probe).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn patchwise_equals_monolithic() {
        let scene = small_scene(16, 2);
        let arch = Architecture::mlp(256, &[3], 2);
        let model = Classifier { arch: arch.clone(), inner: InnerSolver::Sgd(TrainConfig::default()) };
        let theta = ModelParams::<f64>::init(arch, 1).unwrap().theta;
        let dist = RenderDistribution::pose_only(BinDistribution::uniform(8, 0.0, 360.0).unwrap());
        let samples = build_train_set(&scene, &dist, 1, 1, DrawMode::Relaxed, 2).unwrap();
        let z: Vec<f64> = (0..theta.len()).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect();
        let mut peaks = Vec::new();
        let mut whole = None;
        for s in [1, 2, 4, 16] {
            let layout = PatchLayout::new(256, s).unwrap();
            let mut probe = MemoryProbe::default();
            let g = grad_nerf_sample(&model, &scene, &dist, &theta, &z, &samples[1], Some(&layout), 1, &mut probe).unwrap();
            match &whole {
                None => whole = Some(g),
                Some(w) => assert!(rel(&g, w) < 1e-10),
            }
            peaks.push(probe.peak_render_tape);
        }
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
    }

    #[test]
    fn replay_mismatch_is_detected() {
        let (scene, model, dist, theta, mut samples) = tiny_instance(&[]);
        samples[1].example.pixels[5] += 1e-12;
        let z = vec![1.0; theta.len()];
        let mut probe = MemoryProbe::default();
        let r = grad_nerf_sample(&model, &scene, &dist, &theta, &z, &samples[1], None, 1, &mut probe);
        assert_eq!(r, Err(Error::ReplayMismatch { sample: 1, pixel: 5 }));
    }

    #[test]
    fn hessian_from_tape_matches_dense_solve() {
        let scene = small_scene(4, 3);
        let mut arch = Architecture::mlp(16, &[3], 3);
        arch.weight_decay = 0.05;
        let model = Classifier { arch: arch.clone(), inner: InnerSolver::Exact(NewtonConfig::default()) };
        let dist = RenderDistribution::pose_only(BinDistribution::uniform(4, 0.0, 360.0).unwrap());
        let train = to_dataset(&build_train_set(&scene, &dist, 4, 1, DrawMode::Hard, 1).unwrap()).unwrap();
        let val = train.clone().with_role(Role::Val);
        let theta = model.fit(&ModelParams::<f64>::init(arch, 3).unwrap().theta, &train).unwrap().theta;
        let m = theta.len();
        let ex: Vec<_> = train.examples().iter().collect();
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                hvp(|t| model.train_objective(t, &ex), &theta, &e).unwrap()
            })
            .collect();
        let h = DMatrix::from_fn(m, m, |r, c| cols[c][r]) + DMatrix::identity(m, m) * 1e-3;
        let (_, g) = val_value_grad(&model, &theta, &val).unwrap();
        let dense = h.lu().solve(&DVector::from_column_slice(&g)).unwrap();
        let cfg = CgConfig { max_iters: Some(4 * m), residual_tol: 1e-10, damping: 1e-3 };
        let z = solve_tv(&model, &theta, &train, &val, &cfg).unwrap();
        assert!(rel(&z.z, dense.as_slice()) < 1e-6);
    }

    #[test]
    fn outer_step_rules() {
        let mut dist = RenderDistribution::pose_only(BinDistribution::uniform(3, 0.0, 360.0).unwrap());
        let before = dist.clone();
        let mut st = OuterState::default();
        outer_step(&mut dist, &[1.0, -2.0, 0.5], 0.0, 0.9, &mut st).unwrap();
        assert_eq!(dist.psi(), before.psi());

        let mut st = OuterState::default();
        let g = [3.0, 4.0, 0.0];
        outer_step(&mut dist, &g, 0.1, 0.9, &mut st).unwrap();
        let mid = dist.psi();
        outer_step(&mut dist, &g, 0.1, 0.9, &mut st).unwrap();
        let step: f64 = dist.psi().iter().zip(&mid).map(|(a, b): (&f64, &f64)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((step - 0.1 * 1.9 * 5.0).abs() < 1e-12);
        assert!(outer_step(&mut dist, &[f64::NAN, 0.0, 0.0], 0.1, 0.9, &mut st).is_err());

        let emb = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let mut lit = dist.clone();
        lit.lighting = Some(LightingMixture::uniform(emb).unwrap());
        lit.lighting_trainable = true;
        let mut st = OuterState::default();
        outer_step(&mut lit, &[0.0, 0.0, 0.0, -50.0, 30.0, 2.0], 1.0, 0.9, &mut st).unwrap();
        let c = lit.lighting.as_ref().unwrap().coeffs();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12 && c.iter().all(|&x| x >= 0.0));
        assert_eq!(c, &crate::sampler::project_simplex(&[1.0 / 3.0 + 50.0, 1.0 / 3.0 - 30.0, 1.0 / 3.0 - 2.0])[..]);
    }

    #[test]
    fn estimators_and_hessian_sample_modes_run() {
        let scene = small_scene(6, 2);
        let model = Classifier {
            arch: Architecture::mlp(36, &[], 2),
            inner: InnerSolver::Sgd(TrainConfig { epochs: 2, lr: 0.1, ..Default::default() }),
        };
        let val = val_set(&scene, &[0.7, 0.1, 0.1, 0.1], 4, 1);
        let dist = RenderDistribution::pose_only(BinDistribution::uniform(4, 0.0, 360.0).unwrap());
        let problem = Problem { scene: &scene, model: &model, val: &val };
        let theta0 = vec![0.0; 74];
        for estimator in [Estimator::Pathwise, Estimator::ScoreFunction] {
            for hessian_samples in [HessianSamples::Same, HessianSamples::Fresh] {
                let cfg = HypergradConfig { per_class: 4, estimator, hessian_samples, patches: 2, ..Default::default() };
                let r = outer_gradient(&problem, &dist, &theta0, &cfg, 3).unwrap();
                assert_eq!(r.grad_psi.len(), 4);
                assert!(r.grad_psi.iter().all(|g| g.is_finite()));
                assert_eq!(r.samples.len(), 8);
                assert!(r.cg_converged || r.cg_iters == 74);
            }
        }
        let mut lit = dist.clone();
        lit.lighting = Some(LightingMixture::uniform(vec![vec![0.0, 0.8, 0.5], vec![1.0, 0.0, 0.0]]).unwrap());
        lit.lighting_trainable = true;
        let cfg = HypergradConfig { per_class: 2, estimator: Estimator::ScoreFunction, ..Default::default() };
        assert!(outer_gradient(&problem, &lit, &theta0, &cfg, 3).is_err());
        let cfg = HypergradConfig { per_class: 2, patches: 3, ..Default::default() };
        let r = outer_gradient(&problem, &lit, &theta0, &cfg, 3).unwrap();
        assert_eq!(r.grad_psi.len(), 6);
    }

    #[test]
    fn optimize_is_deterministic_and_logs() {
        let scene = small_scene(6, 2);
        let model = Classifier {
            arch: Architecture::mlp(36, &[], 2),
            inner: InnerSolver::Sgd(TrainConfig { epochs: 2, lr: 0.1, ..Default::default() }),
        };
        let val = val_set(&scene, &[0.7, 0.1, 0.1, 0.1], 4, 1);
        let dist = RenderDistribution::pose_only(BinDistribution::uniform(4, 0.0, 360.0).unwrap());
        let problem = Problem { scene: &scene, model: &model, val: &val };
        let cfg = OptimizeConfig {
            budget: 3,
            lr: 1.0,
            momentum: 0.9,
            warm_start_theta: true,
            record_wall_time: false,
            hyper: HypergradConfig { per_class: 3, ..Default::default() },
        };
        let target = [0.7, 0.1, 0.1, 0.1];
        let run = || {
            let mut lines = Vec::new();
            let t = optimize(&problem, &dist, &[0.0; 74], &cfg, Some(&target), 11, |r| {
                lines.push(r.to_json_line());
                Ok(())
            })
            .unwrap();
            (t, lines)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a.records.len(), 3);
        assert_eq!(a.distributions.len(), 4);
        assert_eq!(a.theta, b.theta);
        assert!(la[0].contains("\"cg_iters\"") && la[0].contains("\"wall_ms\":0"));
        let zero = OptimizeConfig { budget: 0, ..cfg.clone() };
        assert!(optimize(&problem, &dist, &[0.0; 74], &zero, None, 1, |_| Ok(())).is_err());
    }
}
