//! The downstream model trained on rendered data.

mod checkpoint;
mod data;
mod model;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use data::{Dataset, Role};
pub use model::{
    box_target, example_loss, forward, loss_from_outputs, Activation, Architecture, LossKind,
    ModelParams,
};
pub use train::{
    accuracy, accuracy_with_box, mean_loss, solve_exact, train, train_objective, val_grad,
    val_loss, NewtonConfig, TrainConfig, TrainReport, DIVERGENCE_LOSS,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::error::Error;
    use crate::renderer::{BBox, BoxLabel, Label, PatchLayout, RenderParams, RenderedExample};
    use crate::sampler::rng_from_seed;
    use crate::scalar::Real;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn example(pixels: Vec<f64>, class: usize) -> RenderedExample<f64> {
        let d = pixels.len();
        RenderedExample {
            pixels,
            label: Label {
                class,
                bbox: BoxLabel::Box(BBox { x0: 0, y0: 0, x1: 0, y1: 0 }),
            },
            params: RenderParams::new(0.0, 0.0, 1.0).unwrap(),
            patch_layout: PatchLayout::whole(d),
            width: d,
            height: 1,
        }
    }

    fn random_data(n: usize, d: usize, classes: usize, seed: u64, role: Role) -> Dataset<f64> {
        let mut rng = rng_from_seed(seed);
        let ex = (0..n)
            .map(|i| example((0..d).map(|_| rng.gen_range(0.0..1.0)).collect(), i % classes))
            .collect();
        Dataset::new(ex, role).unwrap()
    }

    /// Two clusters separated along the first pixel.
    fn separable(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rng_from_seed(seed);
        let ex = (0..n)
            .map(|i| {
                let c = i % 2;
                let mut x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                x[0] = if c == 0 { rng.gen_range(0.0..0.3) } else { rng.gen_range(0.7..1.0) };
                example(x, c)
            })
            .collect();
        Dataset::new(ex, Role::Train).unwrap()
    }

    #[test]
    fn layout_and_head_slice() {
        let arch = Architecture::mlp(64, &[8], 6);
        assert_eq!(arch.num_params(), 64 * 8 + 8 + 8 * 6 + 6);
        assert_eq!(arch.head_range(), 64 * 8 + 8..arch.num_params());
        assert!(Architecture::mlp(4, &[], 1).validate().is_err());
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let arch = Architecture::mlp(2, &[], 3);
        let mut theta = vec![0.0; arch.num_params()];
        theta[arch.num_params() - 3 + 1] = 30.0; // bias of class 1
        let l = example_loss::<f64, f64>(&arch, &theta, &[0.2, 0.9], 1, None);
        assert!(l > 0.0 && l < 1e-12);
    }

    #[test]
    fn uniform_predictor_costs_ln_c() {
        let arch = Architecture::mlp(16, &[5], 6);
        let theta = vec![0.0; arch.num_params()];
        let l = example_loss::<f64, f64>(&arch, &theta, &[0.5; 16], 4, None);
        assert!((l - 6f64.ln()).abs() < 1e-15);
        assert!((l - 1.7918).abs() < 1e-4);
    }

    #[test]
    fn mixed_partial_matches_finite_differences() {
        let mut arch = Architecture::mlp(12, &[5], 3);
        arch.box_head = true;
        let p = ModelParams::<f64>::init(arch.clone(), 3).unwrap();
        let mut rng = rng_from_seed(9);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = Some([0.1, -0.3]);
        // zᵀ ∂/∂x ∇θ l, reverse-over-reverse
        let tape = Tape::new();
        let th = tape.vars(&p.theta);
        let xv = tape.vars(&x);
        let l = example_loss(&arch, &th, &xv, 2, target);
        let g = tape.grad_graph(l, &th).unwrap();
        let mixed = tape.vjp(&g, &z, &xv).unwrap();
        let zg = |x: &[f64]| {
            let tape = Tape::new();
            let th = tape.vars(&p.theta);
            let xv: Vec<_> = x.iter().map(|&v| th[0].lift(v)).collect();
            let l = example_loss(&arch, &th, &xv, 2, target);
            let g = tape.grad(l, &th).unwrap();
            g.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-5;
        for j in 0..12 {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (zg(&up) - zg(&dn)) / (2.0 * h);
            assert!((fd - mixed[j]).abs() <= 1e-4 * mixed[j].abs().max(1e-8), "{j}: {fd} vs {}", mixed[j]);
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = separable(40, 1);
        let p0 = ModelParams::init(Architecture::mlp(4, &[4], 2), 0).unwrap();
        let cfg = TrainConfig { epochs: 200, lr: 0.5, ..Default::default() };
        let r = train(&p0, &data, &cfg).unwrap();
        assert_eq!(accuracy(&r.params, &data).unwrap(), 1.0);
        assert_eq!(r.steps, 200 * 4);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let data = separable(20, 2);
        let p0 = ModelParams::init(Architecture::mlp(4, &[3], 2), 7).unwrap();
        let r = train(&p0, &data, &TrainConfig { lr: 0.0, ..Default::default() }).unwrap();
        assert_eq!(r.params, p0);
        assert!(train(&p0, &data, &TrainConfig { epochs: 0, ..Default::default() }).is_err());
    }

    fn least_squares_setup() -> (Architecture, Dataset<f64>) {
        let mut arch = Architecture::mlp(3, &[], 2);
        arch.loss = LossKind::SquaredError;
        (arch, random_data(20, 3, 2, 5, Role::Train))
    }

    /// Closed-form minimum of the linear least-squares objective.
    fn normal_equations_optimum(data: &Dataset<f64>) -> f64 {
        let n = data.len();
        let a = DMatrix::from_fn(n, 4, |i, j| if j < 3 { data.examples()[i].pixels[j] } else { 1.0 });
        let mut total = 0.0;
        for c in 0..2 {
            let y = DVector::from_fn(n, |i, _| f64::from(u8::from(data.examples()[i].label.class == c)));
            let w = (a.transpose() * &a).lu().solve(&(a.transpose() * &y)).unwrap();
            total += (&a * w - y).norm_squared();
        }
        0.5 * total / n as f64
    }

    #[test]
    fn full_batch_descent_reaches_closed_form_optimum() {
        let (arch, data) = least_squares_setup();
        let p0 = ModelParams::zeros(arch).unwrap();
        let cfg = TrainConfig { epochs: 20_000, lr: 0.5, batch_size: 20, ..Default::default() };
        let r = train(&p0, &data, &cfg).unwrap();
        let best = normal_equations_optimum(&data);
        assert!((r.final_loss - best).abs() < 1e-6, "{} vs {best}", r.final_loss);
        let exact = solve_exact(&p0, &data, &NewtonConfig::default()).unwrap();
        assert!((exact.final_loss - best).abs() < 1e-12);
    }

    #[test]
    fn converged_convex_model_is_stationary_on_its_own_data() {
        let (arch, data) = least_squares_setup();
        let p0 = ModelParams::zeros(arch).unwrap();
        let r = solve_exact(&p0, &data, &NewtonConfig::default()).unwrap();
        let g = val_grad(&r.params, &data.clone().with_role(Role::Val)).unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn newton_solve_on_regularized_mlp() {
        let mut arch = Architecture::mlp(6, &[4], 3);
        arch.weight_decay = 1e-2;
        let data = random_data(30, 6, 3, 8, Role::Train);
        let p0 = ModelParams::init(arch, 1).unwrap();
        let r = solve_exact(&p0, &data, &NewtonConfig::default()).unwrap();
        assert!(r.grad_norm < 1e-8, "grad norm {}", r.grad_norm);
    }

    #[test]
    fn duplicated_validation_set_keeps_mean_loss() {
        let p = ModelParams::init(Architecture::mlp(5, &[3], 3), 2).unwrap();
        let data = random_data(9, 5, 3, 3, Role::Val);
        let mut doubled = data.examples().to_vec();
        doubled.extend(data.examples().iter().cloned());
        let doubled = Dataset::new(doubled, Role::Val).unwrap();
        let (a, b) = (val_loss(&p, &data).unwrap(), val_loss(&p, &doubled).unwrap());
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn val_grad_matches_finite_differences() {
        let mut arch = Architecture::mlp(5, &[4], 3);
        arch.box_head = true;
        let p = ModelParams::init(arch.clone(), 4).unwrap();
        let data = random_data(7, 5, 3, 6, Role::Val);
        let g = val_grad(&p, &data).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.theta[i] += h;
            dn.theta[i] -= h;
            let fd = (val_loss(&up, &data).unwrap() - val_loss(&dn, &data).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-6), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn validation_metrics_reject_wrong_role() {
        let p = ModelParams::init(Architecture::mlp(5, &[3], 3), 2).unwrap();
        let data = random_data(3, 5, 3, 3, Role::Train);
        assert!(val_loss(&p, &data).is_err());
        assert!(matches!(Dataset::<f64>::new(vec![], Role::Val), Err(Error::EmptyDataset)));
    }

    #[test]
    fn random_models_score_chance() {
        let data = random_data(600, 10, 6, 12, Role::Val);
        let accs: Vec<f64> = (0..40)
            .map(|s| accuracy(&ModelParams::init(Architecture::mlp(10, &[6], 6), s).unwrap(), &data).unwrap())
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 1.0 / 6.0).abs() < 0.05, "mean accuracy {mean}");
    }

    #[test]
    fn oracle_and_constant_predictors() {
        // class encoded as the index of the bright pixel
        let ex = (0..12)
            .map(|i| {
                let mut x = vec![0.0; 4];
                x[i % 4] = 1.0;
                example(x, i % 4)
            })
            .collect();
        let data = Dataset::new(ex, Role::Val).unwrap();
        let arch = Architecture::mlp(4, &[], 4);
        let mut theta = vec![0.0; arch.num_params()];
        for c in 0..4 {
            theta[c * 4 + c] = 1.0;
        }
        let oracle = ModelParams::new(arch.clone(), theta).unwrap();
        assert_eq!(accuracy(&oracle, &data).unwrap(), 1.0);
        let mut theta = vec![0.0; arch.num_params()];
        theta[16 + 2] = 1.0;
        let constant = ModelParams::new(arch, theta).unwrap();
        assert_eq!(accuracy(&constant, &data).unwrap(), 0.25);
    }

    #[test]
    fn training_is_reproducible() {
        let data = random_data(30, 6, 3, 1, Role::Train);
        let p0 = ModelParams::init(Architecture::mlp(6, &[5], 3), 3).unwrap();
        let cfg = TrainConfig { epochs: 3, lr: 0.1, seed: 42, ..Default::default() };
        let a = train(&p0, &data, &cfg).unwrap();
        let b = train(&p0, &data, &cfg).unwrap();
        assert_eq!(a.params.theta, b.params.theta);
        let c = train(&p0, &data, &TrainConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.params.theta, c.params.theta);
    }

    #[test]
    fn frozen_backbone_stays_put() {
        let data = random_data(30, 6, 3, 1, Role::Train);
        let p0 = ModelParams::init(Architecture::mlp(6, &[5], 3), 3).unwrap();
        let cfg = TrainConfig { lr: 0.1, freeze_backbone: true, ..Default::default() };
        let r = train(&p0, &data, &cfg).unwrap();
        let head = p0.arch.head_range();
        assert_eq!(r.params.theta[..head.start], p0.theta[..head.start]);
        assert_ne!(r.params.theta[head.clone()], p0.theta[head]);
    }

    #[test]
    fn divergence_is_reported() {
        let (arch, data) = least_squares_setup();
        let p0 = ModelParams::zeros(arch).unwrap();
        let cfg = TrainConfig { epochs: 200, lr: 50.0, ..Default::default() };
        assert!(matches!(train(&p0, &data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn relu_variant_trains() {
        let mut arch = Architecture::mlp(4, &[6], 2);
        arch.activation = Activation::Relu;
        let data = separable(40, 3);
        let r = train(&ModelParams::init(arch, 5).unwrap(), &data, &TrainConfig { epochs: 100, lr: 0.3, ..Default::default() }).unwrap();
        assert!(accuracy(&r.params, &data).unwrap() > 0.9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut arch = Architecture::mlp(5, &[3], 2);
        arch.box_head = true;
        let p = ModelParams::<f64>::init(arch, 11).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert!(buf.starts_with(b"DGCKPT1\n"));
        let back: ModelParams<f64> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint::<f64, _>(buf.as_slice()), Err(Error::Checkpoint(_))));
        let f32_params: ModelParams<f32> = read_checkpoint({
            let mut b = Vec::new();
            write_checkpoint(&mut b, &p).unwrap();
            b
        }
        .as_slice())
        .unwrap();
        assert_eq!(f32_params.len(), p.len());
    }

    #[test]
    fn f32_training_runs() {
        let ex: Vec<RenderedExample<f32>> = (0..10)
            .map(|i| RenderedExample {
                pixels: vec![(i % 2) as f32, 0.5],
                label: Label::class_only(i % 2),
                params: RenderParams::new(0.0, 0.0, 1.0).unwrap(),
                patch_layout: PatchLayout::whole(2),
                width: 2,
                height: 1,
            })
            .collect();
        let data = Dataset::new(ex, Role::Train).unwrap();
        let p0 = ModelParams::<f32>::init(Architecture::mlp(2, &[], 2), 0).unwrap();
        let r = train(&p0, &data, &TrainConfig { epochs: 50, lr: 1.0, ..Default::default() }).unwrap();
        assert_eq!(accuracy(&r.params, &data).unwrap(), 1.0);
        assert!(r.final_loss.value() < 0.5);
    }
}
