//! Reverse-mode differentiation over scalars.
//!
//! A [`Tape`] records every operation performed on its [`Var`]s. Gradients
//! and vector-Jacobian products are single reverse sweeps; Hessian-vector
//! products differentiate a recorded gradient graph a second time.

mod hvp;
mod tape;
mod var;

pub use hvp::{hvp, HessianOperator};
pub use tape::{NodeId, Tape};
pub use var::Var;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::scalar::Real;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(a.abs()).max(1e-12)
    }

    #[test]
    fn product_rule() {
        let tape = Tape::<f64>::new();
        let a = tape.var(3.0);
        let b = tape.var(4.0);
        let g = tape.grad(a * b, &[a, b]).unwrap();
        assert_eq!(g, vec![4.0, 3.0]);
    }

    #[test]
    fn identity_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.var(-2.5);
        assert_eq!(tape.grad(a, &[a]).unwrap(), vec![1.0]);
    }

    #[test]
    fn exp_sin_matches_finite_difference() {
        let tape = Tape::<f64>::new();
        let a = tape.var(0.7);
        let y = a.sin().exp();
        let g = tape.grad(y, &[a]).unwrap()[0];
        let fd = central_diff(|x| x.sin().exp(), 0.7, 1e-5);
        assert!(rel_err(g, fd) < 1e-6, "{g} vs {fd}");
    }

    type Prim = (
        &'static str,
        fn(f64, f64) -> f64,
        for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Var<'t, f64>,
    );

    #[test]
    fn every_primitive_matches_finite_differences() {
        let prims: Vec<Prim> = vec![
            ("add", |a, b| a + b, |a, b| a + b),
            ("sub", |a, b| a - b, |a, b| a - b),
            ("mul", |a, b| a * b, |a, b| a * b),
            ("div", |a, b| a / b, |a, b| a / b),
            ("add_c", |a, _| a + 1.5, |a, _| a + 1.5),
            ("sub_c", |a, _| a - 1.5, |a, _| a - 1.5),
            ("rsub_c", |a, _| 1.5 - a, |a, _| a.rsub(1.5)),
            ("mul_c", |a, _| a * 1.5, |a, _| a * 1.5),
            ("div_c", |a, _| a / 1.5, |a, _| a / 1.5),
            ("neg", |a, _| -a, |a, _| -a),
            ("exp", |a, _| a.exp(), |a, _| a.exp()),
            ("ln", |a, _| a.ln(), |a, _| a.ln()),
            ("pow", |a, _| a.powf(2.3), |a, _| a.powf(2.3)),
            ("sin", |a, _| a.sin(), |a, _| a.sin()),
            ("cos", |a, _| a.cos(), |a, _| a.cos()),
            ("tanh", |a, _| a.tanh(), |a, _| a.tanh()),
            ("relu", |a, _| a.max(0.0), |a, _| a.relu()),
            ("max", |a, b| a.max(b), |a, b| Real::max(a, b)),
            ("sum", |a, b| a + b + a, |a, b| Var::sum(&[a, b, a])),
            ("dot", |a, b| a * b + b * 2.0, |a, b| {
                let two = a.lift(2.0);
                Var::dot(&[a, b], &[b, two])
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, f, g) in prims {
            for _ in 0..20 {
                // positive, away from kinks at 0 and from a == b
                let a: f64 = rng.gen_range(0.2..3.0);
                let b: f64 = a + rng.gen_range(0.1..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let b = if b.abs() < 0.1 { 0.5 } else { b };
                let tape = Tape::<f64>::new();
                let (va, vb) = (tape.var(a), tape.var(b));
                let out = g(va, vb);
                assert_eq!(out.value(), f(a, b), "{name} value");
                let grad = tape.grad(out, &[va, vb]).unwrap();
                let fa = central_diff(|x| f(x, b), a, 1e-6);
                let fb = central_diff(|y| f(a, y), b, 1e-6);
                for (got, want) in [(grad[0], fa), (grad[1], fb)] {
                    let err = (got - want).abs() / want.abs().max(1.0);
                    assert!(err < 1e-5, "{name} at ({a},{b}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn vjp_linearity_and_zero_weights() {
        let tape = Tape::<f64>::new();
        let a = tape.var(5.0);
        let outs = [a * 2.0, a * 3.0];
        assert_eq!(tape.vjp(&outs, &[1.0, 1.0], &[a]).unwrap(), vec![5.0]);
        assert_eq!(tape.vjp(&outs, &[0.0, 0.0], &[a]).unwrap(), vec![0.0]);
    }

    fn poly_map<'t>(x: &[Var<'t, f64>]) -> Vec<Var<'t, f64>> {
        let (a, b, c) = (x[0], x[1], x[2]);
        vec![
            a * b + c,
            a * a * c - b,
            (b * c).powf(2.0) + a * 3.0,
            a * b * c + c * c * c,
        ]
    }

    #[test]
    fn vjp_matches_dense_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // dense Jacobian, one row per output from independent grad calls
            let mut jac = vec![vec![0.0; 3]; 4];
            for (i, row) in jac.iter_mut().enumerate() {
                let tape = Tape::<f64>::new();
                let xs = tape.vars(&x);
                let y = poly_map(&xs);
                *row = tape.grad(y[i], &xs).unwrap();
            }
            let tape = Tape::<f64>::new();
            let xs = tape.vars(&x);
            let y = poly_map(&xs);
            let got = tape.vjp(&y, &w, &xs).unwrap();
            for j in 0..3 {
                let want: f64 = (0..4).map(|i| w[i] * jac[i][j]).sum();
                assert!((got[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
            // unit weights pick out rows
            for (i, row) in jac.iter().enumerate() {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                assert_eq!(&tape.vjp(&y, &e, &xs).unwrap(), row);
            }
        }
    }

    #[test]
    fn errors_are_reported() {
        let tape = Tape::<f64>::new();
        let other = Tape::<f64>::new();
        let a = tape.var(1.0);
        let b = other.var(2.0);
        assert!(matches!(tape.grad(a, &[b]), Err(Error::NotOnTape { .. })));
        assert!(matches!(
            tape.vjp(&[a], &[1.0, 2.0], &[a]),
            Err(Error::LengthMismatch { .. })
        ));
        let z = tape.var(0.0);
        let bad = z.ln() * a;
        assert!(matches!(tape.grad(bad, &[a]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn hvp_quadratics() {
        let v = [0.3_f64, -1.2, 4.0];
        let h = hvp(
            |t| Var::dot(t, t) * 0.5,
            &[1.0, 2.0, -0.5],
            &v,
        )
        .unwrap();
        for (a, b) in h.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
        let h = hvp(
            |t| (t[0] * t[0] * 2.0 + t[1] * t[1] * 4.0) * 0.5,
            &[0.7, -0.1],
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(h, vec![2.0, 4.0]);
    }

    /// 2-3-1 tanh network with squared error on three fixed points.
    fn mlp_loss<'t>(t: &[Var<'t, f64>]) -> Var<'t, f64> {
        let data = [([0.5, -1.0], 0.3), ([1.5, 0.2], -0.7), ([-0.3, 0.8], 1.1)];
        let mut terms = Vec::new();
        for (x, y) in data {
            let mut hidden = Vec::new();
            for j in 0..3 {
                let pre = t[j * 2] * x[0] + t[j * 2 + 1] * x[1] + t[6 + j];
                hidden.push(pre.tanh());
            }
            let out = Var::dot(&hidden, &t[9..12]) + t[12];
            terms.push((out - y).square());
        }
        Var::sum(&terms) * 0.5
    }

    fn mlp_grad(theta: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let t = tape.vars(theta);
        let l = mlp_loss(&t);
        tape.grad(l, &t).unwrap()
    }

    #[test]
    fn hvp_matches_finite_difference_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = hvp(|t| mlp_loss(t), &theta, &v).unwrap();
        let h = 1e-4;
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
        let (gp, gm) = (mlp_grad(&plus), mlp_grad(&minus));
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let num: f64 = got.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "rel err {}", num / den);
    }

    #[test]
    fn hvp_is_linear_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = HessianOperator::new(&theta, |t| mlp_loss(t)).unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..13).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let (hu, hv, hc) = (op.apply(&u).unwrap(), op.apply(&v).unwrap(), op.apply(&combo).unwrap());
            for i in 0..13 {
                let want = alpha * hu[i] + beta * hv[i];
                assert!((hc[i] - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
            let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
            let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
            assert!((uhv - vhu).abs() <= 1e-8 * uhv.abs().max(1.0));
        }
    }

    #[test]
    fn tape_replays_from_leaves() {
        let tape = Tape::<f64>::new();
        let x = tape.vars(&[0.3, 1.7]);
        let y = (x[0] * x[1]).tanh() + x[0].rsub(2.0) / 3.0;
        let _ = Var::dot(&[y, x[0]], &x).exp();
        assert!(tape.replay_matches());
    }

    #[test]
    fn single_precision_tape() {
        let tape = Tape::<f32>::new();
        let a = tape.var(2.0f32);
        let g = tape.grad(a * a * a, &[a]).unwrap();
        assert_eq!(g, vec![12.0f32]);
    }

    #[test]
    fn inputs_recorded_after_output_get_zero() {
        let tape = Tape::<f64>::new();
        let v = tape.vars(&[1.0, 2.0, 3.0]);
        let g = tape.vjp(&[v[0]], &[1.0], &v).unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0]);
    }
}
