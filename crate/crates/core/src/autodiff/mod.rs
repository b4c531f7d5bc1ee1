//! Minimal reverse-mode differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Ops append nodes and return
//! [`Var`] handles; [`Tape::backward`] returns the gradient of a scalar with
//! respect to every node.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SceneRng;

    fn random(rng: &mut SceneRng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).item(), 6.0);
    }

    #[test]
    fn sum_gives_ones_and_unreached_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(3, 4, 2.0));
        let unused = t.param(Tensor::filled(2, 2, 1.0));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.wrt(x).data().iter().all(|v| *v == 1.0));
        assert!(!g.reached(unused));
        assert_eq!(g.wrt(unused), Tensor::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(2, 1));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(2, 3));
        let b = t.param(Tensor::zeros(3, 2));
        assert!(t.add(a, b).is_err());
        assert!(t.matmul(a, a).is_err());
        assert!(t.matmul(a, b).is_ok());
        assert!(t.concat_rows(a, b).is_err());
        assert!(t.cosine_similarity_rows(a, b).is_err());
    }

    #[test]
    fn matmul_gradient_matches_differences() {
        let mut rng = SceneRng::new(1);
        let b = random(&mut rng, 3, 2);
        let a = random(&mut rng, 4, 3);
        let err = grad_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let y = t.matmul(x, bv)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let err = grad_check(
            |t, x| {
                let av = t.constant(a.clone());
                let y = t.matmul(av, x)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(3, 2, vec![1.0, 5.0, 4.0, 5.0, 2.0, 0.0]).unwrap());
        let m = t.max_pool_rows(x).unwrap();
        assert_eq!(t.value(m).data(), &[4.0, 5.0]);
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap().wrt(x);
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kinks_have_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(1, 3));
        let r = t.relu(x).unwrap();
        let n = t.l2_norm_rows(x).unwrap();
        let s1 = t.sum(r).unwrap();
        let both = t.add(s1, n).unwrap();
        assert_eq!(t.backward(both).unwrap().wrt(x), Tensor::zeros(1, 3));
    }

    #[test]
    fn quadratic_form_is_exact() {
        let mut rng = SceneRng::new(2);
        let q = random(&mut rng, 4, 4);
        let x = random(&mut rng, 1, 4);
        let err = grad_check(
            |t, x| {
                let qv = t.constant(q.clone());
                let y = t.matmul(x, qv)?;
                let p = t.mul(y, x)?;
                t.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::new(1, 6, vec![-0.7, -0.3, -0.1, 0.2, 0.5, 0.9]).unwrap();
        let err = grad_check(
            |t, x| {
                let r = t.relu(x)?;
                let sq = t.mul(r, r)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut rng = SceneRng::new(3);
        let other = random(&mut rng, 5, 3);
        let bias = random(&mut rng, 1, 3);
        for _ in 0..5 {
            let x = random(&mut rng, 5, 3);
            let err = grad_check(
                |t, x| {
                    let o = t.constant(other.clone());
                    let b = t.constant(bias.clone());
                    let a = t.add(x, o)?;
                    let s = t.sub(a, x)?;
                    let s = t.add(s, x)?;
                    let m = t.mul(s, x)?;
                    let m = t.add_row_bias(m, b)?;
                    let n = t.l2_norm_rows(m)?;
                    let c = t.cosine_similarity_rows(x, o)?;
                    let nc = t.concat_cols(n, c)?;
                    let top = t.slice_rows(nc, 1, 3)?;
                    let stacked = t.concat_rows(nc, top)?;
                    let p = t.max_pool_rows(stacked)?;
                    let p = t.broadcast_rows(p, 4)?;
                    let mp = t.mean(p)?;
                    let sc = t.scale(mp, 0.5)?;
                    let sh = t.add_scalar(sc, 2.0)?;
                    let mn = t.min_pool_rows(x)?;
                    let mn = t.reshape(mn, 3, 1)?;
                    let smn = t.sum(mn)?;
                    let tot = t.add(sh, smn)?;
                    let g = t.gather_rows(x, &[4, 0, 4, 2])?;
                    let gg = t.mul(g, g)?;
                    let sg = t.sum(gg)?;
                    let tot = t.add(tot, sg)?;
                    let msq = t.mean(m)?;
                    t.add(tot, msq)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn cosine_of_opposites_is_exactly_minus_one() {
        let mut rng = SceneRng::new(4);
        for _ in 0..100 {
            let a = random(&mut rng, 1, 3);
            let neg = Tensor::new(1, 3, a.data().iter().map(|v| -v).collect()).unwrap();
            let mut t = Tape::new();
            let x = t.constant(a);
            let y = t.constant(neg);
            let c = t.cosine_similarity_rows(x, y).unwrap();
            assert_eq!(t.value(c).item(), -1.0);
        }
    }

    #[test]
    fn linearity_of_gradients() {
        let mut rng = SceneRng::new(5);
        let xv = random(&mut rng, 4, 3);
        let grad = |which: u8| {
            let mut t = Tape::new();
            let x = t.param(xv.clone());
            let n = t.l2_norm_rows(x).unwrap();
            let l1 = t.sum(n).unwrap();
            let sq = t.mul(x, x).unwrap();
            let l2 = t.mean(sq).unwrap();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let a = t.scale(l1, 2.5).unwrap();
                    let b = t.scale(l2, -0.75).unwrap();
                    t.add(a, b).unwrap()
                }
            };
            t.backward(loss).unwrap().wrt(x)
        };
        let (g1, g2, g) = (grad(1), grad(2), grad(0));
        for i in 0..g.len() {
            let expect = 2.5 * g1.data()[i] - 0.75 * g2.data()[i];
            assert!((g.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_backward_is_fresh_and_deterministic() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        let g1 = t.backward(s).unwrap().wrt(x);
        let g2 = t.backward(s).unwrap().wrt(x);
        assert_eq!(g1, g2);
        assert_eq!(g1.data(), &[2.0, -4.0, 6.0, 1.0]);
    }
}
