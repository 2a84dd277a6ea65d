//! Minimal reverse-mode autodiff tensor engine.
//!
//! Dense, 2-D convolution (stride 1, 'same' zero padding), 2x2 max-pool,
//! relu, sigmoid, softmax cross-entropy, binary cross-entropy on logits, and
//! a few glue ops (concat, per-row mixing), with SGD-momentum and Adam
//! optimizers. Training is single-threaded per model instance; tapes are not
//! shareable across threads.

pub mod checkpoint;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trunk;

pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{Bound, Params};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::rng::Draw as _;

    fn t32(shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(shape, data).unwrap()
    }

    // ── dense oracle ────────────────────────────────────────────────────

    /// Independent naive triple-loop matmul; the oracle for dense_forward.
    fn naive_matmul(x: &[f64], w: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = b[j];
                for p in 0..k {
                    acc += x[i * k + p] * w[p * m + j];
                }
                out[i * m + j] = acc;
            }
        }
        out
    }

    #[test]
    fn dense_identity_weights() {
        let x = t32(vec![1, 2], vec![1.0, 2.0]);
        let w = t32(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t32(vec![2], vec![0.0, 0.0]);
        let y = kernels::dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_case() {
        // [1,1] . [[2],[3]] + [-5] = [0]
        let x = t32(vec![1, 2], vec![1.0, 1.0]);
        let w = t32(vec![2, 1], vec![2.0, 3.0]);
        let b = t32(vec![1], vec![-5.0]);
        let y = kernels::dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn dense_matches_naive_matmul_oracle() {
        let mut rng = stream(11, "dense-oracle", 0);
        let (n, k, m) = (3, 4, 2);
        let xs: Vec<f32> = (0..n * k).map(|_| rng.f64_in(-1.0, 1.0) as f32).collect();
        let ws: Vec<f32> = (0..k * m).map(|_| rng.f64_in(-1.0, 1.0) as f32).collect();
        let bs: Vec<f32> = (0..m).map(|_| rng.f64_in(-1.0, 1.0) as f32).collect();
        let y = kernels::dense_forward(
            &t32(vec![n, k], xs.clone()),
            &t32(vec![k, m], ws.clone()),
            &t32(vec![m], bs.clone()),
        )
        .unwrap();
        let expect = naive_matmul(
            &xs.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &ws.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &bs.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            n,
            k,
            m,
        );
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((*a as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_shape_mismatch_names_operands() {
        let x = t32(vec![1, 3], vec![0.0; 3]);
        let w = t32(vec![2, 2], vec![0.0; 4]);
        let b = t32(vec![2], vec![0.0; 2]);
        let err = kernels::dense_forward(&x, &w, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    // ── simple backward identities ──────────────────────────────────────

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape: Tape<f32> = Tape::new();
        let w = tape.leaf(t32(vec![2, 2], vec![0.3, -1.0, 2.0, 5.0]));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sigmoid_at_zero_is_quarter() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        tape.backward(y).unwrap();
        assert!((tape.grad(x).unwrap()[0] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(t32(vec![2], vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(crate::error::Error::Contract(_))
        ));
    }

    // ── finite-difference oracle ────────────────────────────────────────

    /// Max relative error between analytic and central-difference gradients
    /// for a graph built from the given leaves. Runs at f64.
    fn gradcheck(
        shapes: &[Vec<usize>],
        seed: u64,
        sanitize: impl Fn(usize, f64) -> f64,
        build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
    ) -> f64 {
        let mut rng = stream(seed, "gradcheck", 0);
        let data: Vec<Vec<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(li, s)| {
                (0..s.iter().product::<usize>())
                    .map(|_| sanitize(li, rng.f64_in(-1.0, 1.0)))
                    .collect()
            })
            .collect();

        let eval = |data: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
            let mut tape: Tape<f64> = Tape::new();
            let leaves: Vec<NodeId> = shapes
                .iter()
                .zip(data)
                .map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap()))
                .collect();
            let loss = build(&mut tape, &leaves);
            tape.backward(loss).unwrap();
            let grads = leaves
                .iter()
                .map(|&l| tape.grad(l).map(|g| g.to_vec()).unwrap_or_default())
                .collect();
            (tape.value(loss).data()[0], grads)
        };

        let (_, analytic) = eval(&data);
        let eps = 1e-3;
        let mut max_rel = 0.0f64;
        for li in 0..shapes.len() {
            for ei in 0..data[li].len() {
                let mut plus = data.clone();
                plus[li][ei] += eps;
                let mut minus = data.clone();
                minus[li][ei] -= eps;
                let fp = eval(&plus).0;
                let fm = eval(&minus).0;
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic[li][ei];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        max_rel
    }

    fn keep_away_from_kinks(_: usize, v: f64) -> f64 {
        // relu and max-pool are non-differentiable at ties; nudge values
        // apart so the +-1e-3 probes stay on one side.
        v + 0.05 * v.signum()
    }

    #[test]
    fn gradcheck_two_layer_net() {
        // dense -> relu -> dense -> softmax-ce over all params and input
        let shapes = [
            vec![2, 3], // x
            vec![3, 4], // w1
            vec![4],    // b1
            vec![4, 2], // w2
            vec![2],    // b2
        ];
        let err = gradcheck(&shapes, 5, keep_away_from_kinks, |tape, l| {
            let h = tape.dense(l[0], l[1], l[2]).unwrap();
            let h = tape.relu(h);
            let logits = tape.dense(h, l[3], l[4]).unwrap();
            tape.softmax_ce(logits, &[0, 1]).unwrap()
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradcheck_conv_pool() {
        let shapes = [
            vec![1, 2, 4, 6],    // x
            vec![3, 2, 3, 3],    // w
            vec![3],             // b
        ];
        let err = gradcheck(&shapes, 6, keep_away_from_kinks, |tape, l| {
            let y = tape.conv2d(l[0], l[1], l[2]).unwrap();
            let y = tape.maxpool2(y).unwrap();
            tape.sum(y)
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradcheck_mix_concat_bce() {
        let shapes = [
            vec![3],    // p logits
            vec![3, 2], // pos
            vec![3, 2], // neg
        ];
        let err = gradcheck(&shapes, 7, |_, v| v, |tape, l| {
            let p = tape.sigmoid(l[0]);
            let mixed = tape.mix_rows(p, l[1], l[2]).unwrap();
            let cat = tape.concat_cols(&[mixed, l[1]]).unwrap();
            let z = tape.scale(cat, 0.7);
            let bits: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
            let targets = tape.constant(Tensor::new(vec![3, 4], bits).unwrap());
            tape.bce_logits(z, targets).unwrap()
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    // ── invariants ──────────────────────────────────────────────────────

    #[test]
    fn softmax_ce_finite_for_large_logits() {
        let logits = t32(vec![2, 3], vec![80.0, -80.0, 0.0, -80.0, 80.0, 12.0]);
        let (loss, probs) = kernels::softmax_ce_forward(&logits, &[0, 1]).unwrap();
        assert!(loss.is_finite());
        assert!(probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn maxpool_routes_exactly_the_incoming_gradient() {
        let mut rng = stream(9, "pool", 0);
        let data: Vec<f32> = (0..2 * 3 * 4 * 4).map(|_| rng.f64_in(-1.0, 1.0) as f32).collect();
        let x = t32(vec![2, 3, 4, 4], data);
        let (y, argmax) = kernels::maxpool2_forward(&x).unwrap();
        let g_data: Vec<f32> = (0..y.numel()).map(|_| rng.f64_in(-1.0, 1.0) as f32).collect();
        let g = t32(y.shape().to_vec(), g_data.clone());
        let dx = kernels::maxpool2_backward(&g, &argmax, x.shape());
        let routed: f64 = dx.data().iter().map(|&v| v as f64).sum();
        let incoming: f64 = g_data.iter().map(|&v| v as f64).sum();
        assert!((routed - incoming).abs() < 1e-5);
        // Gradient lands only on argmax positions.
        let allowed: std::collections::HashSet<usize> =
            argmax.iter().map(|&i| i as usize).collect();
        for (i, v) in dx.data().iter().enumerate() {
            assert!(*v == 0.0 || allowed.contains(&i));
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut rng = stream(123, "det", 0);
            let mut params: Params<f32> = Params::new();
            params.add_dense("fc1", 6, 8, &mut rng).unwrap();
            params.add_dense("fc2", 8, 3, &mut rng).unwrap();
            let mut opt = Sgd::new(0.05f32, 0.9);
            let x = t32(vec![4, 6], (0..24).map(|i| (i as f32 * 0.13).sin()).collect());
            let labels = [0u16, 1, 2, 1];
            for _ in 0..5 {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let xn = tape.constant(x.clone());
                let h = tape
                    .dense(xn, bound.id("fc1.weight"), bound.id("fc1.bias"))
                    .unwrap();
                let h = tape.relu(h);
                let logits = tape
                    .dense(h, bound.id("fc2.weight"), bound.id("fc2.bias"))
                    .unwrap();
                let loss = tape.softmax_ce(logits, &labels).unwrap();
                tape.backward(loss).unwrap();
                params.absorb_grads(&tape, &bound).unwrap();
                opt.step(&mut params).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        for (name, t) in a.iter() {
            assert_eq!(t.data(), b.get(name).unwrap().data(), "{name}");
        }
    }

    #[test]
    fn mix_rows_is_exact_at_the_endpoints() {
        let mut tape: Tape<f32> = Tape::new();
        let pos = t32(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let neg = t32(vec![2, 3], vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4]);
        let p = tape.constant(t32(vec![2], vec![1.0, 0.0]));
        let pos_n = tape.constant(pos.clone());
        let neg_n = tape.constant(neg.clone());
        let mixed = tape.mix_rows(p, pos_n, neg_n).unwrap();
        assert_eq!(&tape.value(mixed).data()[0..3], &pos.data()[0..3]);
        assert_eq!(&tape.value(mixed).data()[3..6], &neg.data()[3..6]);
    }
}
