//! Minimal reverse-mode differentiation core and the neural primitives the
//! policies are built from: dense layers, activations, an LSTM cell,
//! binary Gumbel-Softmax sampling, attention aggregation, and Adam.
//!
//! All forward computation is recorded on a [`Tape`]; [`Tape::backward`]
//! traverses the record in exact reverse order and accumulates gradients
//! into a [`ParamStore`]. A tape is single-threaded; parallel episodes run
//! on separate tapes against parameter snapshots.

mod checkpoint;
pub mod gradcheck;
mod nn;
mod params;
mod tape;

pub use checkpoint::{checkpoint_digest, load_checkpoint, save_checkpoint};
pub use nn::{
    attention_aggregate, dense_layer, gumbel_binary, lstm_step, xavier_uniform, LstmParamIds,
    LstmNodes,
};
pub use params::{ParamId, ParamStore};
pub use tape::{NodeId, Op, Tape};

/// Binary Gumbel-Softmax configuration with the per-episode temperature
/// schedule.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GumbelConfig {
    /// Initial temperature.
    pub tau0: f64,
    /// Multiplicative decay applied per training episode.
    pub decay: f64,
    /// Temperature floor.
    pub floor: f64,
    /// Straight-through sampling: hard 0/1 forward, relaxed backward.
    pub hard: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau0: 1.0,
            decay: 0.995,
            floor: 0.5,
            hard: true,
        }
    }
}

impl GumbelConfig {
    /// Temperature for a given training episode index.
    pub fn tau_at(&self, episode: u64) -> f64 {
        (self.tau0 * self.decay.powi(episode as i32)).max(self.floor)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("parameter '{0}' already registered")]
    DuplicateParam(String),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("gradient missing or inconsistent for parameter '{0}'")]
    MissingGradient(String),
    #[error("attention over an empty inbox")]
    EmptyInbox,
    #[error("backward root must be a scalar node")]
    NonScalarRoot,
    #[error("checkpoint rejected: {0}")]
    CheckpointMismatch(String),
    #[error("io failure: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar readout `c . y` as a tape node, for backward roots.
    fn scalar_loss(tape: &mut Tape, y: NodeId, c: &[f64]) -> NodeId {
        let w = tape.input(c);
        tape.dense(y, w, None, 1, c.len()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn dense_identity_and_bias_examples() {
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, -2.0, 3.0]);
        let eye = tape.input(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero_b = tape.zeros(3);
        let y = tape.dense(x, eye, Some(zero_b), 3, 3).unwrap();
        assert_eq!(tape.val(y), &[1.0, -2.0, 3.0]);

        let zeros_w = tape.zeros(9);
        let b = tape.input(&[0.5, 0.25, -1.0]);
        let y2 = tape.dense(x, zeros_w, Some(b), 3, 3).unwrap();
        assert_eq!(tape.val(y2), &[0.5, 0.25, -1.0]);

        let bad = tape.dense(x, eye, None, 3, 4);
        assert!(matches!(bad, Err(DiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = rngstream::substream(1, "gradcheck", &[]);
        for trial in 0..100 {
            let xv = rand_vec(&mut rng, 4);
            let wv = rand_vec(&mut rng, 12);
            let bv = rand_vec(&mut rng, 3);
            let cv = rand_vec(&mut rng, 3);

            // Analytic gradients via one backward pass.
            let mut store = ParamStore::new();
            let wp = store.register("w", &[3, 4], wv.clone()).unwrap();
            let bp = store.register("b", &[3], bv.clone()).unwrap();
            let xp = store.register("x", &[4], xv.clone()).unwrap();
            let mut tape = Tape::new();
            let x = tape.param(&store, xp);
            let w = tape.param(&store, wp);
            let b = tape.param(&store, bp);
            let y = tape.dense(x, w, Some(b), 3, 4).unwrap();
            let loss = scalar_loss(&mut tape, y, &cv);
            tape.backward(loss, &mut store).unwrap();

            // Finite differences over a flattened (w, b, x) vector.
            let eval = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
                let mut t = Tape::new();
                let xn = t.input(x);
                let wn = t.input(w);
                let bn = t.input(b);
                let y = t.dense(xn, wn, Some(bn), 3, 4).unwrap();
                let l = scalar_loss(&mut t, y, &cv);
                t.val(l)[0]
            };
            let joined: Vec<f64> = [wv.clone(), bv.clone(), xv.clone()].concat();
            let fd = gradcheck::central_diff(
                |v| eval(&v[0..12], &v[12..15], &v[15..19]),
                &joined,
                1e-5,
            );
            let analytic: Vec<f64> = [store.grad(wp), store.grad(bp), store.grad(xp)].concat();
            let err = gradcheck::max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn activation_examples() {
        let mut tape = Tape::new();
        let x = tape.input(&[0.0, 0.0, 0.0]);
        let s = tape.softmax(x);
        for v in tape.val(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x2 = tape.input(&[-2.0, 0.0, 3.5]);
        let r = tape.relu(x2);
        assert_eq!(tape.val(r), &[0.0, 0.0, 3.5]);
    }

    #[test]
    fn unary_and_composite_gradients_match_finite_differences() {
        // Covers sigmoid, tanh, relu, softmax, clamp, slice, add, mul,
        // scale, sum_n and log_softmax_pick in one composite graph.
        let mut rng = rngstream::substream(2, "gradcheck", &[]);
        for trial in 0..100 {
            let xv = rand_vec(&mut rng, 6);
            let cv = rand_vec(&mut rng, 3);

            let build = |x: &[f64], store: Option<(&mut ParamStore, &mut Tape)>| -> f64 {
                let run = |tape: &mut Tape, xn: NodeId| -> NodeId {
                    let a = tape.slice(xn, 0, 3).unwrap();
                    let b = tape.slice(xn, 3, 3).unwrap();
                    let sa = tape.sigmoid(a);
                    let tb = tape.tanh(b);
                    let m = tape.mul(sa, tb).unwrap();
                    let r = tape.relu(m);
                    let k = tape.scale(r, 1.7);
                    let soft = tape.softmax(k);
                    let cl = tape.clamp(soft, -0.9, 0.9);
                    let both = tape.sum_n(&[cl, m]).unwrap();
                    let lp = tape.log_softmax_pick(both, 1).unwrap();
                    let readout = scalar_loss(tape, both, &cv);
                    tape.sum_n(&[lp, readout]).unwrap()
                };
                match store {
                    Some((store, tape)) => {
                        let xp = store.register("x", &[6], x.to_vec()).unwrap();
                        let xn = tape.param(store, xp);
                        let l = run(tape, xn);
                        tape.backward(l, store).unwrap();
                        tape.val(l)[0]
                    }
                    None => {
                        let mut tape = Tape::new();
                        let xn = tape.input(x);
                        let l = run(&mut tape, xn);
                        tape.val(l)[0]
                    }
                }
            };

            let mut store = ParamStore::new();
            let mut tape = Tape::new();
            build(&xv, Some((&mut store, &mut tape)));
            let analytic = store.grad(store.id("x").unwrap()).to_vec();
            let fd = gradcheck::central_diff(|v| build(v, None), &xv, 1e-5);
            let err = gradcheck::max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn lstm_zero_everything_propagates_zero_state() {
        let mut store = ParamStore::new();
        store.register("l/wx", &[16, 2], vec![0.0; 32]).unwrap();
        store.register("l/wh", &[16, 4], vec![0.0; 64]).unwrap();
        store.register("l/b", &[16], vec![0.0; 16]).unwrap();
        let p = LstmParamIds {
            wx: store.id("l/wx").unwrap(),
            wh: store.id("l/wh").unwrap(),
            b: store.id("l/b").unwrap(),
            hidden: 4,
        };
        let mut tape = Tape::new();
        let x = tape.zeros(2);
        let h = tape.zeros(4);
        let c = tape.zeros(4);
        let out = lstm_step(&mut tape, &store, x, LstmNodes { h, c }, p).unwrap();
        assert!(tape.val(out.h).iter().all(|v| *v == 0.0));
        assert!(tape.val(out.c).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell() {
        let hidden = 3;
        let mut store = ParamStore::new();
        store
            .register("l/wx", &[4 * hidden, 2], vec![0.0; 4 * hidden * 2])
            .unwrap();
        store
            .register("l/wh", &[4 * hidden, hidden], vec![0.0; 4 * hidden * hidden])
            .unwrap();
        // Bias: input gate strongly closed, forget gate strongly open.
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].iter_mut().for_each(|b| *b = -40.0);
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 40.0);
        store.register("l/b", &[4 * hidden], bias).unwrap();
        let p = LstmParamIds {
            wx: store.id("l/wx").unwrap(),
            wh: store.id("l/wh").unwrap(),
            b: store.id("l/b").unwrap(),
            hidden,
        };
        let mut tape = Tape::new();
        let x = tape.input(&[0.3, -0.8]);
        let h = tape.zeros(hidden);
        let c = tape.input(&[0.2, -0.6, 1.1]);
        let out = lstm_step(&mut tape, &store, x, LstmNodes { h, c }, p).unwrap();
        for (a, b) in tape.val(out.c).iter().zip([0.2, -0.6, 1.1]) {
            assert!((a - b).abs() < 1e-9, "cell preserved");
        }
    }

    #[test]
    fn lstm_five_step_unrolled_gradient_matches_finite_differences() {
        let hidden = 3;
        let input = 2;
        let mut rng = rngstream::substream(3, "gradcheck", &[]);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, input)).collect();
        let cv = rand_vec(&mut rng, hidden);
        let wx0 = rand_vec(&mut rng, 4 * hidden * input);
        let wh0 = rand_vec(&mut rng, 4 * hidden * hidden);
        let b0 = rand_vec(&mut rng, 4 * hidden);

        let run = |wx: &[f64], wh: &[f64], b: &[f64], grads: bool| -> (f64, Vec<f64>) {
            let mut store = ParamStore::new();
            let wxp = store.register("l/wx", &[4 * hidden, input], wx.to_vec()).unwrap();
            let whp = store.register("l/wh", &[4 * hidden, hidden], wh.to_vec()).unwrap();
            let bp = store.register("l/b", &[4 * hidden], b.to_vec()).unwrap();
            let p = LstmParamIds { wx: wxp, wh: whp, b: bp, hidden };
            let mut tape = Tape::new();
            let mut state = LstmNodes {
                h: tape.zeros(hidden),
                c: tape.zeros(hidden),
            };
            for x in &xs {
                let xn = tape.input(x);
                state = lstm_step(&mut tape, &store, xn, state, p).unwrap();
            }
            let loss = scalar_loss(&mut tape, state.h, &cv);
            let val = tape.val(loss)[0];
            if grads {
                tape.backward(loss, &mut store).unwrap();
                let g = [store.grad(wxp), store.grad(whp), store.grad(bp)].concat();
                (val, g)
            } else {
                (val, Vec::new())
            }
        };

        let (_, analytic) = run(&wx0, &wh0, &b0, true);
        let joined: Vec<f64> = [wx0.clone(), wh0.clone(), b0.clone()].concat();
        let nx = 4 * hidden * input;
        let nh = 4 * hidden * hidden;
        let fd = gradcheck::central_diff(
            |v| run(&v[0..nx], &v[nx..nx + nh], &v[nx + nh..], false).0,
            &joined,
            1e-5,
        );
        let err = gradcheck::max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn gumbel_hard_outputs_are_bits_matching_relaxed_argmax() {
        let mut rng = rngstream::substream(4, "gumbel", &[]);
        let mut tape = Tape::new();
        let logits = tape.input(&rand_vec(&mut rng, 16));
        let m = gumbel_binary(&mut tape, logits, 0.7, true, &mut rng).unwrap();
        assert_eq!(tape.val(m).len(), 8);
        for v in tape.val(m) {
            assert!(*v == 0.0 || *v == 1.0);
        }
        // Straight-through consistency: redo with the same noise, soft.
        let mut rng1 = rngstream::substream(5, "gumbel", &[]);
        let mut rng2 = rngstream::substream(5, "gumbel", &[]);
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let base = rand_vec(&mut rng, 8);
        let l1 = t1.input(&base);
        let l2 = t2.input(&base);
        let hard = gumbel_binary(&mut t1, l1, 1.0, true, &mut rng1).unwrap();
        let soft = gumbel_binary(&mut t2, l2, 1.0, false, &mut rng2).unwrap();
        for (h, s) in t1.val(hard).iter().zip(t2.val(soft)) {
            assert_eq!(*h, if *s > 0.5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn gumbel_empirical_frequencies() {
        let mut rng = rngstream::substream(6, "gumbel", &[]);
        // Strong margin toward bit = 1.
        let mut ones = 0;
        for _ in 0..10_000 {
            let mut tape = Tape::new();
            let logits = tape.input(&[20.0, 0.0]);
            let m = gumbel_binary(&mut tape, logits, 0.5, true, &mut rng).unwrap();
            if tape.val(m)[0] == 1.0 {
                ones += 1;
            }
        }
        assert!(ones as f64 / 10_000.0 > 0.999, "got {ones}");
        // Symmetric logits.
        let mut ones = 0;
        for _ in 0..10_000 {
            let mut tape = Tape::new();
            let logits = tape.input(&[0.3, 0.3]);
            let m = gumbel_binary(&mut tape, logits, 1.0, true, &mut rng).unwrap();
            if tape.val(m)[0] == 1.0 {
                ones += 1;
            }
        }
        let freq = ones as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "got {freq}");
    }

    #[test]
    fn gumbel_soft_gradient_matches_finite_differences_with_frozen_noise() {
        let mut rng = rngstream::substream(7, "gumbel", &[]);
        for trial in 0..100 {
            let lv = rand_vec(&mut rng, 8);
            let cv = rand_vec(&mut rng, 4);
            let noise_seed = 1000 + trial;
            let eval = |l: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
                let mut noise = rngstream::substream(noise_seed, "noise", &[]);
                let mut store = ParamStore::new();
                let lp = store.register("l", &[8], l.to_vec()).unwrap();
                let mut tape = Tape::new();
                let ln = tape.param(&store, lp);
                let m = gumbel_binary(&mut tape, ln, 0.8, false, &mut noise).unwrap();
                let loss = scalar_loss(&mut tape, m, &cv);
                let val = tape.val(loss)[0];
                if want_grad {
                    tape.backward(loss, &mut store).unwrap();
                    (val, store.grad(lp).to_vec())
                } else {
                    (val, Vec::new())
                }
            };
            let (_, analytic) = eval(&lv, true);
            let fd = gradcheck::central_diff(|v| eval(v, false).0, &lv, 1e-5);
            let err = gradcheck::max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn attention_examples() {
        let mut tape = Tape::new();
        let q = tape.input(&[0.2, -0.4, 0.9]);
        let m1 = tape.input(&[1.0, 2.0, 3.0]);
        let (out, alpha) = attention_aggregate(&mut tape, q, &[m1]).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(tape.val(out), &[1.0, 2.0, 3.0]);

        // All neighbors sending the same message: output equals it.
        let m2 = tape.input(&[1.0, 2.0, 3.0]);
        let m3 = tape.input(&[1.0, 2.0, 3.0]);
        let (out2, alpha2) = attention_aggregate(&mut tape, q, &[m1, m2, m3]).unwrap();
        for (a, b) in tape.val(out2).iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = alpha2.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(alpha2.iter().all(|a| *a > 0.0));

        assert_eq!(
            attention_aggregate(&mut tape, q, &[]).unwrap_err(),
            DiffError::EmptyInbox
        );
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let d = 4;
        let mut rng = rngstream::substream(8, "gradcheck", &[]);
        for trial in 0..100 {
            let qv = rand_vec(&mut rng, d);
            let m1v = rand_vec(&mut rng, d);
            let m2v = rand_vec(&mut rng, d);
            let m3v = rand_vec(&mut rng, d);
            let cv = rand_vec(&mut rng, d);
            let eval = |q: &[f64], m1: &[f64], m2: &[f64], m3: &[f64], want: bool| -> (f64, Vec<f64>) {
                let mut store = ParamStore::new();
                let qp = store.register("q", &[d], q.to_vec()).unwrap();
                let p1 = store.register("m1", &[d], m1.to_vec()).unwrap();
                let p2 = store.register("m2", &[d], m2.to_vec()).unwrap();
                let p3 = store.register("m3", &[d], m3.to_vec()).unwrap();
                let mut tape = Tape::new();
                let qn = tape.param(&store, qp);
                let n1 = tape.param(&store, p1);
                let n2 = tape.param(&store, p2);
                let n3 = tape.param(&store, p3);
                let (out, _) = attention_aggregate(&mut tape, qn, &[n1, n2, n3]).unwrap();
                let loss = scalar_loss(&mut tape, out, &cv);
                let val = tape.val(loss)[0];
                if want {
                    tape.backward(loss, &mut store).unwrap();
                    let g = [
                        store.grad(qp),
                        store.grad(p1),
                        store.grad(p2),
                        store.grad(p3),
                    ]
                    .concat();
                    (val, g)
                } else {
                    (val, Vec::new())
                }
            };
            let (_, analytic) = eval(&qv, &m1v, &m2v, &m3v, true);
            let joined: Vec<f64> = [qv.clone(), m1v.clone(), m2v.clone(), m3v.clone()].concat();
            let fd = gradcheck::central_diff(
                |v| {
                    eval(
                        &v[0..d],
                        &v[d..2 * d],
                        &v[2 * d..3 * d],
                        &v[3 * d..4 * d],
                        false,
                    )
                    .0
                },
                &joined,
                1e-5,
            );
            let err = gradcheck::max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn adam_zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        let p = store.register("p", &[3], vec![0.5, -0.25, 1.0]).unwrap();
        store.adam_update(1e-2, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.value(p), &[0.5, -0.25, 1.0]);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        let lr = 1e-4;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let g = 0.3;
        let mut store = ParamStore::new();
        let p = store.register("p", &[1], vec![0.5]).unwrap();
        store.accumulate_grad(p, &[g]);
        store.adam_update(lr, b1, b2, eps).unwrap();
        // Bias correction makes m_hat = g and v_hat = g^2 on the first step.
        let expected = 0.5 - lr * g / (g.abs() + eps);
        assert!((store.value(p)[0] - expected).abs() < 1e-15);
        assert!(store.grad(p).iter().all(|g| *g == 0.0), "grads zeroed");
    }

    #[test]
    fn adam_is_deterministic_across_identical_stores() {
        let build = || {
            let mut store = ParamStore::new();
            let p = store.register("p", &[2], vec![0.1, -0.7]).unwrap();
            for _ in 0..5 {
                store.accumulate_grad(p, &[0.05, -0.2]);
                store.adam_update(1e-3, 0.9, 0.999, 1e-8).unwrap();
            }
            store.value(p).to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn grad_clipping_bounds_global_norm() {
        let mut store = ParamStore::new();
        let p = store.register("p", &[2], vec![0.0, 0.0]).unwrap();
        store.accumulate_grad(p, &[30.0, 40.0]);
        assert!((store.grad_global_norm() - 50.0).abs() < 1e-12);
        store.clip_grads(5.0);
        assert!((store.grad_global_norm() - 5.0).abs() < 1e-9);
        let g = store.grad(p);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-12, "direction preserved");
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = rngstream::substream(9, "init", &[]);
        let mut store = ParamStore::new();
        store
            .register("enc/w", &[3, 4], rand_vec(&mut rng, 12))
            .unwrap();
        store.register("enc/b", &[3], rand_vec(&mut rng, 3)).unwrap();
        save_checkpoint(&store, &path, "digest123").unwrap();

        let mut reload = ParamStore::new();
        reload.register("enc/w", &[3, 4], vec![0.0; 12]).unwrap();
        reload.register("enc/b", &[3], vec![0.0; 3]).unwrap();
        load_checkpoint(&mut reload, &path, "digest123").unwrap();
        for name in ["enc/w", "enc/b"] {
            let a = store.value(store.id(name).unwrap());
            let b = reload.value(reload.id(name).unwrap());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "f32 round trip");
            }
        }

        assert!(matches!(
            load_checkpoint(&mut reload, &path, "other-digest"),
            Err(DiffError::CheckpointMismatch(_))
        ));
        let mut wrong_shape = ParamStore::new();
        wrong_shape.register("enc/w", &[4, 3], vec![0.0; 12]).unwrap();
        wrong_shape.register("enc/b", &[3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&mut wrong_shape, &path, "digest123"),
            Err(DiffError::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let run = || {
            let mut rng = rngstream::substream(10, "replay", &[]);
            let mut store = ParamStore::new();
            let w = store.register("w", &[4, 4], rand_vec(&mut rng, 16)).unwrap();
            let b = store.register("b", &[4], rand_vec(&mut rng, 4)).unwrap();
            let mut tape = Tape::new();
            let x = tape.input(&rand_vec(&mut rng, 4));
            let wn = tape.param(&store, w);
            let bn = tape.param(&store, b);
            let y = tape.dense(x, wn, Some(bn), 4, 4).unwrap();
            let act = tape.tanh(y);
            let logits = tape.scale(act, 2.0);
            let msg = gumbel_binary(&mut tape, logits, 0.9, true, &mut rng).unwrap();
            let query = tape.slice(act, 0, 2).unwrap();
            let (agg, _) = attention_aggregate(&mut tape, query, &[msg]).unwrap();
            let lp = tape.log_softmax_pick(agg, 1).unwrap();
            tape.backward(lp, &mut store).unwrap();
            (
                tape.val(lp)[0].to_bits(),
                store
                    .grad(w)
                    .iter()
                    .chain(store.grad(b))
                    .map(|g| g.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gumbel_config_schedule() {
        let cfg = GumbelConfig::default();
        assert!((cfg.tau_at(0) - 1.0).abs() < 1e-12);
        assert!((cfg.tau_at(1) - 0.995).abs() < 1e-12);
        assert!(cfg.tau_at(100_000) >= 0.5);
        assert_eq!(cfg.tau_at(100_000), 0.5);
    }

    #[test]
    fn duplicate_param_is_rejected() {
        let mut store = ParamStore::new();
        store.register("p", &[1], vec![0.0]).unwrap();
        assert_eq!(
            store.register("p", &[1], vec![0.0]).unwrap_err(),
            DiffError::DuplicateParam("p".to_string())
        );
    }
}
