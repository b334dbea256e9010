use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radiomotion::dataset::{Frame, SequenceKey, SequencePair};
use radiomotion::forecaster::*;
use radiomotion::nn::*;
use radiomotion::optim::{AdamW, TrainConfig};
use radiomotion_tensor::{Graph, Shape, Tensor};

fn random_tensor(shape: Shape, scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn zero_parameters_give_half_gates_and_zero_state() {
    let spec = CellSpec { in_channels: 2, hidden: 3, kernel: 3 };
    let mut g = Graph::<f64>::new();
    let w = g.input(Tensor::zeros(spec.weight_shape()));
    let b = g.input(Tensor::zeros(spec.bias_shape()));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = g.input(random_tensor(Shape::new(2, 2, 5, 5), 10.0, &mut rng));
    let state = zero_state(&mut g, Shape::new(2, 3, 5, 5));
    let gates = convlstm_gates(&mut g, &spec, w, b, x, state).unwrap();
    for gate in &gates[..3] {
        assert!(g.value(*gate).data().iter().all(|&v| v == 0.5));
    }
    assert!(g.value(gates[3]).data().iter().all(|&v| v == 0.0));
    let next = convlstm_step(&mut g, &spec, w, b, x, state).unwrap();
    assert!(g.value(next.h).data().iter().all(|&v| v == 0.0));
    assert!(g.value(next.c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matches_scalar_lstm_over_random_draws() {
    let spec = CellSpec { in_channels: 1, hidden: 1, kernel: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let draw: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (wx, wh, bs) = (&draw[0..4], &draw[4..8], &draw[8..12]);
        let (x, h, c) = (draw[12], draw[13], draw[14]);
        // independent scalar LSTM
        let pre = |k: usize| wx[k] * x + wh[k] * h + bs[k];
        let (i, f, o, cand) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
        let c_want = f * c + i * cand;
        let h_want = o * c_want.tanh();

        let one = |v: f64| Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![v]).unwrap();
        let (w, b) = spec
            .fuse(
                &[one(wx[0]), one(wx[1]), one(wx[2]), one(wx[3])],
                &[one(wh[0]), one(wh[1]), one(wh[2]), one(wh[3])],
                &[one(bs[0]), one(bs[1]), one(bs[2]), one(bs[3])],
            )
            .unwrap();
        let mut g = Graph::<f64>::new();
        let (wv, bv) = (g.input(w), g.input(b));
        let xv = g.input(one(x));
        let state = State { h: g.input(one(h)), c: g.input(one(c)) };
        let next = convlstm_step(&mut g, &spec, wv, bv, xv, state).unwrap();
        assert!((g.value(next.c).data()[0] - c_want).abs() < 1e-12);
        assert!((g.value(next.h).data()[0] - h_want).abs() < 1e-12);
    }
}

#[test]
fn fused_and_per_gate_updates_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (cin, hidden, k) in [(1, 2, 3), (3, 4, 3), (2, 3, 5), (4, 2, 1)] {
        let spec = CellSpec { in_channels: cin, hidden, kernel: k };
        let w = random_tensor(spec.weight_shape(), 0.5, &mut rng);
        let b = random_tensor(spec.bias_shape(), 0.5, &mut rng);
        let mut g = Graph::<f64>::new();
        let x = g.input(random_tensor(Shape::new(2, cin, 6, 7), 1.0, &mut rng));
        let state = State {
            h: g.input(random_tensor(Shape::new(2, hidden, 6, 7), 1.0, &mut rng)),
            c: g.input(random_tensor(Shape::new(2, hidden, 6, 7), 2.0, &mut rng)),
        };
        let (wv, bv) = (g.input(w.clone()), g.input(b.clone()));
        let fused = convlstm_step(&mut g, &spec, wv, bv, x, state).unwrap();
        let split = convlstm_step_unfused(&mut g, &spec, &w, &b, x, state).unwrap();
        assert!(g.value(fused.h).max_abs_diff(g.value(split.h)) < 1e-12);
        assert!(g.value(fused.c).max_abs_diff(g.value(split.c)) < 1e-12);
        // accessors invert fusion
        let wx: [Tensor<f64>; 4] = std::array::from_fn(|i| spec.w_x(&w, i));
        let wh: [Tensor<f64>; 4] = std::array::from_fn(|i| spec.w_h(&w, i));
        let bs: [Tensor<f64>; 4] = std::array::from_fn(|i| spec.b(&b, i));
        let (w2, b2) = spec.fuse(&wx, &wh, &bs).unwrap();
        assert_eq!((w2, b2), (w, b));
    }
}

#[test]
fn hidden_state_is_bounded() {
    let spec = CellSpec { in_channels: 2, hidden: 3, kernel: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut g = Graph::<f64>::new();
        let w = g.input(random_tensor(spec.weight_shape(), 5.0, &mut rng));
        let b = g.input(random_tensor(spec.bias_shape(), 5.0, &mut rng));
        let x = g.input(random_tensor(Shape::new(1, 2, 4, 4), 100.0, &mut rng));
        let state = State {
            h: g.input(random_tensor(Shape::new(1, 3, 4, 4), 1.0, &mut rng)),
            c: g.input(random_tensor(Shape::new(1, 3, 4, 4), 50.0, &mut rng)),
        };
        let next = convlstm_step(&mut g, &spec, w, b, x, state).unwrap();
        assert!(g.value(next.h).data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn convlstm_rejects_mismatched_shapes() {
    let spec = CellSpec { in_channels: 2, hidden: 3, kernel: 3 };
    let mut g = Graph::<f64>::new();
    let w = g.input(Tensor::zeros(spec.weight_shape()));
    let b = g.input(Tensor::zeros(spec.bias_shape()));
    let x = g.input(Tensor::zeros(Shape::new(1, 1, 4, 4)));
    let state = zero_state(&mut g, Shape::new(1, 3, 4, 4));
    assert!(convlstm_step(&mut g, &spec, w, b, x, state).is_err());
    let x = g.input(Tensor::zeros(Shape::new(1, 2, 4, 4)));
    let small = zero_state(&mut g, Shape::new(1, 3, 2, 2));
    assert!(convlstm_step(&mut g, &spec, w, b, x, small).is_err());
}

fn tiny() -> ForecasterConfig {
    ForecasterConfig { hidden1: 2, hidden2: 2, kernel: 3 }
}

fn frames(n: usize, size: usize, rng: &mut impl Rng) -> Vec<Tensor<f64>> {
    (0..n)
        .map(|_| Tensor::from_vec(Shape::new(1, 1, size, size), (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
        .collect()
}

#[test]
fn encoder_shapes_and_temporal_dependence() {
    let model = RadioLstm::<f64>::new(ForecasterConfig { hidden1: 3, hidden2: 4, kernel: 3 }, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ctx = frames(4, 8, &mut rng);
    let run = |order: &[usize]| {
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g, false);
        let inputs: Vec<_> = order.iter().map(|&i| g.input(ctx[i].clone())).collect();
        let before = g.len();
        let e = encode(&mut g, &model.config, &vars, &inputs).unwrap();
        (g.len() - before, g.value(e.level1.h).clone(), g.value(e.level2.h).clone())
    };
    let (_, h1, h2) = run(&[0, 1, 2, 3]);
    assert_eq!(h1.shape(), Shape::new(1, 3, 8, 8));
    assert_eq!(h2.shape(), Shape::new(1, 4, 4, 4));
    let (_, p1, p2) = run(&[3, 1, 2, 0]);
    assert!(h1.max_abs_diff(&p1) > 1e-6 && h2.max_abs_diff(&p2) > 1e-6);
    // one context frame: tape grows by exactly one step per level
    let (one_step, _, _) = run(&[0]);
    let (two_steps, _, _) = run(&[0, 1]);
    let (three_steps, _, _) = run(&[0, 1, 2]);
    assert_eq!(three_steps - two_steps, two_steps - one_step);
    let mut g = Graph::<f64>::new();
    let vars = model.params.bind(&mut g, false);
    assert!(encode(&mut g, &model.config, &vars, &[]).is_err());
}

#[test]
fn forecast_shapes_bounds_and_empty_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let mut model = RadioLstm::<f64>::new(ForecasterConfig { hidden1: 4, hidden2: 6, kernel: 3 }, seed).unwrap();
        // arbitrary recurrent weights; head kept moderate so f64 can resolve
        // the open interval
        for (name, t) in &mut model.params.entries {
            let scale = if name.starts_with("head") { 1.5 } else { 20.0 };
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        let ctx = frames(3, 8, &mut rng);
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g, false);
        let inputs: Vec<_> = ctx.iter().map(|f| g.input(f.clone())).collect();
        let e = encode(&mut g, &model.config, &vars, &inputs).unwrap();
        assert!(forecast(&mut g, &model.config, &vars, e, 0).unwrap().is_empty());
        let out = forecast(&mut g, &model.config, &vars, e, 4).unwrap();
        assert_eq!(out.len(), 4);
        for f in out {
            assert_eq!(g.shape(f), Shape::new(1, 1, 8, 8));
            assert!(g.value(f).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn perturbing_a_decoder_step_only_affects_later_frames() {
    let model = RadioLstm::<f64>::new(ForecasterConfig { hidden1: 3, hidden2: 4, kernel: 3 }, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ctx = frames(3, 8, &mut rng);
    let tp = 5;
    let rollout = |perturb_at: Option<usize>| {
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g, false);
        let inputs: Vec<_> = ctx.iter().map(|f| g.input(f.clone())).collect();
        let e = encode(&mut g, &model.config, &vars, &inputs).unwrap();
        let mut state = DecoderState::from(e);
        let mut out = Vec::new();
        for k in 0..tp {
            if perturb_at == Some(k) {
                let bumped = g.value(state.level2.c).map(|v| v + 0.3);
                state.level2.c = g.input(bumped);
            }
            let f = decode_step(&mut g, &model.config, &vars, &mut state).unwrap();
            out.push(g.value(f).clone());
        }
        out
    };
    let base = rollout(None);
    for k in 0..tp {
        let bent = rollout(Some(k));
        for j in 0..tp {
            let d = base[j].max_abs_diff(&bent[j]);
            if j < k {
                assert_eq!(d, 0.0);
            } else {
                assert!(d > 0.0, "step {k} frame {j}");
            }
        }
    }
}

#[test]
fn mse_loss_examples() {
    let ones: Vec<Frame> = vec![vec![1.0; 4]; 2];
    let zeros: Vec<Frame> = vec![vec![0.0; 4]; 2];
    assert_eq!(mse_loss(&ones, &ones).unwrap(), 0.0);
    assert_eq!(mse_loss(&ones, &zeros).unwrap(), 1.0);
    let half: Vec<Frame> = vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.5, 0.5, 0.0, 0.0]];
    assert_eq!(mse_loss(&half, &zeros).unwrap(), 0.125);
    assert!(mse_loss(&ones, &zeros[..1]).is_err());
}

#[test]
fn end_to_end_gradient_check() {
    let model = RadioLstm::<f64>::new(tiny(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx = frames(3, 8, &mut rng);
    let tgt = frames(2, 8, &mut rng);
    let loss_of = |params: &ParamSet<f64>, with_grad: bool| {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, with_grad);
        let inputs: Vec<_> = ctx.iter().map(|f| g.input(f.clone())).collect();
        let targets: Vec<_> = tgt.iter().map(|f| g.input(f.clone())).collect();
        let e = encode(&mut g, &model.config, &vars, &inputs).unwrap();
        let pred = forecast(&mut g, &model.config, &vars, e, 2).unwrap();
        let l = sequence_mse(&mut g, &pred, &targets).unwrap();
        let value = g.value(l).data()[0];
        let grads = with_grad.then(|| {
            g.backward(l).unwrap();
            vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, grads) = loss_of(&model.params, true);
    let grads = grads.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, (name, t)) in model.params.entries.iter().enumerate() {
        let picks: Vec<usize> = if t.numel() <= 12 { (0..t.numel()).collect() } else { (0..12).map(|_| rng.gen_range(0..t.numel())).collect() };
        for i in picks {
            let mut plus = model.params.clone();
            plus.get_mut(k).data_mut()[i] += h;
            let mut minus = model.params.clone();
            minus.get_mut(k).data_mut()[i] -= h;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
            let analytic = grads[k].data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-5, "{name}[{i}]: analytic {analytic} numeric {numeric}");
            worst = worst.max(rel);
            checked += 1;
        }
        assert_eq!(t.numel(), grads[k].numel());
    }
    assert!(checked > 60, "{checked}");
    println!("max relative error {worst:e} over {checked} entries");
}

#[test]
fn adamw_hand_computed_steps() {
    let mut p = ParamSet::<f64>::default();
    p.push("w", Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -1.0, 2.0]).unwrap());
    let mut opt = AdamW::new(&p, 1e-3, 0.0);
    let zero = Tensor::zeros(Shape::new(1, 1, 1, 3));
    opt.step(&mut p, &[Some(&zero)]).unwrap();
    assert_eq!(p.get(0).data(), &[0.5, -1.0, 2.0]);

    let mut q = ParamSet::<f64>::default();
    q.push("s", Tensor::scalar(1.0));
    let mut opt = AdamW::new(&q, 1e-3, 0.0);
    opt.step(&mut q, &[Some(&Tensor::scalar(1.0))]).unwrap();
    // m = 0.1, v = 0.001; bias-corrected ratio is 1 / (1 + eps)
    let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
    assert!((q.get(0).data()[0] - expected).abs() < 1e-15);

    // decoupled decay shrinks the weight before the adaptive step
    let mut r = ParamSet::<f64>::default();
    r.push("s", Tensor::scalar(2.0));
    let mut opt = AdamW::new(&r, 1e-2, 0.1);
    opt.step(&mut r, &[Some(&Tensor::scalar(0.0))]).unwrap();
    assert!((r.get(0).data()[0] - 2.0 * (1.0 - 1e-3)).abs() < 1e-15);
}

#[test]
fn adamw_converges_on_scalar_quadratic() {
    let mut p = ParamSet::<f64>::default();
    p.push("x", Tensor::scalar(3.0));
    let mut opt = AdamW::new(&p, 1e-2, 0.0);
    let target = -1.25;
    let mut steps = 0;
    while (p.get(0).data()[0] - target).abs() >= 1e-4 {
        let grad = Tensor::scalar(2.0 * (p.get(0).data()[0] - target));
        opt.step(&mut p, &[Some(&grad)]).unwrap();
        steps += 1;
        assert!(steps <= 5000, "no convergence");
    }
}

fn synthetic_pairs(count: usize, size: usize, seed: u64) -> Vec<SequencePair> {
    // a bright square drifting one cell per frame
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            let (r0, c0) = (rng.gen_range(0..size - 3), rng.gen_range(0..size / 2));
            let frame = |t: usize| -> Frame {
                let mut f = vec![0.2f32; size * size];
                for r in r0..r0 + 3 {
                    for c in c0 + t..(c0 + t + 3).min(size) {
                        f[r * size + c] = 0.8;
                    }
                }
                f
            };
            let all: Vec<Frame> = (0..6).map(frame).collect();
            radiomotion::dataset::make_pairs(&all, size, SequenceKey::new(n, 0, 0), 4, 2).unwrap()
        })
        .collect()
}

#[test]
fn overfits_a_single_pair() {
    let pair = synthetic_pairs(1, 8, 1);
    let mut model = RadioLstm::<f32>::new(ForecasterConfig { hidden1: 8, hidden2: 8, kernel: 3 }, 3).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-2, batch_size: 1, max_epochs: 400, patience: 400, weight_decay: 0.0, seed: 1, min_delta: 0.0 };
    let history = model.train(&pair, &pair, &cfg, |_| {}).unwrap();
    let best = history.best_val_loss;
    assert!(best < 1e-3, "best {best}");
    let pred = model.predict(&[&pair[0].context], 8, 2).unwrap();
    assert!(mse_loss(&pred[0], &pair[0].target).unwrap() < 1e-3);
}

#[test]
fn training_is_deterministic_and_early_stops_on_plateau() {
    let data = synthetic_pairs(6, 8, 2);
    let (train, val) = data.split_at(4);
    let cfg = TrainConfig { learning_rate: 5e-3, batch_size: 2, max_epochs: 4, patience: 4, weight_decay: 0.01, seed: 9, min_delta: 1e-6 };
    let run = || {
        let mut m = RadioLstm::<f32>::new(ForecasterConfig { hidden1: 2, hidden2: 4, kernel: 3 }, 1).unwrap();
        let h = m.train(train, val, &cfg, |_| {}).unwrap();
        (h, m.params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1.epochs.len(), 4);
    assert_eq!(h1.to_csv().lines().count(), 5);

    // learning rate too small to move the validation loss by min_delta
    let flat = TrainConfig { learning_rate: 1e-12, max_epochs: 20, patience: 3, ..cfg.clone() };
    let mut m = RadioLstm::<f32>::new(ForecasterConfig { hidden1: 2, hidden2: 4, kernel: 3 }, 1).unwrap();
    let h = m.train(train, val, &flat, |_| {}).unwrap();
    assert!(h.stopped_early);
    assert_eq!(h.epochs.len(), 4);
    assert_eq!(h.best_epoch, 1);

    assert!(m.train(&[], val, &cfg, |_| {}).is_err());
    assert!(m.train(train, &[], &cfg, |_| {}).is_err());
}

#[test]
fn improving_validation_runs_to_max_epochs() {
    let data = synthetic_pairs(4, 8, 5);
    let cfg = TrainConfig { learning_rate: 2e-3, batch_size: 4, max_epochs: 6, patience: 1, weight_decay: 0.0, seed: 2, min_delta: 0.0 };
    let mut m = RadioLstm::<f32>::new(ForecasterConfig { hidden1: 4, hidden2: 4, kernel: 3 }, 2).unwrap();
    let h = m.train(&data, &data, &cfg, |_| {}).unwrap();
    assert!(h.epochs.windows(2).all(|w| w[1].val_loss < w[0].val_loss), "{:?}", h.epochs);
    assert_eq!(h.epochs.len(), 6);
    assert!(!h.stopped_early);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = RadioLstm::<f32>::new(ForecasterConfig { hidden1: 3, hidden2: 5, kernel: 3 }, 4).unwrap();
    model.to_checkpoint(&[("grid_size", "8".into())]).save(dir.path()).unwrap();
    let ckpt = radiomotion_tensor::checkpoint::Checkpoint::load(dir.path()).unwrap();
    assert_eq!(ckpt.meta["grid_size"], "8");
    assert_eq!(RadioLstm::from_checkpoint(&ckpt).unwrap(), model);
}
