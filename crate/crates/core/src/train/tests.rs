use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{make_windows, synth_generate, ImfBank, Split, SplitRatio, SynthRecipe, WindowOptions, WindowedDataset};
use crate::model::{bind, forward, HiformerParams, ModelConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vmd::VmdConfig;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Fixture {
    ds: WindowedDataset,
    bank: ImfBank,
    node: Tensor<f64>,
    cfg: ModelConfig,
}

impl Fixture {
    fn new() -> Self {
        let raw = synth_generate(3, 600, 2, 8, &SynthRecipe::default()).unwrap();
        let ds = make_windows(&raw, 16, 4, SplitRatio::default(), WindowOptions::default()).unwrap();
        let bank = ImfBank::build(&ds, &VmdConfig::with_modes(2)).unwrap();
        let node = Tensor::random_uniform(&[8, 3], -1.0, 1.0, &mut rng(1));
        let cfg = ModelConfig {
            history: 16,
            horizon: 4,
            num_turbines: 3,
            num_weather: 2,
            num_modes: 2,
            ..Default::default()
        };
        Self { ds, bank, node, cfg }
    }

    fn ctx(&self) -> TrainContext<'_> {
        TrainContext {
            dataset: &self.ds,
            imfs: &self.bank,
            node_embedding: &self.node,
        }
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn adam_first_step_matches_hand_trace() {
    let cfg = AdamConfig::default();
    let g = [0.3, -2.0, 1e-9, 0.0];
    let mut params = vec![Tensor::new(&[4], vec![1.0, 1.0, 1.0, 1.0]).unwrap()];
    let grads = vec![Tensor::new(&[4], g.to_vec()).unwrap()];
    let mut state = AdamState::zeros_for(&[&params[0]]);
    adam_step(&mut params, &grads, &mut state, 0.01, &cfg).unwrap();
    for (k, &gk) in g.iter().enumerate() {
        // m̂ = g and v̂ = g² after one step
        let m = (1.0 - 0.9) * gk / (1.0 - 0.9);
        let v = (1.0 - 0.999) * gk * gk / (1.0 - 0.999);
        let expect = 1.0 - 0.01 * m / (f64::sqrt(v) + 1e-8);
        assert!((params[0].data()[k] - expect).abs() < 1e-15, "{k}");
    }
    assert_eq!(params[0].data()[3], 1.0);
    assert!((params[0].data()[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_constant_gradient_moves_by_lr_per_step() {
    let cfg = AdamConfig::default();
    let mut params = vec![Tensor::new(&[2], vec![0.0, 0.0]).unwrap()];
    let grads = vec![Tensor::new(&[2], vec![0.7, -3.0]).unwrap()];
    let mut state = AdamState::zeros_for(&[&params[0]]);
    let lr = 1e-3;
    let mut last = params[0].clone();
    for step in 1..=2000 {
        adam_step(&mut params, &grads, &mut state, lr, &cfg).unwrap();
        let delta: Vec<f64> = params[0].data().iter().zip(last.data()).map(|(a, b)| a - b).collect();
        if step > 1000 {
            assert!((delta[0] + lr).abs() < 1e-9 * lr.max(1.0) + 1e-11, "{delta:?}");
            assert!((delta[1] - lr).abs() < 1e-9 * lr.max(1.0) + 1e-11, "{delta:?}");
        }
        last = params[0].clone();
    }
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let mut params = vec![Tensor::<f64>::random_uniform(&[3, 2], -1.0, 1.0, &mut rng(2))];
    let before = params.clone();
    let grads = vec![Tensor::zeros(&[3, 2])];
    let mut state = AdamState::zeros_for(&[&params[0]]);
    for _ in 0..10 {
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
    }
    assert_eq!(params, before);
}

#[test]
fn adam_rejects_mismatched_gradients() {
    let mut params = vec![Tensor::<f64>::zeros(&[2, 2])];
    let mut state = AdamState::zeros_for(&[&params[0]]);
    let err = adam_step(&mut params, &[Tensor::zeros(&[4])], &mut state, 0.1, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::Contract(_)));
    assert!(adam_step(&mut params, &[], &mut state, 0.1, &AdamConfig::default()).is_err());
    assert_eq!(state.step, 0);
}

#[test]
fn tree_update_matches_flat_update() {
    let cfg = ModelConfig::default();
    let mut tree = HiformerParams::<Tensor<f64>>::init(&cfg, 3);
    let mut flat: Vec<Tensor<f64>> = tree.leaves().into_iter().map(|(_, t)| t.clone()).collect();
    let mut r = rng(4);
    let grads: Vec<Tensor<f64>> = flat.iter().map(|t| Tensor::random_uniform(t.shape(), -1.0, 1.0, &mut r)).collect();
    let mut s1 = AdamState::for_params(&tree);
    let mut s2 = s1.clone();
    for _ in 0..3 {
        adam_step_tree(&mut tree, &grads, &mut s1, 0.01, &AdamConfig::default()).unwrap();
        adam_step(&mut flat, &grads, &mut s2, 0.01, &AdamConfig::default()).unwrap();
    }
    let after: Vec<Tensor<f64>> = tree.leaves().into_iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(after, flat);
}

#[test]
fn clipping_caps_global_norm() {
    let mut g = vec![Tensor::new(&[2], vec![3.0, 0.0]).unwrap(), Tensor::new(&[1], vec![4.0]).unwrap()];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::new(&[1], vec![0.5]).unwrap()];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data(), &[0.5]);
}

#[test]
fn metrics_examples_and_loop_oracle() {
    let (q, n) = (3, 2);
    let mut r = rng(6);
    let target = Tensor::random_uniform(&[q, 4 * n], -2.0, 2.0, &mut r);
    let mut acc = MetricsAccumulator::new(q, n);
    acc.add(&target, &target).unwrap();
    let perfect = acc.finish().unwrap();
    assert_eq!((perfect.mae, perfect.mse, perfect.windows), (0.0, 0.0, 4));

    let shifted = target.map(|x| x + 1.0);
    let mut acc = MetricsAccumulator::new(q, n);
    acc.add(&shifted, &target).unwrap();
    let off = acc.finish().unwrap();
    assert!((off.mae - 1.0).abs() < 1e-15 && (off.mse - 1.0).abs() < 1e-14);

    let pred = Tensor::random_uniform(&[q, 4 * n], -2.0, 2.0, &mut r);
    let mut acc = MetricsAccumulator::new(q, n);
    acc.add(&pred, &target).unwrap();
    let rep = acc.finish().unwrap();
    let (mut a, mut s) = (0.0, 0.0);
    let mut turbine = vec![0.0; n];
    for i in 0..q {
        for c in 0..4 * n {
            let e = pred.at(&[i, c]) - target.at(&[i, c]);
            a += e.abs();
            s += e * e;
            turbine[c % n] += e * e;
        }
    }
    let cells = (q * 4 * n) as f64;
    assert!((rep.mae - a / cells).abs() < 1e-12);
    assert!((rep.mse - s / cells).abs() < 1e-12);
    for j in 0..n {
        assert!((rep.per_turbine[j].mse - turbine[j] / (q * 4) as f64).abs() < 1e-12);
    }
    let mean_h: f64 = rep.per_horizon.iter().map(|p| p.mse).sum::<f64>() / q as f64;
    assert!((mean_h - rep.mse).abs() < 1e-12);

    assert!(matches!(MetricsAccumulator::new(q, n).finish(), Err(TrainError::EmptyEvaluation)));
    assert!(MetricsAccumulator::new(q, n).add(&Tensor::zeros(&[q, 3]), &Tensor::zeros(&[q, 3])).is_err());
}

proptest! {
    #[test]
    fn mae_never_exceeds_root_mse(seed in 0u64..5000, q in 1usize..5, n in 1usize..4, b in 1usize..4) {
        let mut r = rng(seed);
        let pred = Tensor::random_uniform(&[q, b * n], -3.0, 3.0, &mut r);
        let target = Tensor::random_uniform(&[q, b * n], -3.0, 3.0, &mut r);
        let mut acc = MetricsAccumulator::new(q, n);
        acc.add(&pred, &target).unwrap();
        let rep = acc.finish().unwrap();
        prop_assert!(rep.mae >= 0.0 && rep.mse >= 0.0);
        prop_assert!(rep.mae <= rep.mse.sqrt() + 1e-12);
    }
}

fn series_dataset(values: impl Fn(usize) -> f64, rows: usize, p: usize, q: usize) -> WindowedDataset {
    let mut raw = synth_generate(1, rows, 1, 1, &SynthRecipe::default()).unwrap();
    for t in 0..rows {
        raw.power.set(&[t, 0], values(t));
    }
    make_windows(&raw, p, q, SplitRatio::default(), WindowOptions::default()).unwrap()
}

#[test]
fn persistence_on_ramp_has_closed_form() {
    let (p, q) = (6, 5);
    let ds = series_dataset(|t| 2.5 * t as f64, 300, p, q);
    let slope = 2.5 / ds.stats.std[0];
    let rep = persistence_baseline(&ds, Split::Test).unwrap();
    assert!((rep.mae - slope * (q as f64 + 1.0) / 2.0).abs() < 1e-10);
    for (k, h) in rep.per_horizon.iter().enumerate() {
        assert!((h.mae - slope * (k + 1) as f64).abs() < 1e-10);
    }
}

#[test]
fn persistence_on_constant_segment_is_exact() {
    let ds = series_dataset(|t| if t < 100 { t as f64 } else { 7.0 }, 400, 8, 4);
    let rep = persistence_baseline(&ds, Split::Test).unwrap();
    assert_eq!((rep.mae, rep.mse), (0.0, 0.0));
}

#[test]
fn persistence_at_half_period_is_near_maximal() {
    let q = 12;
    let ds = series_dataset(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin(), 960, 24, q);
    let rep = persistence_baseline(&ds, Split::Test).unwrap();
    // normalized sinusoid z has E[z²] = 1 over whole periods; z(t + half period) = −z(t)
    assert!((rep.per_horizon[q - 1].mse - 4.0).abs() < 0.08, "{}", rep.per_horizon[q - 1].mse);
    assert!(rep.per_horizon.windows(2).all(|w| w[0].mse < w[1].mse));
}

#[test]
fn loss_on_fixed_batch_falls_for_five_steps() {
    let f = Fixture::new();
    let batch = f.ds.batch(&f.ds.windows(Split::Train)[..32], &f.bank).unwrap();
    let mut params = HiformerParams::<Tensor<f64>>::init(&f.cfg, 2);
    let mut state = AdamState::for_params(&params);
    let mut losses = Vec::new();
    for _ in 0..6 {
        let tape = Tape::new();
        let bound = bind(&tape, &params);
        let out = forward(&bound, tape.constant(f.node.clone()), &batch.input, &f.cfg, false, &mut rng(0)).unwrap();
        let loss = out.mse(batch.target.clone()).unwrap();
        losses.push(loss.item());
        let grads = tape.backward(loss).unwrap();
        let flat: Vec<Tensor<f64>> = bound.leaves().iter().map(|(_, v)| grads.get_or_zeros(**v)).collect();
        drop(bound);
        adam_step_tree(&mut params, &flat, &mut state, 1e-3, &AdamConfig::default()).unwrap();
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let f = Fixture::new();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..f.cfg.clone()
    };
    let init = HiformerParams::<Tensor<f64>>::init(&cfg, 9);
    let out = train(init.clone(), &f.ctx(), &cfg, &TrainConfig { lr: 0.0, ..quick(3) }).unwrap();
    assert_eq!(out.params, init);
    let h = &out.history;
    assert!(h.iter().all(|r| r.val_loss == h[0].val_loss));
    assert!(h.iter().all(|r| (r.train_loss - h[0].train_loss).abs() < 1e-12));
}

#[test]
fn same_seed_same_history() {
    let f = Fixture::new();
    let init = HiformerParams::<Tensor<f64>>::init(&f.cfg, 9);
    let a = train(init.clone(), &f.ctx(), &f.cfg, &quick(3)).unwrap();
    let b = train(init.clone(), &f.ctx(), &f.cfg, &quick(3)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let c = train(init, &f.ctx(), &f.cfg, &TrainConfig { seed: 6, ..quick(3) }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn returns_best_validation_parameters() {
    let f = Fixture::new();
    let init = HiformerParams::<Tensor<f64>>::init(&f.cfg, 10);
    let out = train(init, &f.ctx(), &f.cfg, &TrainConfig { lr: 0.02, ..quick(6) }).unwrap();
    let best = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, best);
    assert_eq!(out.history[out.best_epoch - 1].val_loss, best);
    let val = evaluate(&out.params, &f.ctx(), &f.cfg, Split::Val, 64).unwrap();
    assert_eq!(val.mse, best);
}

#[test]
fn early_stopping_halts_after_patience() {
    let f = Fixture::new();
    let init = HiformerParams::<Tensor<f64>>::init(&f.cfg, 10);
    let cfg = TrainConfig {
        lr: 0.0,
        early_stop_patience: Some(2),
        ..quick(50)
    };
    let out = train(init, &f.ctx(), &f.cfg, &cfg).unwrap();
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let f = Fixture::new();
    let mut init = HiformerParams::<Tensor<f64>>::init(&f.cfg, 10);
    init.projection.out.bias.data_mut()[0] = f64::NAN;
    match train(init, &f.ctx(), &f.cfg, &quick(2)) {
        Err(TrainError::NonFinite {
            epoch,
            batch,
            group_norms,
            ..
        }) => {
            assert_eq!((epoch, batch), (1, 0));
            let names: Vec<&str> = group_norms.iter().map(|(g, _)| g.as_str()).collect();
            assert_eq!(
                names,
                ["input_embed", "imf_embed", "spatial_embed", "weather_embed", "layers.0", "projection"]
            );
            assert!(group_norms.last().unwrap().1.is_nan());
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn evaluation_ignores_window_order() {
    let f = Fixture::new();
    let params = HiformerParams::<Tensor<f64>>::init(&f.cfg, 12);
    let mut starts = f.ds.windows(Split::Test).to_vec();
    let a = evaluate_windows(&params, &f.ctx(), &f.cfg, &starts, 16).unwrap();
    starts.shuffle(&mut rng(13));
    let b = evaluate_windows(&params, &f.ctx(), &f.cfg, &starts, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.mae <= a.mse.sqrt());
    assert!(matches!(evaluate_windows(&params, &f.ctx(), &f.cfg, &[], 8), Err(TrainError::EmptyEvaluation)));
}

#[test]
fn config_checks() {
    assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { lr: f64::NAN, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { grad_clip: Some(0.0), ..Default::default() }.validate().is_err());
    let d = TrainConfig::default();
    assert_eq!((d.lr, d.batch_size, d.epochs, d.grad_clip), (1e-3, 64, 100, None));
    let f = Fixture::new();
    let wrong = ModelConfig {
        num_turbines: 4,
        ..f.cfg.clone()
    };
    let err = train(HiformerParams::<Tensor<f64>>::init(&wrong, 1), &f.ctx(), &wrong, &quick(1)).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)));
}

#[test]
fn history_csv_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    let rows = [
        EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            lr: 1e-3,
        },
        EpochRecord {
            epoch: 2,
            train_loss: 0.4,
            val_loss: 0.2,
            lr: 1e-3,
        },
    ];
    write_history_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "epoch,train_loss,val_loss,lr\n1,0.5,0.25,0.001\n2,0.4,0.2,0.001\n");
}

#[test]
fn norm_stats_examples() {
    let raw = synth_generate(2, 200, 2, 3, &SynthRecipe::default()).unwrap();
    let plan = crate::data::SplitPlan::new(200, SplitRatio::default()).unwrap();
    let stats = NormStats::fit(&plan.train_rows(&raw)).unwrap();
    assert_eq!(stats.channels, vec!["power", "wspd", "temp1"]);
    let mut r = rng(14);
    for ch in 0..3 {
        assert_eq!(stats.zscore(ch, stats.mean[ch]), 0.0);
        for _ in 0..100 {
            let x: f64 = r.gen_range(-1e3..1e3);
            assert!((stats.inverse(ch, stats.zscore(ch, x)) - x).abs() < 1e-12);
        }
    }
}

#[test]
fn persistence_over_a_shorter_horizon_is_a_prefix() {
    let ds = series_dataset(|t| 0.5 * t as f64 + (t as f64).sin(), 300, 6, 5);
    let full = persistence_baseline(&ds, Split::Test).unwrap();
    let short = persistence_over(&ds, ds.windows(Split::Test), 2).unwrap();
    assert_eq!(short.per_horizon[..], full.per_horizon[..2]);
    assert!(persistence_over(&ds, ds.windows(Split::Test), 6).is_err());
    assert!(persistence_over(&ds, ds.windows(Split::Test), 0).is_err());
}
