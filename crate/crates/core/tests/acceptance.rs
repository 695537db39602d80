//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; exits non-zero when any criterion fails.
//! A substring argument restricts the run to matching criteria.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use hiformer_core::data::{
    make_windows, synth_generate, ImfBank, RawDataset, Split, SplitPlan, SplitRatio, SynthRecipe, WindowOptions,
    WindowedDataset,
};
use hiformer_core::graph::{
    biased_walks, build_default_adjacency, train_embeddings, Node2vecConfig, TurbineGraph, DEFAULT_EPSILON,
};
use hiformer_core::model::layers::{attention, cd_gate};
use hiformer_core::model::{
    forward, AttentionParams, Checkpoint, GateMode, GateParams, HiformerParams, Linear, ModelConfig,
};
use hiformer_core::tape::{concat_rows, Tape, Var};
use hiformer_core::tensor::Tensor;
use hiformer_core::train::{
    evaluate, persistence_baseline, train, MetricsReport, TrainConfig, TrainContext, TrainOutcome,
};
use hiformer_core::vmd::{vmd_decompose, VmdConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Verdict {
    if elapsed < limit {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
    }
}

// ---------------------------------------------------------------------------
// finite differences

type LossFn<'a> = dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64> + 'a;

/// Relative error between tape gradients and central differences, over all
/// inputs jointly.
fn gradient_error(inputs: &[Tensor<f64>], f: &LossFn<'_>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &vars).item()
    };
    let step = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for (k, x) in inputs.iter().enumerate() {
        let mut xs = inputs.to_vec();
        for i in 0..x.len() {
            xs[k].data_mut()[i] = x.data()[i] + step;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x.data()[i] - step;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x.data()[i];
            let numeric = (up - down) / (2.0 * step);
            diff += (analytic[k].data()[i] - numeric).powi(2);
            norm += numeric * numeric;
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

/// `Σ out ⊙ w` with a fixed random `w`, so every output element matters.
fn weighted<'t>(out: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let w = Tensor::random_uniform(&out.shape(), -1.0, 1.0, &mut rng(seed));
    out.mul(out.tape().constant(w)).unwrap().sum()
}

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::random_uniform(shape, -1.0, 1.0, r)
}

fn primitive_checks() -> Vec<(&'static str, f64)> {
    let mut r = rng(101);
    let a = uniform(&[3, 4], &mut r);
    let b = uniform(&[3, 4], &mut r);
    let wide = uniform(&[3, 8], &mut r);
    let bias1 = uniform(&[3, 1], &mut r);
    let bias4 = uniform(&[3, 4], &mut r);
    let left = uniform(&[3, 5], &mut r);
    let right = uniform(&[5, 4], &mut r);
    let gain = uniform(&[3], &mut r);
    let shift = uniform(&[3], &mut r);
    let q = uniform(&[4, 6], &mut r);
    let k = uniform(&[4, 6], &mut r);
    let alpha = Tensor::random_uniform(&[3, 6], 0.05, 1.0, &mut r);
    let stacked = uniform(&[3, 12], &mut r);
    let mix = uniform(&[3], &mut r);
    let rho = Tensor::random_uniform(&[3, 4], 0.05, 0.95, &mut r);
    // keep |a − b| away from zero so the absolute error stays smooth
    let target = a.map(|x| x + 0.5);

    let cases: Vec<(&'static str, Vec<Tensor<f64>>, Box<LossFn<'static>>)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|_, v| weighted(v[0].add(v[1]).unwrap(), 1))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|_, v| weighted(v[0].sub(v[1]).unwrap(), 2))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|_, v| weighted(v[0].mul(v[1]).unwrap(), 3))),
        ("scale", vec![a.clone()], Box::new(|_, v| weighted(v[0].scale(-1.7), 4))),
        (
            "add_tiled",
            vec![wide.clone(), bias1.clone(), bias4.clone()],
            Box::new(|_, v| weighted(v[0].add_tiled(v[1]).unwrap().add_tiled(v[2]).unwrap(), 5)),
        ),
        ("matmul", vec![left, right], Box::new(|_, v| weighted(v[0].matmul(v[1]).unwrap(), 6))),
        ("gelu", vec![a.map(|x| 3.0 * x)], Box::new(|_, v| weighted(v[0].gelu(), 7))),
        ("sigmoid", vec![a.map(|x| 3.0 * x)], Box::new(|_, v| weighted(v[0].sigmoid(), 8))),
        ("softmax rows", vec![a.clone()], Box::new(|_, v| weighted(v[0].softmax(0).unwrap(), 9))),
        ("softmax columns", vec![a.clone()], Box::new(|_, v| weighted(v[0].softmax(1).unwrap(), 10))),
        (
            "layer_norm",
            vec![a.clone(), gain, shift],
            Box::new(|_, v| weighted(v[0].layer_norm(v[1], v[2], 0).unwrap(), 11)),
        ),
        (
            "dropout",
            vec![a.clone()],
            Box::new(|_, v| weighted(v[0].dropout(0.3, true, &mut rng(12)).unwrap(), 12)),
        ),
        ("slice_rows", vec![a.clone()], Box::new(|_, v| weighted(v[0].slice_rows(1, 2).unwrap(), 13))),
        (
            "concat_rows",
            vec![a.clone(), b.clone()],
            Box::new(|_, v| weighted(concat_rows(&[v[0], v[1], v[0]]).unwrap(), 14)),
        ),
        (
            "block_scores",
            vec![q, k],
            Box::new(|_, v| weighted(v[0].block_scores(v[1], 3, 0.5).unwrap(), 15)),
        ),
        (
            "block_mix",
            vec![uniform(&[4, 6], &mut r), alpha],
            Box::new(|_, v| weighted(v[0].block_mix(v[1], 3).unwrap(), 16)),
        ),
        ("mix_blocks", vec![stacked, mix], Box::new(|_, v| weighted(v[0].mix_blocks(v[1]).unwrap(), 17))),
        (
            "gate_mix",
            vec![rho, a.clone(), b.clone()],
            Box::new(|_, v| weighted(v[0].gate_mix(v[1], v[2]).unwrap(), 18)),
        ),
        ("sum", vec![a.clone()], Box::new(|_, v| v[0].mul(v[0]).unwrap().sum())),
        ("mean", vec![a.clone()], Box::new(|_, v| v[0].mul(v[0]).unwrap().mean())),
        ("mse", vec![a.clone()], {
            let t = target.clone();
            Box::new(move |_, v| v[0].mse(t.clone()).unwrap())
        }),
        ("mae", vec![a], Box::new(move |_, v| v[0].mae(target.clone()).unwrap())),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| (name, gradient_error(&inputs, f.as_ref())))
        .collect()
}

fn rebind<'t>(template: &HiformerParams<Tensor<f64>>, vars: &[Var<'t, f64>]) -> HiformerParams<Var<'t, f64>> {
    let mut next = 0;
    template.map(|_, _| {
        next += 1;
        vars[next - 1]
    })
}

/// Whole network in training mode (fixed dropout masks) at the micro
/// configuration, against every parameter and the node embedding.
fn forward_check() -> f64 {
    let cfg = ModelConfig::default();
    let mut r = rng(202);
    let mut params = HiformerParams::<Tensor<f64>>::init(&cfg, 5);
    params.for_each_mut(|_, t| {
        for v in t.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    });
    let batch = 2;
    let cols = batch * cfg.num_turbines;
    let input = hiformer_core::model::ModelInput {
        history: uniform(&[cfg.history, cols], &mut r),
        imfs: uniform(&[cfg.history, cfg.num_modes * cols], &mut r),
        weather: uniform(&[cfg.history, cfg.num_weather * cols], &mut r),
        batch,
    };
    let target = uniform(&[cfg.horizon, cols], &mut r);
    let mut leaves: Vec<Tensor<f64>> = params.leaves().into_iter().map(|(_, t)| t.clone()).collect();
    leaves.push(uniform(&[cfg.node_dims, cfg.num_turbines], &mut r));
    gradient_error(&leaves, &|_, vars| {
        let (node, rest) = vars.split_last().unwrap();
        let bound = rebind(&params, rest);
        forward(&bound, *node, &input, &cfg, true, &mut rng(7))
            .unwrap()
            .mse(target.clone())
            .unwrap()
    })
}

fn criterion_gradients() -> Verdict {
    let started = Instant::now();
    let mut worst = ("", 0.0f64);
    let mut failures = Vec::new();
    for (name, err) in primitive_checks().into_iter().chain([("full forward", forward_check())]) {
        if err > worst.1 {
            worst = (name, err);
        }
        if !(err < 1e-4) {
            failures.push(format!("{name} {err:.2e}"));
        }
    }
    let detail = format!("23 checks, worst relative error {:.2e} ({})", worst.1, worst.0);
    if !failures.is_empty() {
        return Err(format!("{detail}; over 1e-4: {}", failures.join(", ")));
    }
    within(started.elapsed(), Duration::from_secs(60), detail)
}

// ---------------------------------------------------------------------------

fn criterion_vmd() -> Verdict {
    let started = Instant::now();
    let len = 512;
    let x: Vec<f64> = (0..len)
        .map(|t| (2.0 * PI * 0.03 * t as f64).cos() + (2.0 * PI * 0.2 * t as f64).cos())
        .collect();
    let set = vmd_decompose(&x, &VmdConfig::with_modes(2)).map_err(|e| e.to_string())?;
    let f = &set.center_freqs;
    let edge = len / 20;
    let sq: f64 = (edge..len - edge)
        .map(|t| (x[t] - set.modes[0][t] - set.modes[1][t]).powi(2))
        .sum();
    let rmse = (sq / (len - 2 * edge) as f64).sqrt();
    let detail = format!("center frequencies {:.4}, {:.4}; interior RMSE {rmse:.4}", f[0], f[1]);
    let ok = (f[0] - 0.03).abs() < 0.01 && (f[1] - 0.2).abs() < 0.01 && rmse < 0.05;
    check(ok, detail.clone())?;
    within(started.elapsed(), Duration::from_secs(5), detail)
}

// ---------------------------------------------------------------------------

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm_erf(x / 2f64.sqrt()))
}

/// Abramowitz–Stegun would be too coarse for a 1e-10 oracle, so the series
/// and continued fraction are evaluated directly.
fn libm_erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / PI.sqrt() * sum
    } else {
        // Lentz continued fraction for erfc
        let z = x.abs();
        let mut f = z;
        let mut c = z;
        let mut d = 0.0;
        for k in 1..200 {
            let a = k as f64 / 2.0;
            d = z + a * d;
            d = 1.0 / d;
            c = z + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let erfc = (-z * z).exp() / (f * PI.sqrt());
        x.signum() * (1.0 - erfc)
    }
}

fn affine(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| b.data()[i] + (0..w.cols()).map(|j| w.at(&[i, j]) * x[j]).sum::<f64>())
        .collect()
}

/// Single-head attention written as explicit loops over targets and sources.
fn attention_loops(h: &Tensor<f64>, ctx: &Tensor<f64>, p: &AttentionParams<Tensor<f64>>, n: usize) -> Vec<Vec<f64>> {
    let (d, cols) = (h.rows(), h.cols());
    let mut q = Vec::new();
    let mut k = Vec::new();
    let mut v = Vec::new();
    for c in 0..cols {
        let mut joint = h.column(c);
        joint.extend(ctx.column(c));
        q.push(affine(&p.query.weight, &p.query.bias, &joint).into_iter().map(gelu).collect::<Vec<_>>());
        k.push(affine(&p.key.weight, &p.key.bias, &joint).into_iter().map(gelu).collect::<Vec<_>>());
        v.push(affine(&p.value.weight, &p.value.bias, &h.column(c)).into_iter().map(gelu).collect::<Vec<_>>());
    }
    let mut out = vec![vec![0.0; cols]; d];
    for c in 0..cols {
        let base = c / n * n;
        let scores: Vec<f64> = (0..n)
            .map(|s| (0..d).map(|i| q[c][i] * k[base + s][i]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for (i, row) in out.iter_mut().enumerate() {
            row[c] = (0..n).map(|s| e[s] / z * v[base + s][i]).sum();
        }
    }
    out
}

fn criterion_attention() -> Verdict {
    let mut r = rng(303);
    let n = 3;
    let (mut worst_out, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = r.gen_range(2..7);
        let batch = r.gen_range(1..4);
        let cols = batch * n;
        let scale = r.gen_range(0.2..2.0);
        let mut lin = |i: usize| Linear {
            weight: Tensor::random_uniform(&[d, i], -scale, scale, &mut r),
            bias: Tensor::random_uniform(&[d, 1], -0.5, 0.5, &mut r),
        };
        let p = AttentionParams {
            query: lin(2 * d),
            key: lin(2 * d),
            value: lin(d),
            mix_logits: Tensor::zeros(&[1]),
        };
        let h = uniform(&[d, cols], &mut r);
        let ctx = uniform(&[d, cols], &mut r);
        let expect = attention_loops(&h, &ctx, &p, n);

        let tape = Tape::new();
        let c = |t: &Tensor<f64>| tape.constant(t.clone());
        let bound = AttentionParams {
            query: Linear { weight: c(&p.query.weight), bias: c(&p.query.bias) },
            key: Linear { weight: c(&p.key.weight), bias: c(&p.key.bias) },
            value: Linear { weight: c(&p.value.weight), bias: c(&p.value.bias) },
            mix_logits: c(&p.mix_logits),
        };
        let out = attention(c(&h), c(&ctx), &bound, 1, n).map_err(|e| e.to_string())?;
        let got = out.output.value();
        for (i, row) in expect.iter().enumerate() {
            for (col, want) in row.iter().enumerate() {
                worst_out = worst_out.max((got.at(&[i, col]) - want).abs());
            }
        }
        let alpha = out.weights[0].value();
        for col in 0..cols {
            let total: f64 = (0..n).map(|s| alpha.at(&[s, col])).sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }
    check(
        worst_out < 1e-10 && worst_sum < 1e-10,
        format!("100 trials, max output deviation {worst_out:.1e}, max weight-sum deviation {worst_sum:.1e}"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_gate() -> Verdict {
    let mut r = rng(404);
    let (d, n, cols) = (4, 3, 6);
    let (mut outside, mut unequal) = (0usize, 0usize);
    for _ in 0..10_000 {
        let spread = 10f64.powf(r.gen_range(-1.0..2.0));
        let p = GateParams {
            from_frequency: Tensor::random_uniform(&[d, d], -spread, spread, &mut r),
            from_feature: Tensor::random_uniform(&[d, d], -spread, spread, &mut r),
            bias: Tensor::random_uniform(&[d, n], -spread, spread, &mut r),
        };
        let st = Tensor::random_uniform(&[d, cols], -5.0, 5.0, &mut r);
        let sw = Tensor::random_uniform(&[d, cols], -5.0, 5.0, &mut r);
        let tape = Tape::new();
        let c = |t: &Tensor<f64>| tape.constant(t.clone());
        let bound = GateParams {
            from_frequency: c(&p.from_frequency),
            from_feature: c(&p.from_feature),
            bias: c(&p.bias),
        };
        let mixed = cd_gate(c(&st), c(&sw), &bound).map_err(|e| e.to_string())?;
        for ((o, a), b) in mixed.value().data().iter().zip(st.data()).zip(sw.data()) {
            if *o < a.min(*b) || *o > a.max(*b) {
                outside += 1;
            }
        }
        let same = cd_gate(c(&st), c(&st), &bound).map_err(|e| e.to_string())?;
        if *same.value() != st {
            unequal += 1;
        }
    }
    check(
        outside == 0 && unequal == 0,
        format!("10000 triples: {outside} elements outside the interval, {unequal} equal-input mismatches"),
    )
}

// ---------------------------------------------------------------------------

struct Learnability {
    persistence: MetricsReport,
    setup: Duration,
    learned: (TrainOutcome, MetricsReport, Duration),
    ablated: (TrainOutcome, MetricsReport, Duration),
}

fn synthetic_model(gate: GateMode) -> ModelConfig {
    ModelConfig {
        history: 48,
        horizon: 12,
        num_turbines: 8,
        num_weather: 2,
        num_modes: 3,
        model_dim: 8,
        num_heads: 2,
        num_layers: 1,
        ffn_hidden: 16,
        node_dims: 8,
        gate,
        ..ModelConfig::default()
    }
}

/// Trains the full model and the frequency-only ablation on the same data,
/// concurrently.
fn learnability_runs() -> Result<Learnability, String> {
    let started = Instant::now();
    let raw = synth_generate(8, 4000, 2, 7, &SynthRecipe::default()).map_err(|e| e.to_string())?;
    let ds = make_windows(&raw, 48, 12, SplitRatio::default(), WindowOptions::default()).map_err(|e| e.to_string())?;
    let bank = ImfBank::build(&ds, &VmdConfig::with_modes(3)).map_err(|e| e.to_string())?;
    let coords: Vec<[f64; 2]> = (0..8).map(|k| [(k % 3) as f64 * 400.0, (k / 3) as f64 * 400.0]).collect();
    let graph = build_default_adjacency(&coords, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let n2v = Node2vecConfig { dims: 8, ..Node2vecConfig::default() };
    let walks = biased_walks(&graph, &n2v).map_err(|e| e.to_string())?;
    let node = train_embeddings(&walks, 8, &n2v).map_err(|e| e.to_string())?.vectors;
    let persistence = persistence_baseline(&ds, Split::Test).map_err(|e| e.to_string())?;
    let setup = started.elapsed();

    let run = |gate: GateMode| -> Result<(TrainOutcome, MetricsReport, Duration), String> {
        let t0 = Instant::now();
        let cfg = synthetic_model(gate);
        let ctx = TrainContext { dataset: &ds, imfs: &bank, node_embedding: &node };
        let tcfg = TrainConfig { epochs: 50, seed: 3, ..TrainConfig::default() };
        let out = train(HiformerParams::init(&cfg, 11), &ctx, &cfg, &tcfg).map_err(|e| e.to_string())?;
        let test = evaluate(&out.params, &ctx, &cfg, Split::Test, 256).map_err(|e| e.to_string())?;
        Ok((out, test, t0.elapsed()))
    };
    let (learned, ablated) = thread::scope(|s| {
        let a = s.spawn(|| run(GateMode::Learned));
        let b = s.spawn(|| run(GateMode::ForceFrequency));
        (a.join().expect("learned run"), b.join().expect("ablated run"))
    });
    Ok(Learnability { persistence, setup, learned: learned?, ablated: ablated? })
}

fn criterion_learnability(runs: &Learnability) -> Verdict {
    let (out, test, time) = &runs.learned;
    let ratio = test.mse / runs.persistence.mse;
    let detail = format!(
        "test MSE {:.4} vs persistence {:.4} (ratio {ratio:.3}, limit 0.7), best epoch {}",
        test.mse, runs.persistence.mse, out.best_epoch
    );
    check(ratio <= 0.7, detail.clone())?;
    within(runs.setup + *time, Duration::from_secs(15 * 60), detail)
}

fn criterion_ablation(runs: &Learnability) -> Verdict {
    let full = runs.learned.1.mse;
    let ablated = runs.ablated.1.mse;
    let degradation = (ablated - full) / full;
    check(
        degradation >= 0.05,
        format!(
            "frequency-only test MSE {ablated:.4} vs full {full:.4}: {:+.1}% (need at least +5%)",
            100.0 * degradation
        ),
    )
}

// ---------------------------------------------------------------------------

fn ramp(rows: usize, turbines: usize) -> RawDataset {
    let mut raw = synth_generate(turbines, rows, 1, 1, &SynthRecipe::default()).unwrap();
    for t in 0..rows {
        for j in 0..turbines {
            raw.power.set(&[t, j], (t * turbines + j) as f64 * 0.01 + 1.0);
        }
    }
    raw
}

fn used_rows(ds: &WindowedDataset, split: Split) -> Option<(usize, usize)> {
    let w = ds.windows(split);
    Some((*w.first()?, *w.last()? + ds.history + ds.horizon - 1))
}

fn criterion_protocol() -> Verdict {
    let short = WindowOptions { allow_short_splits: true, ..WindowOptions::default() };
    let ds = make_windows(&ramp(100, 2), 10, 5, SplitRatio::default(), short).map_err(|e| e.to_string())?;
    let bounds: Vec<_> = Split::ALL.iter().map(|&s| ds.plan.range(s)).collect();
    let counts: Vec<usize> = Split::ALL.iter().map(|&s| ds.windows(s).len()).collect();
    if bounds != [0..70, 70..80, 80..100] || counts != [56, 0, 6] || ds.windows(Split::Train)[0] != 0 {
        return Err(format!("T=100: bounds {bounds:?}, windows {counts:?}"));
    }

    let mut checked = 0;
    for rows in [60, 123, 457, 1000] {
        for (p, q) in [(3, 1), (5, 5), (10, 2), (24, 6)] {
            let raw = ramp(rows, 2);
            let Ok(ds) = make_windows(&raw, p, q, SplitRatio::default(), short) else { continue };
            let plan = SplitPlan::new(rows, SplitRatio::default()).map_err(|e| e.to_string())?;
            for split in Split::ALL {
                let len = plan.range(split).len();
                let want = (len + 1).saturating_sub(p + q);
                if ds.windows(split).len() != want {
                    return Err(format!("T={rows} P={p} Q={q} {split}: {} windows, expected {want}", ds.windows(split).len()));
                }
            }
            let spans: Vec<_> = Split::ALL.iter().filter_map(|&s| used_rows(&ds, s)).collect();
            if spans.windows(2).any(|w| w[0].1 >= w[1].0) {
                return Err(format!("T={rows} P={p} Q={q}: windows overlap across splits {spans:?}"));
            }
            checked += 1;
        }
    }

    let raw = synth_generate(3, 500, 2, 9, &SynthRecipe::default()).unwrap();
    let ds = make_windows(&raw, 24, 6, SplitRatio::default(), WindowOptions::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for t in 0..raw.rows() {
        for j in 0..3 {
            worst = worst.max((ds.stats.inverse(0, ds.power.at(&[t, j])) - raw.power.at(&[t, j])).abs());
            for c in 0..2 {
                let back = ds.stats.inverse(1 + c, ds.weather.at(&[t, j, c]));
                worst = worst.max((back - raw.weather.at(&[t, j, c])).abs());
            }
        }
    }
    let mut altered = raw.clone();
    for t in ds.plan.range(Split::Val).start..raw.rows() {
        for j in 0..3 {
            altered.power.set(&[t, j], 1e3 + t as f64);
        }
    }
    let refit = make_windows(&altered, 24, 6, SplitRatio::default(), WindowOptions::default()).map_err(|e| e.to_string())?;
    check(
        worst < 1e-12 && refit.stats == ds.stats,
        format!(
            "T=100,P=10,Q=5: 56 train windows, bounds 0/70/80/100; formula and no-overlap over {checked} shapes; \
             normalization round trip {worst:.1e}; stats unaffected by later rows: {}",
            refit.stats == ds.stats
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_determinism() -> Verdict {
    let raw = synth_generate(3, 600, 2, 8, &SynthRecipe::default()).map_err(|e| e.to_string())?;
    let ds = make_windows(&raw, 16, 4, SplitRatio::default(), WindowOptions::default()).map_err(|e| e.to_string())?;
    let bank = ImfBank::build(&ds, &VmdConfig::with_modes(2)).map_err(|e| e.to_string())?;
    let node = Tensor::random_uniform(&[8, 3], -1.0, 1.0, &mut rng(1));
    let cfg = ModelConfig {
        history: 16,
        horizon: 4,
        num_turbines: 3,
        num_weather: 2,
        num_modes: 2,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig { epochs: 4, batch_size: 32, seed: 21, ..TrainConfig::default() };
    let ctx = TrainContext { dataset: &ds, imfs: &bank, node_embedding: &node };
    let run = || -> Result<(TrainOutcome, MetricsReport), String> {
        let out = train(HiformerParams::init(&cfg, 4), &ctx, &cfg, &tcfg).map_err(|e| e.to_string())?;
        let test = evaluate(&out.params, &ctx, &cfg, Split::Test, 64).map_err(|e| e.to_string())?;
        Ok((out, test))
    };
    let (a, test_a) = run()?;
    let (b, test_b) = run()?;
    let same_history = a.history == b.history;
    let same_metrics = test_a == test_b;

    let dir = std::env::temp_dir().join(format!("hiformer-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("model.ckpt");
    Checkpoint {
        config: cfg.clone(),
        params: a.params.clone(),
        node_embedding: node.clone(),
        metadata: serde_json::Value::Null,
    }
    .save(&path)
    .map_err(|e| e.to_string())?;
    let loaded = Checkpoint::<f64>::load(&path).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    let ctx2 = TrainContext { dataset: &ds, imfs: &bank, node_embedding: &loaded.node_embedding };
    let reloaded = evaluate(&loaded.params, &ctx2, &loaded.config, Split::Test, 64).map_err(|e| e.to_string())?;
    let round_trip = reloaded == test_a && loaded.params == a.params;
    check(
        same_history && same_metrics && round_trip,
        format!(
            "repeat run: history identical {same_history}, metrics identical {same_metrics}; \
             checkpoint reload reproduces test MSE {:.6} bit-exactly: {round_trip}",
            test_a.mse
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_node2vec() -> Verdict {
    let started = Instant::now();
    let n = 10;
    let adjacency: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i != j && i / 5 == j / 5 { 1.0 } else { 0.0 }
        })
        .collect();
    let graph = TurbineGraph::from_adjacency(n, adjacency).map_err(|e| e.to_string())?;
    let cfg = Node2vecConfig { seed: 17, ..Node2vecConfig::default() };
    let walks = biased_walks(&graph, &cfg).map_err(|e| e.to_string())?;
    let emb = train_embeddings(&walks, n, &cfg).map_err(|e| e.to_string())?;
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            if i / 5 == j / 5 {
                intra.push(emb.cosine(i, j));
            } else {
                inter.push(emb.cosine(i, j));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&intra), mean(&inter));
    let detail = format!("mean intra-clique cosine {a:.3}, inter-clique {b:.3}, margin {:.3}", a - b);
    check(a - b >= 0.2, detail.clone())?;
    within(started.elapsed(), Duration::from_secs(30), detail)
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));

    let learn_names = ["5 learnability beats persistence", "6 ablation direction"];
    let needs_runs = learn_names.iter().any(|n| wanted(n));
    // the two long training runs proceed while the quick criteria execute
    let (runs_started, runs) = (Instant::now(), needs_runs.then(|| thread::spawn(learnability_runs)));

    let quick: [(&str, fn() -> Verdict); 7] = [
        ("1 gradient integrity", criterion_gradients),
        ("2 vmd recovery", criterion_vmd),
        ("3 attention oracle", criterion_attention),
        ("4 gate interval", criterion_gate),
        ("7 protocol fidelity", criterion_protocol),
        ("8 determinism and persistence", criterion_determinism),
        ("9 node2vec separation", criterion_node2vec),
    ];
    let mut results: Vec<(String, Verdict, Duration)> = Vec::new();
    for (name, f) in quick {
        if wanted(name) {
            let t0 = Instant::now();
            let verdict = f();
            results.push((name.to_string(), verdict, t0.elapsed()));
        }
    }
    if let Some(handle) = runs {
        let outcome = handle.join().expect("training thread");
        let elapsed = runs_started.elapsed();
        let per_run = |pick: fn(&Learnability) -> Duration| match &outcome {
            Ok(r) => r.setup + pick(r),
            Err(_) => elapsed,
        };
        let judged: [(&str, fn(&Learnability) -> Verdict, Duration); 2] = [
            (learn_names[0], criterion_learnability, per_run(|r| r.learned.2)),
            (learn_names[1], criterion_ablation, per_run(|r| r.ablated.2)),
        ];
        for (name, f, time) in judged {
            if wanted(name) {
                let verdict = match &outcome {
                    Ok(r) => f(r),
                    Err(e) => Err(e.clone()),
                };
                results.push((name.to_string(), verdict, time));
            }
        }
    }
    results.sort_by_key(|(name, _, _)| name.split(' ').next().and_then(|k| k.parse::<u32>().ok()));

    let mut failed = 0;
    for (name, verdict, time) in &results {
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {name}: {tag} ({time:.2?}) {detail}");
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
