//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test -p crowdflow --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdflow::groundtruth::{
    augment, localization_map, multiscale_targets, trajectories, Altitude, AugmentConfig,
    HeadAnnotation, Illumination, KernelConfig,
};
use crowdflow::metrics::{evaluate, l_map, mae_mse, t_map, CountRecord, SequenceEvaluation};
use crowdflow::postprocess::{
    build_flow_graph, detection_cost, localize, solve_min_cost_flow, track, Detection, FlowParams,
    NmsConfig,
};
use crowdflow::simulator::{generate, SceneConfig, SyntheticSequence};
use crowdflow::stanet::{
    compute_step, init_params, make_batch, sample_loss, temporal_pair, train, Model, ModelConfig,
    TrainConfig, SCALES,
};
use crowdflow::tensorcore::{ConvGeometry, Graph, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- gradients

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Largest violation of `|a - n| <= max(1e-3·max(|a|,|n|), 1e-6)` over all
/// input elements, as a ratio to the allowed error (≤ 1 passes).
fn fd_violation(inputs: &[Tensor], f: &Build, seed: u64) -> f64 {
    let build = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g0, _, out0) = build(inputs);
    let proj = Tensor::uniform(g0.shape(out0), -1.0, 1.0, &mut rng(seed));
    let loss_of = |vals: &[Tensor]| -> f64 {
        let (g, _, out) = build(vals);
        g.value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let (mut g, vars, out) = build(inputs);
    let p = g.constant(proj.clone());
    let m = g.mul(out, p).unwrap();
    let l = g.sum(m);
    g.backward(l).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let tol = (1e-3 * a.abs().max(numeric.abs())).max(1e-6);
            worst = worst.max((a - numeric).abs() / tol);
        }
    }
    worst
}

/// Values at least 0.05 away from integers, so bilinear sampling stays off
/// its kinks under a ±1e-4 perturbation.
fn off_grid(t: Tensor) -> Tensor {
    t.map(|v| v.floor() + 0.05 + 0.9 * (v - v.floor()))
}

/// Values whose pairwise gaps exceed the probe step, so max-type
/// selections stay put under perturbation.
fn distinct(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n)
        .map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0)
        .collect();
    for i in (1..n).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    Tensor::from_vec(shape, vals).unwrap()
}

fn random_case(case: usize, r: &mut ChaCha8Rng) -> (&'static str, Vec<Tensor>, Build) {
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=4);
    let h = 2 * r.random_range(1..=4);
    let w = 2 * r.random_range(1..=4);
    let u = |shape, r: &mut ChaCha8Rng| Tensor::uniform(shape, -1.0, 1.0, r);
    match case % 18 {
        0 => {
            let co = r.random_range(1..=4);
            let k = [1, 3][r.random_range(0..2)];
            let (x, wt, b) = (u([n, c, h, w], r), u([co, c, k, k], r), u([1, co, 1, 1], r));
            (
                "conv2d",
                vec![x, wt, b],
                Box::new(move |g, v| {
                    g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::same(k))
                        .unwrap()
                }),
            )
        }
        1 => {
            let co = r.random_range(1..=3);
            let (x, wt) = (u([n, c, h, w], r), u([co, c, 3, 3], r));
            let off = off_grid(Tensor::uniform([n, 18, h, w], -1.5, 1.5, r));
            (
                "deform_conv2d",
                vec![x, wt, off],
                Box::new(|g, v| g.deform_conv2d(v[0], v[1], v[2], None, 1, 1).unwrap()),
            )
        }
        2 => (
            "maxpool2d",
            vec![distinct([n, c, h, w], r)],
            Box::new(|g, v| g.maxpool2(v[0]).unwrap()),
        ),
        3 => (
            "upsample_bilinear",
            vec![u([n, c, h / 2, w / 2], r)],
            Box::new(|g, v| g.upsample2(v[0]).unwrap()),
        ),
        4 => {
            let k = r.random_range(1..=3);
            (
                "concat",
                vec![u([n, c, h, w], r), u([n, k, h, w], r)],
                Box::new(|g, v| g.concat(&[v[0], v[1]]).unwrap()),
            )
        }
        5 => {
            // keep inputs away from the kink at zero
            let x = u([n, c, h, w], r).map(|v| if v.abs() < 0.01 { v + 0.02 } else { v });
            ("relu", vec![x], Box::new(|g, v| g.relu(v[0])))
        }
        6 => (
            "sigmoid",
            vec![u([n, c, h, w], r).map(|v| 3.0 * v)],
            Box::new(|g, v| g.sigmoid(v[0])),
        ),
        7 => (
            "multiply",
            vec![u([n, c, h, w], r), u([n, 1, h, w], r)],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        8 => (
            "add",
            vec![u([n, c, h, w], r), u([n, c, 1, 1], r)],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        9 => (
            "global_avg_pool",
            vec![u([n, c, h, w], r)],
            Box::new(|g, v| g.global_avg_pool(v[0])),
        ),
        10 => (
            "global_max_pool",
            vec![distinct([n, c, h, w], r)],
            Box::new(|g, v| g.global_max_pool(v[0])),
        ),
        11 => (
            "channel_mean",
            vec![u([n, c, h, w], r)],
            Box::new(|g, v| g.channel_mean(v[0])),
        ),
        12 => (
            "channel_max",
            vec![distinct([n, c, h, w], r)],
            Box::new(|g, v| g.channel_max(v[0])),
        ),
        13 => {
            let k = r.random_range(1..=5);
            let (x, wt, b) = (u([n, c, 1, 1], r), u([k, c, 1, 1], r), u([1, k, 1, 1], r));
            (
                "fully_connected",
                vec![x, wt, b],
                Box::new(|g, v| g.fully_connected(v[0], v[1], Some(v[2])).unwrap()),
            )
        }
        14 => {
            let x = u([n, c, h, w], r).map(|v| if v.abs() < 0.1 { v + 0.2 } else { v });
            (
                "l2_normalize",
                vec![x],
                Box::new(|g, v| g.l2_normalize(v[0])),
            )
        }
        15 => {
            let k = r.random_range(0.1..2.0);
            (
                "scale",
                vec![u([n, c, h, w], r)],
                Box::new(move |g, v| g.scale(v[0], k)),
            )
        }
        16 => {
            let target = u([n, c, h, w], r);
            let k = r.random_range(0.1..1.0);
            (
                "squared_error",
                vec![u([n, c, h, w], r)],
                Box::new(move |g, v| g.weighted_squared_error(v[0], &target, k).unwrap()),
            )
        }
        _ => {
            let pts: Vec<(f64, f64)> = (0..3)
                .map(|_| (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64)))
                .map(|(x, y): (f64, f64)| {
                    (
                        x.floor() + 0.55 + 0.4 * (x - x.floor()),
                        y.floor() + 0.55 + 0.4 * (y - y.floor()),
                    )
                })
                .collect();
            (
                "sample_points",
                vec![u([1, c, h, w], r)],
                Box::new(move |g, v| g.sample_points(v[0], 0, &pts).unwrap()),
            )
        }
    }
}

fn triplet_case(r: &mut ChaCha8Rng) -> (Vec<Tensor>, Build) {
    let c = r.random_range(2..=4);
    let cur = distinct([1, c, 1, 4], r);
    let prev = distinct([1, c, 1, 3], r).map(|v| v * 0.9 + 0.03);
    (
        vec![cur, prev],
        Box::new(|g, v| {
            g.batch_hard_triplet(v[0], &[1, 2, 3, 4], v[1], &[2, 1, 4], 1.5)
                .unwrap()
                .0
        }),
    )
}

fn small_model() -> ModelConfig {
    ModelConfig {
        channels: [4, 6, 8, 8],
        group_depth: [1, 1, 1, 1],
        fuse_channels: 4,
        embedding_dim: 4,
        ..Default::default()
    }
}

/// Finite differences of the full training loss on 20 random parameter
/// entries, batch of two 32×32 RGB pairs.
fn total_loss_fd() -> (f64, usize) {
    let seq = generate(&SceneConfig {
        width: 64,
        height: 48,
        frames: 4,
        n_min: 6,
        n_max: 8,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        model: small_model(),
        augment: AugmentConfig {
            crop: Some((32, 32)),
            ..Default::default()
        },
        ..Default::default()
    };
    let mut r = rng(22);
    let pairs = (0..2)
        .map(|t| augment(&temporal_pair(&seq, t + 1, 1), &cfg.augment, &mut r).unwrap())
        .collect();
    let batch = make_batch(pairs, &cfg.model, &cfg.kernel).unwrap();
    assert_eq!(batch.current.shape(), [2, 3, 32, 32]);
    let mut params = init_params(&cfg.model, &mut r).unwrap();
    // Zero offsets put every deformable tap on the integer grid, where bilinear sampling is not
    // differentiable; probe at a generic point instead.
    let offset_names: Vec<String> = params
        .names()
        .filter(|n| n.contains("offset"))
        .map(String::from)
        .collect();
    for name in &offset_names {
        let scale = if name.ends_with("bias") { 0.4 } else { 0.01 };
        for v in params.get_mut(name).unwrap().data_mut() {
            *v = scale * (r.random::<f64>() * 2.0 - 1.0);
        }
    }
    let grads = compute_step(&params, &cfg, &batch).unwrap().gradients;
    let names: Vec<String> = params.names().map(String::from).collect();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let name = if k < offset_names.len() {
            &offset_names[k]
        } else {
            &names[r.random_range(0..names.len())]
        };
        let i = r.random_range(0..params.get(name).unwrap().len());
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[i] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[i] -= h;
        let numeric = (sample_loss(&plus, &cfg, &batch).unwrap()
            - sample_loss(&minus, &cfg, &batch).unwrap())
            / (2.0 * h);
        let a = grads.get(name).map_or(0.0, |g| g.data()[i]);
        let tol = (1e-3 * a.abs().max(numeric.abs())).max(1e-6);
        worst = worst.max((a - numeric).abs() / tol);
    }
    (worst, 20)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut cases = 0;
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for case in 0..216 {
        let (name, inputs, f) = random_case(case, &mut r);
        let v = fd_violation(&inputs, &f, case as u64);
        worst = worst.max(v);
        if v > 1.0 {
            *failures.entry(name).or_default() += 1;
        }
        cases += 1;
    }
    for k in 0..12 {
        let (inputs, f) = triplet_case(&mut r);
        let v = fd_violation(&inputs, &f, 1000 + k);
        worst = worst.max(v);
        if v > 1.0 {
            *failures.entry("batch_hard_triplet").or_default() += 1;
        }
        cases += 1;
    }
    let (loss_worst, probes) = total_loss_fd();
    if loss_worst > 1.0 {
        failures.insert("total_loss", 1);
    }
    cases += 1;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && cases >= 200 && secs < 60.0,
        format!(
            "{cases} cases ({probes} total-loss probes), worst error/tolerance {:.3}, failures {failures:?}, {secs:.1}s",
            worst.max(loss_worst)
        ),
    )
}

// ------------------------------------------------------------- conservation

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(2);
    let kernel = KernelConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (w, h) = (8 * r.random_range(2..=8), 8 * r.random_range(2..=8));
        let n = r.random_range(0..=40);
        let heads: Vec<(f64, f64)> = (0..n)
            .map(|_| (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64)))
            .collect();
        for level in multiscale_targets(&heads, w, h, SCALES, &kernel, 3.0).unwrap() {
            let err = (level.density.sum() - n as f64).abs();
            worst = worst.max(if n == 0 {
                err / 1e-12
            } else {
                err / (1e-6 * n as f64)
            });
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1.0 && secs < 10.0,
        format!("1000 head sets × {SCALES} scales, worst error/tolerance {worst:.2e}, {secs:.1}s"),
    )
}

// ------------------------------------------------------------- flow solver

/// Minimum over every set of node-disjoint chains through consecutive
/// frames, by recursive assignment of each detection to a predecessor.
fn brute_force_cost(frames: &[Vec<Detection>], p: &FlowParams) -> f64 {
    fn go(
        frames: &[Vec<Detection>],
        p: &FlowParams,
        g: usize,
        i: usize,
        state: &mut Vec<Vec<Option<bool>>>,
        taken: &mut Vec<Vec<bool>>,
        acc: f64,
        best: &mut f64,
    ) {
        if g == frames.len() {
            // every used detection without a successor pays the exit cost
            let exits: f64 = state
                .iter()
                .enumerate()
                .flat_map(|(gg, s)| s.iter().enumerate().map(move |(ii, u)| (gg, ii, *u)))
                .filter(|&(gg, ii, u)| u.is_some() && !taken[gg][ii])
                .count() as f64
                * p.exit_cost;
            *best = best.min(acc + exits);
            return;
        }
        if i == frames[g].len() {
            go(frames, p, g + 1, 0, state, taken, acc, best);
            return;
        }
        let d = frames[g][i];
        state[g][i] = None;
        go(frames, p, g, i + 1, state, taken, acc, best);
        state[g][i] = Some(true);
        go(
            frames,
            p,
            g,
            i + 1,
            state,
            taken,
            acc + detection_cost(d.confidence) + p.entry_cost,
            best,
        );
        if g > 0 {
            for j in 0..frames[g - 1].len() {
                if state[g - 1][j].is_none() || taken[g - 1][j] {
                    continue;
                }
                let dist = frames[g - 1][j].distance(&d);
                if dist > p.gate {
                    continue;
                }
                taken[g - 1][j] = true;
                state[g][i] = Some(false);
                go(
                    frames,
                    p,
                    g,
                    i + 1,
                    state,
                    taken,
                    acc + detection_cost(d.confidence) + dist / p.gate,
                    best,
                );
                taken[g - 1][j] = false;
            }
        }
        state[g][i] = None;
    }
    let mut state: Vec<Vec<Option<bool>>> = frames.iter().map(|f| vec![None; f.len()]).collect();
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    let mut best = 0.0;
    go(frames, p, 0, 0, &mut state, &mut taken, 0.0, &mut best);
    best
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..500 {
        let groups = r.random_range(1..=3);
        let frames: Vec<Vec<Detection>> = (0..groups)
            .map(|f| {
                (0..r.random_range(0..=3))
                    .map(|_| Detection {
                        frame: f,
                        x: r.random_range(0.0..40.0),
                        y: r.random_range(0.0..40.0),
                        confidence: r.random_range(0.05..0.999),
                    })
                    .collect()
            })
            .collect();
        let params = FlowParams {
            gate: r.random_range(5.0..40.0),
            entry_cost: r.random_range(0.0..3.0),
            exit_cost: r.random_range(0.0..3.0),
            ..FlowParams::default()
        };
        let graph = build_flow_graph(&frames, &params, None).unwrap();
        let sol = solve_min_cost_flow(&graph);
        let diff = (sol.cost - brute_force_cost(&frames, &params)).abs();
        worst = worst.max(diff);
        if diff > 1e-9 {
            bad += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 30.0,
        format!("500 instances, {bad} mismatches, worst |Δcost| {worst:.1e}, {secs:.2}s"),
    )
}

// ------------------------------------------------------------------ metrics

fn ground_truth_pipeline(seq: &SyntheticSequence) -> (f64, f64, f64, f64) {
    let cfg = &seq.config;
    let kernel = KernelConfig::default();
    let mut records = Vec::new();
    let mut dets = Vec::new();
    for f in 0..seq.frames.len() {
        let pts: Vec<(f64, f64)> = seq
            .heads_in_frame(f)
            .iter()
            .map(HeadAnnotation::point)
            .collect();
        let levels = multiscale_targets(&pts, cfg.width, cfg.height, SCALES, &kernel, 3.0).unwrap();
        records.push(CountRecord {
            video: 0,
            frame: f,
            truth: pts.len() as f64,
            estimate: levels[SCALES - 1].density.sum(),
        });
        let loc = localization_map(&pts, cfg.width, cfg.height, 3.0).unwrap();
        dets.extend(localize(&loc, f, NmsConfig::default()).unwrap());
    }
    let (mae, mse) = mae_mse(&records).unwrap();
    let tracks = track(&dets, &FlowParams::default()).unwrap();
    let trajs: Vec<Vec<HeadAnnotation>> = trajectories(&seq.heads).into_values().collect();
    (
        mae,
        mse,
        l_map(&dets, &seq.heads).unwrap().l_map,
        t_map(&tracks, &trajs).unwrap().t_map,
    )
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let recs = [
        CountRecord {
            video: 0,
            frame: 0,
            truth: 10.0,
            estimate: 12.0,
        },
        CountRecord {
            video: 0,
            frame: 1,
            truth: 20.0,
            estimate: 17.0,
        },
    ];
    let (mae, mse) = mae_mse(&recs).unwrap();
    let ok = (mae - 2.5).abs() <= 1e-9 && (mse - 6.5f64.sqrt()).abs() <= 1e-9;
    pass &= ok;
    notes.push(format!("MAE {mae} MSE {mse:.6}"));

    let gt = [HeadAnnotation {
        frame: 0,
        id: 1,
        x: 20.0,
        y: 20.0,
    }];
    let det = [Detection {
        frame: 0,
        x: 30.5,
        y: 20.0,
        confidence: 0.9,
    }];
    let l = l_map(&det, &gt).unwrap().l_map;
    pass &= l == 0.6;
    notes.push(format!("L-mAP@10.5px {l}"));

    let mut worst = (0.0f64, 0.0f64, 1.0f64, 1.0f64);
    for (k, alt) in [Altitude::High, Altitude::Low].into_iter().enumerate() {
        let seq = generate(
            &SceneConfig {
                seed: 40 + k as u64,
                ..Default::default()
            }
            .with_altitude(alt),
        )
        .unwrap();
        let (mae, mse, l, t) = ground_truth_pipeline(&seq);
        worst = (
            worst.0.max(mae),
            worst.1.max(mse),
            worst.2.min(l),
            worst.3.min(t),
        );
    }
    pass &= worst.0 <= 1e-9 && worst.1 <= 1e-9 && worst.2 == 1.0 && worst.3 == 1.0;
    notes.push(format!(
        "ground truth as prediction: MAE {:.1e} MSE {:.1e} L-mAP {} T-mAP {}",
        worst.0, worst.1, worst.2, worst.3
    ));
    outcome(pass, notes.join("; "))
}

// ------------------------------------------------------- learning signal

struct DeskRun {
    first_loss: f64,
    last_loss: f64,
    mae: f64,
    mean_count: f64,
    l_map: f64,
    elapsed: Duration,
}

fn desk_dataset() -> (Vec<SyntheticSequence>, SyntheticSequence) {
    let illum = [
        Illumination::Sunny,
        Illumination::Cloudy,
        Illumination::Night,
    ];
    let train: Vec<SyntheticSequence> = (0..8)
        .map(|i| {
            let crowded = i % 2 == 1;
            let cfg = SceneConfig {
                seed: 100 + i,
                illumination: illum[i as usize % 3],
                n_min: if crowded { 22 } else { 10 },
                n_max: if crowded { 34 } else { 18 },
                ..Default::default()
            }
            .with_altitude(if i % 4 < 2 {
                Altitude::High
            } else {
                Altitude::Low
            });
            generate(&cfg).unwrap()
        })
        .collect();
    let held = generate(&SceneConfig {
        seed: 999,
        n_min: 14,
        n_max: 26,
        ..Default::default()
    })
    .unwrap();
    (train, held)
}

fn desk_run(
    train_set: &[SyntheticSequence],
    held: &SyntheticSequence,
    multiscale: bool,
) -> DeskRun {
    let t0 = Instant::now();
    let mut cfg = TrainConfig::desk();
    cfg.seed = 1;
    cfg.model.use_multiscale = multiscale;
    assert_eq!(cfg.schedule.total_epochs(), 30);
    let out = train(train_set, &cfg, None).unwrap();
    let model: Model = out.model;
    let preds = model.predict_sequence(&held.frames).unwrap();
    let mut records = Vec::new();
    let mut dets = Vec::new();
    for (f, p) in preds.iter().enumerate() {
        records.push(CountRecord {
            video: 0,
            frame: f,
            truth: held.heads_in_frame(f).len() as f64,
            estimate: p.final_density().sum(),
        });
        dets.extend(localize(p.final_localization().unwrap(), f, NmsConfig::default()).unwrap());
    }
    let (mae, _) = mae_mse(&records).unwrap();
    DeskRun {
        first_loss: out.log[0].loss_total,
        last_loss: out.log.last().unwrap().loss_total,
        mae,
        mean_count: records.iter().map(|r| r.truth).sum::<f64>() / records.len() as f64,
        l_map: l_map(&dets, &held.heads).unwrap().l_map,
        elapsed: t0.elapsed(),
    }
}

fn criterion_5(run: &DeskRun) -> Outcome {
    let reduction = run.first_loss / run.last_loss;
    let ratio = run.mae / run.mean_count;
    outcome(
        reduction >= 5.0 && ratio <= 0.15 && run.l_map >= 0.5,
        format!(
            "loss {:.4} -> {:.4} ({reduction:.2}x, need >= 5), MAE {:.2} = {:.1}% of mean count {:.2} (need <= 15%), L-mAP {:.3} (need >= 0.5), {:.0}s",
            run.first_loss,
            run.last_loss,
            run.mae,
            100.0 * ratio,
            run.mean_count,
            run.l_map,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(full: &DeskRun, single: &DeskRun) -> Outcome {
    outcome(
        single.mae >= full.mae,
        format!(
            "held-out MAE without multi-scale {:.3} vs full {:.3} (directional expectation: without >= full), {:.0}s",
            single.mae,
            full.mae,
            single.elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------- deformable conv

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..=2);
        let c = r.random_range(1..=4);
        let co = r.random_range(1..=4);
        let (h, w) = (r.random_range(3..=9), r.random_range(3..=9));
        let k = [1, 3, 5][r.random_range(0..3)];
        let x = Tensor::uniform([n, c, h, w], -1.0, 1.0, &mut r);
        let wt = Tensor::uniform([co, c, k, k], -1.0, 1.0, &mut r);
        let b = Tensor::uniform([1, co, 1, 1], -1.0, 1.0, &mut r);
        let mut g = Graph::inference();
        let (xv, wv, bv) = (g.constant(x), g.constant(wt), g.constant(b));
        let off = g.constant(Tensor::zeros([n, 2 * k * k, h, w]));
        let a = g.deform_conv2d(xv, wv, off, Some(bv), 1, k / 2).unwrap();
        let c2 = g.conv2d(xv, wv, Some(bv), ConvGeometry::same(k)).unwrap();
        worst = worst.max(g.value(a).max_abs_diff(g.value(c2)));
    }
    outcome(
        worst <= 1e-12,
        format!("100 cases, worst |deform - conv| {worst:.1e}"),
    )
}

// ------------------------------------------------------------- determinism

fn pipeline_results(seed: u64) -> String {
    let scene = SceneConfig {
        width: 64,
        height: 48,
        frames: 6,
        n_min: 5,
        n_max: 8,
        seed,
        ..Default::default()
    };
    let data = vec![generate(&scene).unwrap()];
    let held = generate(&SceneConfig {
        seed: seed + 1,
        ..scene.clone()
    })
    .unwrap();
    let mut cfg = TrainConfig::desk();
    cfg.model = small_model();
    cfg.schedule = crowdflow::tensorcore::LrSchedule::constant(2, 1e-3);
    cfg.samples_per_epoch = 4;
    cfg.batch_size = 2;
    cfg.augment.crop = Some((32, 32));
    cfg.seed = seed;
    let model = train(&data, &cfg, None).unwrap().model;
    let preds = model.predict_sequence(&held.frames).unwrap();
    let mut detections = Vec::new();
    for (f, p) in preds.iter().enumerate() {
        detections.extend(
            localize(
                p.final_localization().unwrap(),
                f,
                NmsConfig {
                    theta: 0.05,
                    radius: 3,
                },
            )
            .unwrap(),
        );
    }
    let tracklets = track(&detections, &FlowParams::default()).unwrap();
    let eval = SequenceEvaluation {
        name: "held".into(),
        attributes: Some(held.attributes()),
        frame_count: held.frames.len(),
        estimated_counts: preds.iter().map(|p| p.final_density().sum()).collect(),
        detections,
        tracklets,
        ground_truth: held.heads.clone(),
    };
    evaluate(&[eval]).unwrap().to_json()
}

fn criterion_8() -> Outcome {
    let a = pipeline_results(8);
    let b = pipeline_results(8);
    let c = pipeline_results(9);
    outcome(
        a.as_bytes() == b.as_bytes() && !a.is_empty(),
        format!(
            "{} bytes, identical: {}, different seed differs: {}",
            a.len(),
            a == b,
            a != c
        ),
    )
}

// -------------------------------------------------------------------- main

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id} [{name}]: {} ({}; {:.1}s)",
        if result.pass { "PASS" } else { "FAIL" },
        result.detail,
        t0.elapsed().as_secs_f64()
    );
    result.pass
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut passed = Vec::new();
    let mut failed = Vec::new();
    let mut record = |id: usize, ok: bool| if ok { passed.push(id) } else { failed.push(id) };

    if wanted(1) {
        record(1, run(1, "gradient suite", criterion_1));
    }
    if wanted(2) {
        record(2, run(2, "density conservation", criterion_2));
    }
    if wanted(3) {
        record(3, run(3, "flow optimality", criterion_3));
    }
    if wanted(4) {
        record(4, run(4, "metric oracles", criterion_4));
    }
    if wanted(5) || wanted(6) {
        let (train_set, held) = desk_dataset();
        let full = catch_unwind(|| desk_run(&train_set, &held, true)).ok();
        if wanted(5) {
            record(
                5,
                run(5, "desk-scale learning", || {
                    criterion_5(full.as_ref().expect("full training run failed"))
                }),
            );
        }
        if wanted(6) {
            record(
                6,
                run(6, "multi-scale ablation", || {
                    let single = desk_run(&train_set, &held, false);
                    criterion_6(full.as_ref().expect("full training run failed"), &single)
                }),
            );
        }
    }
    if wanted(7) {
        record(7, run(7, "deformable degeneracy", criterion_7));
    }
    if wanted(8) {
        record(8, run(8, "determinism", criterion_8));
    }
    println!(
        "acceptance: {} passed {passed:?}, {} failed {failed:?}",
        passed.len(),
        failed.len()
    );
    // The report is the result; a non-zero exit is opt-in so the workspace run stays usable.
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
