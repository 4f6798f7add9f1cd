//! Acceptance checks for the whole system. Runs without the default test
//! harness so every criterion prints one PASS or FAIL line; any failure makes
//! the process exit nonzero.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use densenet::archive::{decode_archive, encode_archive};
use densenet::cli;
use densenet::commands;
use densenet::config::RunConfig;
use densenet::fbank::{compute_logmel, FilterbankConfig};
use densenet_core::arch::{
    block_connection_count, bottleneck_pairs_per_block, layers_per_block, plan_architecture,
    transition_output_channels,
};
use densenet_core::features::{append_deltas, apply_cmvn, compute_cmvn_stats, delta, splice_context};
use densenet_core::gradcheck::{check_layers, TOLERANCE};
use densenet_core::train::{evaluate, train_epoch};
use densenet_core::{
    make_synthetic_dataset, DenseNetConfig, FrameSet, Model, Sgd, StageKind, SynthConfig, TrainConfig,
    UtteranceFeatures, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Outcome {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}");
    Ok(format!("{took:.2?}"))
}

/// Inspect output sizes and block contents for depth 22, 3 blocks, 3×11×40.
fn shape_table() -> Outcome {
    let started = Instant::now();
    for (variant, theta, block_text) in [
        ("plain", "1", "{3x3 conv}x6"),
        ("c", "0.5", "{3x3 conv}x6"),
        ("bc", "0.5", "{1x1 conv;3x3 conv}x3"),
    ] {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let args = [
            "densenet", "inspect", "--machine", "--set", "depth=22", "--set", "blocks=3", "--set",
        ];
        let v = format!("variant={variant}");
        let t = format!("compression={theta}");
        let code = cli::run(args.iter().copied().chain([v.as_str(), "--set", t.as_str()]), &mut out, &mut err);
        ensure!(code == 0, "{variant}: inspect exited {code}: {}", String::from_utf8_lossy(&err));
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<Vec<&str>> =
            text.lines().filter(|l| !l.starts_with('#')).map(|l| l.split('\t').collect()).collect();
        let sizes: Vec<&str> = rows.iter().filter(|r| r.len() > 3).map(|r| r[3]).collect();
        let want = ["9x38", "9x38", "9x38/4x19", "4x19", "4x19/2x9", "2x9", "1x1"];
        ensure!(sizes == want, "{variant}: output sizes {sizes:?}, expected {want:?}");
        let blocks: Vec<&str> = rows.iter().filter(|r| r[0] == "block").map(|r| r[7]).collect();
        ensure!(blocks == [block_text; 3], "{variant}: block contents {blocks:?}");
    }
    within(Duration::from_secs(1), started)
}

fn layer_arithmetic() -> Outcome {
    let l22 = layers_per_block(22, 3).map_err(|e| e.to_string())?;
    let p22 = bottleneck_pairs_per_block(22, 3).map_err(|e| e.to_string())?;
    let l41 = layers_per_block(41, 4).map_err(|e| e.to_string())?;
    ensure!((l22, p22, l41) == (6, 3, 9), "got layers(22,3)={l22}, pairs(22,3)={p22}, layers(41,4)={l41}");
    Ok(format!("layers(22,3)={l22} pairs(22,3)={p22} layers(41,4)={l41}"))
}

fn depth41(variant: Variant, blocks: usize, compression: f64) -> DenseNetConfig {
    DenseNetConfig {
        variant,
        depth: 41,
        blocks,
        growth_rate: 12,
        compression,
        num_classes: 1500,
        first_conv_channels: 16,
        ..DenseNetConfig::default()
    }
}

/// Depth-41 totals, their ordering, and analytic versus built counts.
fn parameter_counts() -> Outcome {
    let started = Instant::now();
    let cases = [
        ("plain/3", depth41(Variant::Plain, 3, 1.0), 1_600_000.0),
        ("C/3", depth41(Variant::C, 3, 0.5), 914_000.0),
        ("C/4", depth41(Variant::C, 4, 0.5), 661_000.0),
        ("BC/3", depth41(Variant::BC, 3, 0.5), 387_000.0),
    ];
    let mut totals = Vec::new();
    for (name, cfg, reference) in &cases {
        let plan = plan_architecture(cfg).map_err(|e| format!("{name}: {e}"))?;
        let model: Model<f32> = Model::build(cfg, 1).map_err(|e| format!("{name}: {e}"))?;
        let built = model.count_parameters().total;
        ensure!(built == plan.total_params(), "{name}: built {built} vs analytic {}", plan.total_params());
        let ratio = built as f64 / reference;
        ensure!((0.75..=1.25).contains(&ratio), "{name}: {built} is {ratio:.3} of {reference}");
        totals.push(built);
    }
    ensure!(totals.windows(2).all(|w| w[0] > w[1]), "ordering broken: {totals:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20 {
        let variant = [Variant::Plain, Variant::C, Variant::BC][i % 3];
        let blocks = rng.random_range(1..=4);
        let per = rng.random_range(1..=4) * if variant == Variant::BC { 2 } else { 1 };
        // Smallest input that survives the first conv and every 2×2 pool.
        let min_side = (1 << (blocks - 1)) + 2;
        let cfg = DenseNetConfig {
            variant,
            depth: blocks * per + blocks + 1,
            blocks,
            growth_rate: rng.random_range(1..=16),
            compression: if variant == Variant::Plain { 1.0 } else { rng.random_range(3..=9) as f64 / 10.0 },
            input_channels: [1, 3][rng.random_range(0..2)],
            input_height: rng.random_range(min_side..=min_side + 20),
            input_width: rng.random_range(min_side..=min_side + 40),
            num_classes: rng.random_range(2..=300),
            first_conv_channels: rng.random_range(4..=24),
        };
        let plan = plan_architecture(&cfg).map_err(|e| format!("random {i} {cfg:?}: {e}"))?;
        let model: Model<f32> = Model::build(&cfg, i as u64).map_err(|e| format!("random {i}: {e}"))?;
        let walked: usize = model.params().iter().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum();
        ensure!(walked == plan.total_params(), "random {i} {cfg:?}: walked {walked} vs analytic {}", plan.total_params());
    }
    let timing = within(Duration::from_secs(5), started)?;
    Ok(format!("plain {} > C3 {} > C4 {} > BC {}; 20 random configs agree; {timing}", totals[0], totals[1], totals[2], totals[3]))
}

/// `⌊θc⌋` against exact integer arithmetic, and as realized in planned transitions.
fn compression_floor() -> Outcome {
    let mut checked = 0;
    for tenths in 1..=9usize {
        let theta = tenths as f64 / 10.0;
        for c in 1..=512usize {
            let exact = tenths * c / 10;
            match transition_output_channels(c, theta) {
                Ok(got) => ensure!(got == exact, "θ={theta} c={c}: got {got}, expected {exact}"),
                Err(_) => ensure!(exact == 0, "θ={theta} c={c}: rejected, expected {exact}"),
            }
            checked += 1;
        }
        let cfg = DenseNetConfig { variant: Variant::C, depth: 40, compression: theta, ..DenseNetConfig::default() };
        let plan = plan_architecture(&cfg).map_err(|e| e.to_string())?;
        for t in plan.stages_of(StageKind::Transition) {
            let exact = tenths * t.input_channels / 10;
            ensure!(t.output_channels == exact, "θ={theta}: transition {} has {} maps, expected {exact}", t.index, t.output_channels);
        }
    }
    Ok(format!("{checked} (θ, c) pairs"))
}

/// Connection counts, both the formula and the wiring of built blocks.
fn dense_edges() -> Outcome {
    for l in 1..=12usize {
        ensure!(block_connection_count(l) == l * (l + 1) / 2, "formula wrong for L={l}");
        let cfg = DenseNetConfig {
            variant: Variant::Plain,
            depth: l + 2,
            blocks: 1,
            growth_rate: 2,
            compression: 1.0,
            input_channels: 1,
            input_height: 5,
            input_width: 5,
            num_classes: 2,
            first_conv_channels: 2,
        };
        let model: Model<f32> = Model::build(&cfg, 0).map_err(|e| e.to_string())?;
        let edges = model.wiring()[0].edge_count();
        ensure!(edges == l * (l + 1) / 2, "L={l}: built block has {edges} edges");
    }
    ensure!(block_connection_count(3) == 6, "3-layer block");
    Ok("L = 1..12 match L(L+1)/2; 3 layers give 6".into())
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let checks = check_layers(7, 10).map_err(|e| e.to_string())?;
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    for c in &checks {
        ensure!(c.instances == 10, "{}: {} instances", c.layer, c.instances);
        ensure!(c.passed(), "{}: max rel err {:.3e} ({} of {} probes skipped)", c.layer, c.max_rel_err, c.skipped, c.probes);
    }
    ensure!(worst < TOLERANCE, "worst {worst:e}");
    let timing = within(Duration::from_secs(60), started)?;
    Ok(format!("{} checks, worst rel err {worst:.2e}; {timing}", checks.len()))
}

fn depth13() -> DenseNetConfig {
    DenseNetConfig {
        variant: Variant::C,
        depth: 13,
        blocks: 3,
        growth_rate: 12,
        compression: 0.5,
        num_classes: 10,
        ..DenseNetConfig::default()
    }
}

/// First `n` frames of `utts`, taken round-robin over classes.
fn take_frames(utts: &[UtteranceFeatures], n: usize) -> Vec<UtteranceFeatures> {
    let mut keep = vec![0usize; utts.len()];
    let mut left = n;
    while left > 0 {
        for (i, u) in utts.iter().enumerate() {
            if left > 0 && keep[i] < u.num_frames() {
                keep[i] += 1;
                left -= 1;
            }
        }
    }
    utts.iter()
        .zip(keep)
        .filter(|(_, k)| *k > 0)
        .map(|(u, k)| {
            let values = u.values()[..k * u.frame_len()].to_vec();
            let labels = u.labels().map(|l| l[..k].to_vec());
            UtteranceFeatures::new(u.id(), values, k, u.channels(), u.bins(), labels).unwrap()
        })
        .collect()
}

fn synth(frames_per_class: usize, separation: f64, seed: u64) -> Vec<UtteranceFeatures> {
    make_synthetic_dataset(&SynthConfig {
        num_classes: 10,
        frames_per_class,
        separation,
        utterance_frames: frames_per_class,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Overfits 64 separable frames, then shows nothing is learnable without separation.
fn learning() -> Outcome {
    let started = Instant::now();
    let cfg = TrainConfig { initial_lr: 0.01, batch_size: 16, seed: 3, ..TrainConfig::default() };
    let train = FrameSet::new(take_frames(&synth(7, 5.0, 11), 64), 5, 5).map_err(|e| e.to_string())?;
    ensure!(train.len() == 64, "{} frames", train.len());
    let mut model: Model<f32> = Model::build(&depth13(), 3).map_err(|e| e.to_string())?;
    let mut opt = Sgd::new(model.params());
    let mut reached = None;
    for epoch in 1..=200 {
        train_epoch(&mut model, &mut opt, &train, &cfg, 0.01, epoch).map_err(|e| e.to_string())?;
        let acc = evaluate(&model, &train, 64).map_err(|e| e.to_string())?.accuracy;
        if acc >= 0.99 {
            reached = Some((epoch, acc));
            break;
        }
    }
    let (epoch, acc) = reached.ok_or("training accuracy stayed below 0.99 for 200 epochs")?;

    let noise_train = FrameSet::new(synth(40, 0.0, 21), 5, 5).map_err(|e| e.to_string())?;
    let noise_test = FrameSet::new(synth(100, 0.0, 22), 5, 5).map_err(|e| e.to_string())?;
    let mut model: Model<f32> = Model::build(&depth13(), 4).map_err(|e| e.to_string())?;
    let mut opt = Sgd::new(model.params());
    for epoch in 1..=5 {
        train_epoch(&mut model, &mut opt, &noise_train, &cfg, 0.01, epoch).map_err(|e| e.to_string())?;
    }
    let chance = evaluate(&model, &noise_test, 256).map_err(|e| e.to_string())?.accuracy;
    ensure!((0.05..=0.20).contains(&chance), "separation 0 held-out accuracy {chance}");
    let timing = within(Duration::from_secs(300), started)?;
    Ok(format!("accuracy {acc:.3} at epoch {epoch}; separation 0 gives {chance:.3}; {timing}"))
}

fn feature_properties() -> Outcome {
    let constant = vec![2.5f32; 7 * 4];
    ensure!(delta(&constant, 7, 4).iter().all(|&d| d == 0.0), "delta of a constant is not exactly 0");

    let fb = FilterbankConfig::default();
    let wave: Vec<f32> = (0..16000).map(|i| 3000.0 * ((i as f32) * 0.37).sin() + (i % 17) as f32).collect();
    let logmel = compute_logmel(&wave, &fb).map_err(|e| e.to_string())?;
    let frames = logmel.len() / 40;
    ensure!(frames == 98 && logmel.len() % 40 == 0, "1 s gave {frames} frames");

    let stat = UtteranceFeatures::from_static("one-second", logmel, 40).map_err(|e| e.to_string())?;
    let full = append_deltas(&stat).map_err(|e| e.to_string())?;
    let spliced = splice_context(&full, 5, 5).map_err(|e| e.to_string())?;
    ensure!(spliced.shape() == [98, 3, 11, 40], "spliced shape {:?}", spliced.shape());

    let mut corpus = vec![full];
    for s in 1..4u32 {
        let w: Vec<f32> = (0..8000 + 800 * s as usize).map(|i| 2000.0 * ((i as f32) * 0.05 * s as f32).cos()).collect();
        let f = UtteranceFeatures::from_static(format!("u{s}"), compute_logmel(&w, &fb).map_err(|e| e.to_string())?, 40)
            .map_err(|e| e.to_string())?;
        corpus.push(append_deltas(&f).map_err(|e| e.to_string())?);
    }
    let stats = compute_cmvn_stats(&corpus).map_err(|e| e.to_string())?;
    let normed: Vec<UtteranceFeatures> =
        corpus.iter().map(|u| apply_cmvn(u, &stats)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let dim = stats.dim();
    let mut sums = vec![0.0f64; dim];
    let mut count = 0usize;
    for u in &normed {
        for t in 0..u.num_frames() {
            u.frame(t).iter().zip(&mut sums).for_each(|(&v, s)| *s += v as f64);
            count += 1;
        }
    }
    let worst_mean = sums.iter().map(|s| (s / count as f64).abs()).fold(0.0, f64::max);
    ensure!(worst_mean < 1e-5, "post-normalization mean {worst_mean:e}");

    let labeled = normed[0].clone().with_labels((0..98).map(|t| t % 10).collect()).map_err(|e| e.to_string())?;
    let utts = vec![labeled, normed[1].clone()];
    let bytes = encode_archive(&[("k".into(), "v".into())], &utts);
    let back = decode_archive(&bytes).map_err(|e| e.to_string())?;
    for (a, b) in utts.iter().zip(&back.utterances) {
        let bits = |u: &UtteranceFeatures| u.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(bits(a) == bits(b) && a.labels() == b.labels() && a.id() == b.id(), "archive round trip changed `{}`", a.id());
    }
    ensure!(encode_archive(&back.header, &back.utterances) == bytes, "re-encoding differs");
    Ok(format!("98 frames, spliced {:?}, max |mean| {worst_mean:.1e}", spliced.shape()))
}

/// Two deterministic training runs write identical checkpoints and logs.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut cfg = RunConfig::parse(
        "variant=c\ndepth=13\nblocks=3\nnum_classes=10\nsynth_classes=10\nsynth_frames_per_class=12\n\
         synth_utterance_frames=6\nbatch_size=16\nmax_epochs=3\nseed=9\ndeterministic=true\n",
    )
    .map_err(|e| e.to_string())?;
    cfg.paths.archive = Some(d.join("synth.fbk"));
    commands::synthdata(&cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        cfg.paths.checkpoint = Some(d.join(format!("{run}.damc")));
        cfg.paths.metrics_log = Some(d.join(format!("{run}.tsv")));
        commands::train(&cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let read = |ext: &str| std::fs::read(d.join(format!("{run}.{ext}"))).map_err(|e| e.to_string());
        runs.push((read("damc")?, read("tsv")?));
    }
    ensure!(runs[0].0 == runs[1].0, "checkpoints differ");
    ensure!(runs[0].1 == runs[1].1, "metrics logs differ");
    Ok(format!("checkpoint {} bytes, log {} bytes, identical", runs[0].0.len(), runs[0].1.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("shape table", shape_table),
        ("layer arithmetic", layer_arithmetic),
        ("parameter counts", parameter_counts),
        ("compression floor", compression_floor),
        ("dense connectivity", dense_edges),
        ("gradient check", gradients),
        ("learning", learning),
        ("feature pipeline", feature_properties),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("panicked: {}", msg.unwrap_or_default()))
            });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
