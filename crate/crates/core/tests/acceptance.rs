//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach stdout. The
//! process fails if any criterion fails that is not listed in
//! `KNOWN_UNATTAINABLE`.

mod common;

use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use xrf::attnviz::{extract_attention, upsample};
use xrf::data::{label_matrix, synthesize_dataset, LabeledSample};
use xrf::metrics::{evaluate, roc_curve, write_eval_csv, EvalReport};
use xrf::models::{load_checkpoint, save_checkpoint, trace_shapes, Family, ModelSpec};
use xrf::rng::{self, substream};
use xrf::train::{evaluate_samples, fit, Mode, Optimizer, PlateauConfig, PlateauScheduler, TrainConfig};
use xrf::{Graph, Result, Tensor};

/// Criteria that cannot hold in `f64` arithmetic as stated. They still run
/// and print FAIL with the measured numbers.
const KNOWN_UNATTAINABLE: &[&str] = &["loss equivalence"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("shape suite", shape_suite),
        ("auc oracle", auc_oracle),
        ("loss equivalence", loss_equivalence),
        ("scheduler contract", scheduler_contract),
        ("attention-map invariants", attention_invariants),
        ("checkpoint round-trip", checkpoint_round_trip),
        ("determinism", determinism),
        ("overfit sanity", overfit_sanity),
        ("learnability", learnability),
    ];
    let mut unexpected = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let result = check().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {name}: {} ({:.1}s)",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass && !KNOWN_UNATTAINABLE.contains(&name) {
            unexpected.push(name);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let cases: Vec<_> = common::op_cases().into_iter().chain(common::layer_cases()).collect();
    let mut worst = (0.0f64, "");
    let mut failing = Vec::new();
    for case in &cases {
        let e = common::run_case(case)?;
        if e > worst.0 {
            worst = (e, case.name);
        }
        if e > common::TOLERANCE {
            failing.push(case.name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failing.is_empty() && secs < 120.0,
        format!(
            "{} ops/layers x {} instances, worst relative error {:.2e} ({}), failing {failing:?}, {secs:.1}s of 120s budget",
            cases.len(),
            common::INSTANCES,
            worst.0,
            worst.1
        ),
    )
}

fn random_images(n: usize, spec: &ModelSpec, seed: u64) -> Tensor {
    let mut r = substream(seed, "acceptance-images");
    Tensor::from_fn(&[n, spec.channels, spec.height, spec.width], |_| r.random::<f64>())
}

fn named(pairs: &[(&str, &[usize])]) -> Vec<(String, Vec<usize>)> {
    pairs.iter().map(|(n, s)| (n.to_string(), s.to_vec())).collect()
}

fn shape_suite() -> Result<Outcome> {
    let mut problems = Vec::new();

    let cnn_expected = named(&[
        ("conv1", &[1, 32, 222, 222]),
        ("pool1", &[1, 32, 111, 111]),
        ("conv2", &[1, 64, 109, 109]),
        ("pool2", &[1, 64, 54, 54]),
        ("flatten", &[1, 186_624]),
        ("dense", &[1, 512]),
        ("output", &[1, 15]),
    ]);
    let cnn = ModelSpec::new(Family::Cnn);
    if trace_shapes(&cnn, 1)? != cnn_expected {
        problems.push("cnn analytic trace".to_string());
    }
    // The full dense layer holds 95M weights; a narrow one exercises every
    // convolutional shape of the real forward pass at full input size.
    let mut narrow = cnn.clone();
    narrow.cnn.dense = 8;
    let mut model = xrf::models::Model::build(&narrow)?;
    let pass = model.forward(random_images(1, &narrow, 0), false, None)?;
    if pass.cx.shape_trace()[..5] != cnn_expected[..5] {
        problems.push(format!("cnn forward {:?}", pass.cx.shape_trace()));
    }
    drop(pass);

    let resnet_expected = named(&[
        ("stem", &[1, 64, 112, 112]),
        ("pool", &[1, 64, 56, 56]),
        ("stage1", &[1, 64, 56, 56]),
        ("stage2", &[1, 128, 28, 28]),
        ("stage3", &[1, 256, 14, 14]),
        ("stage4", &[1, 512, 7, 7]),
        ("gap", &[1, 512]),
        ("output", &[1, 15]),
    ]);
    let resnet = ModelSpec::new(Family::Resnet);
    if trace_shapes(&resnet, 1)? != resnet_expected {
        problems.push("resnet analytic trace".into());
    }
    let mut model = xrf::models::Model::build(&resnet)?;
    let pass = model.forward(random_images(1, &resnet, 1), false, None)?;
    if pass.cx.shape_trace() != resnet_expected {
        problems.push(format!("resnet forward {:?}", pass.cx.shape_trace()));
    }
    drop(pass);

    for (family, tokens) in [
        (Family::VitV1_32, 49),
        (Family::VitV2_32, 49),
        (Family::VitResnet16, 196),
    ] {
        let spec = ModelSpec::new(family);
        let mut model = xrf::models::Model::build(&spec)?;
        let pass = model.forward(random_images(1, &spec, 2), false, None)?;
        let trace = pass.cx.shape_trace();
        let got = trace.iter().find(|(n, _)| n == "tokens").map(|(_, s)| s.clone());
        if got != Some(vec![1, tokens, spec.vit.dim]) || trace != trace_shapes(&spec, 1)? {
            problems.push(format!("{family} tokens {got:?}"));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "cnn 222/111/109/54 -> 186624 -> 512 -> 15, resnet 112/56/56/28/14/7 with 7x7x512, vit/32 49 tokens, hybrid/16 196 tokens".to_string()
        } else {
            format!("mismatches: {problems:?}")
        },
    )
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Result<Outcome> {
    let mut r = substream(0, "acceptance-auc");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=200);
        // Coarse scores force ties.
        let levels = r.random_range(2..=20) as f64;
        let scores: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * levels).floor() / levels).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let auc = roc_curve(&scores, &labels, 0)?.auc;
        worst = worst.max((auc - pairwise_auc(&scores, &labels)).abs());
    }
    let example = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true], 0)?.auc;
    outcome(
        worst <= 1e-9 && example == 0.75,
        format!("1000 instances, max |trapezoid - pairwise| = {worst:.1e}; worked example = {example}"),
    )
}

fn scalar_loss(z: f64, y: f64, logits: bool) -> Result<f64> {
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(vec![1, 1], vec![z])?);
    let target = Tensor::new(vec![1, 1], vec![y])?;
    let loss = if logits {
        g.bce_with_logits(zv, &target)?
    } else {
        let p = g.sigmoid(zv);
        g.bce(p, &target)?
    };
    Ok(g.value(loss).data()[0])
}

fn loss_equivalence() -> Result<Outcome> {
    // Largest deviation per |z| band, over both labels.
    let mut worst = 0.0f64;
    let mut holds_up_to = 30.0f64;
    for i in 0..=6000 {
        let z = -30.0 + i as f64 * 0.01;
        for y in [0.0, 1.0] {
            let d = (scalar_loss(z, y, true)? - scalar_loss(z, y, false)?).abs();
            worst = worst.max(d);
            if d > 1e-9 {
                holds_up_to = holds_up_to.min(z.abs() - 0.01);
            }
        }
    }
    let mut r = substream(0, "acceptance-loss");
    let mut worst_random = 0.0f64;
    for _ in 0..1000 {
        let z = r.random_range(-10.0..10.0);
        let y = f64::from(r.random::<bool>());
        worst_random = worst_random.max((scalar_loss(z, y, true)? - scalar_loss(z, y, false)?).abs());
    }
    let stable = [(100.0, 1.0), (-100.0, 0.0)]
        .into_iter()
        .map(|(z, y)| scalar_loss(z, y, true))
        .collect::<Result<Vec<_>>>()?;
    let stable_ok = stable.iter().all(|v| v.is_finite() && *v < 1e-40)
        && scalar_loss(100.0, 0.0, true)?.is_finite()
        && scalar_loss(-100.0, 1.0, true)?.is_finite();
    outcome(
        worst <= 1e-9 && worst_random <= 1e-9 && stable_ok,
        format!(
            "|z|<=30 grid max diff {worst:.2e} (within 1e-9 only for |z| <= {holds_up_to:.2}; beyond that the \
             probability form loses 1-p to rounding and to the 1e-12 clamp); random z in [-10,10] max diff \
             {worst_random:.2e}; z=+-100 losses {stable:?}"
        ),
    )
}

fn scheduler_contract() -> Result<Outcome> {
    let lr0 = 1e-3;
    let mut s = PlateauScheduler::new(PlateauConfig::new(Mode::Min), lr0)?;
    let stagnant: Vec<f64> = (0..8).map(|_| s.step(1.0)).collect::<Result<_>>()?;
    let expected = [lr0, lr0, lr0 / 2.0, lr0 / 2.0, lr0 / 4.0, lr0 / 4.0, lr0 / 8.0, lr0 / 8.0];
    let exact = stagnant == expected;

    let mut r = substream(0, "acceptance-scheduler");
    let mut monotone = true;
    for trial in 0..500 {
        let mode = if trial % 2 == 0 { Mode::Min } else { Mode::Max };
        let mut cfg = PlateauConfig::new(mode);
        cfg.patience = r.random_range(1..=4);
        cfg.min_lr = 1e-5;
        let mut s = PlateauScheduler::new(cfg, lr0)?;
        let mut prev = lr0;
        for _ in 0..60 {
            let lr = s.step(r.random_range(-1.0..1.0))?;
            monotone &= lr <= prev && lr >= 1e-5;
            prev = lr;
        }
    }
    outcome(
        exact && monotone,
        format!("stagnant trace lrs {stagnant:?}; 500 random traces non-increasing and >= min_lr: {monotone}"),
    )
}

fn attention_invariants() -> Result<Outcome> {
    let mut sums = Vec::new();
    for family in [Family::VitV1_32, Family::VitV2_32, Family::VitResnet16] {
        let spec = ModelSpec::new(family);
        let mut model = xrf::models::Model::build(&spec)?;
        let image = random_images(1, &spec, 3).reshape(vec![3, spec.height, spec.width])?;
        let map = extract_attention(&mut model, &image)?;
        sums.push((map.grid.data().iter().sum::<f64>() - 1.0).abs());
    }
    let sum_ok = sums.iter().all(|d| *d <= 1e-9);

    let mut uniform_dev = 0.0f64;
    for family in [Family::VitV1_32, Family::VitV2_32] {
        let spec = ModelSpec::new(family);
        let mut model = xrf::models::Model::build(&spec)?;
        let last = spec.vit.depth - 1;
        for proj in ["wq", "wk"] {
            let id = model
                .params
                .find(&format!("encoder.block{last}.attention.{proj}"))
                .expect("attention projection exists");
            let shape = model.params.get(id).value.shape().to_vec();
            model.params.get_mut(id).value = Tensor::zeros(&shape);
        }
        let image = random_images(1, &spec, 4).reshape(vec![3, 224, 224])?;
        let map = extract_attention(&mut model, &image)?;
        for v in map.grid.data() {
            uniform_dev = uniform_dev.max((v - 1.0 / 49.0).abs());
        }
    }

    let mut argmax_ok = true;
    for cell in 0..49 {
        let mut grid = vec![0.0; 49];
        grid[cell] = 1.0;
        let up = upsample(&Tensor::new(vec![7, 7], grid)?, 224, 224)?;
        let (best, _) = up
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        argmax_ok &= (best / 224) / 32 == cell / 7 && (best % 224) / 32 == cell % 7;
    }
    outcome(
        sum_ok && uniform_dev <= 1e-12 && argmax_ok,
        format!(
            "salience sum deviations {:?}; uniform attention max |cell - 1/49| {uniform_dev:.1e}; one-hot argmax kept in all 49 cells: {argmax_ok}",
            sums.iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn quick_config(family: Family, epochs: usize) -> TrainConfig {
    let mut spec = ModelSpec::desk(family, 64);
    spec.seed = 7;
    let mut cfg = TrainConfig::new(spec);
    cfg.epochs = epochs;
    cfg
}

fn eval_report(model: &mut xrf::models::Model, samples: &[LabeledSample]) -> Result<(Vec<Vec<f64>>, EvalReport)> {
    let eval = evaluate_samples(model, samples, 32)?;
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.labels.clone()).collect();
    let report = evaluate(&eval.probs, &targets)?;
    Ok((eval.probs, report))
}

fn checkpoint_round_trip() -> Result<Outcome> {
    let data = synthesize_dataset(300, 11)?;
    let (train, rest) = data.split_at(200);
    let (val, test) = rest.split_at(50);
    let dir = tempfile::tempdir().map_err(|e| xrf::Error::io(Path::new("tempdir"), e))?;
    let mut all_equal = true;
    for family in Family::ALL {
        let cfg = quick_config(family, 1);
        let mut model = xrf::models::Model::build(&cfg.spec)?;
        fit(&mut model, train, val, &cfg, None)?;
        let (probs, report) = eval_report(&mut model, test)?;
        let path = dir.path().join(format!("{family}.ckpt"));
        save_checkpoint(&model, &path)?;
        let mut loaded = load_checkpoint(&path)?;
        let (probs2, report2) = eval_report(&mut loaded, test)?;
        let same_bits = probs.iter().flatten().zip(probs2.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        all_equal &= same_bits && report == report2;
    }
    outcome(
        all_equal,
        format!("all five families: trained, saved, loaded; test probabilities and metrics bit-identical: {all_equal}"),
    )
}

fn run_once(dir: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let data = synthesize_dataset(240, 5)?;
    let (train, rest) = data.split_at(160);
    let (val, test) = rest.split_at(40);
    let mut cfg = quick_config(Family::VitV1_32, 3);
    cfg.workers = 1;
    let mut model = xrf::models::Model::build(&cfg.spec)?;
    let report = fit(&mut model, train, val, &cfg, Some(dir))?;
    let (_, eval) = eval_report(&mut model, test)?;
    let report_path = dir.join("report.csv");
    std::fs::write(&report_path, report.to_csv(false)).map_err(|e| xrf::Error::io(&report_path, e))?;
    let eval_path = dir.join("eval.csv");
    write_eval_csv(&eval_path, &eval)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| xrf::Error::io(p, e));
    Ok((read(&report_path)?, read(&eval_path)?))
}

fn determinism() -> Result<Outcome> {
    let a = tempfile::tempdir().map_err(|e| xrf::Error::io(Path::new("tempdir"), e))?;
    let b = tempfile::tempdir().map_err(|e| xrf::Error::io(Path::new("tempdir"), e))?;
    let first = run_once(a.path())?;
    let second = run_once(b.path())?;
    outcome(
        first == second,
        format!(
            "two single-worker vit_v1_32 runs: report.csv identical {}, eval.csv identical {}",
            first.0 == second.0,
            first.1 == second.1
        ),
    )
}

/// Full-batch steps on 32 samples until the eval-mode training loss drops
/// below 0.05; returns the step count and final loss.
fn overfit(family: Family) -> Result<(Option<usize>, f64)> {
    let samples = synthesize_dataset(32, 21)?;
    let cfg = TrainConfig::new(ModelSpec::desk(family, 64));
    let mut model = xrf::models::Model::build(&cfg.spec)?;
    let mut optimizer = Optimizer::new(cfg.optimizer.clone())?;
    let x = Tensor::stack(&samples.iter().map(|s| &s.pixels).collect::<Vec<_>>())?;
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    let y = label_matrix(&refs)?;
    let mut loss = f64::INFINITY;
    for step in 1..=500 {
        let mut drop_rng = rng::indexed(0, rng::DROPOUT, step as u64);
        let mut pass = model.forward(x.clone(), true, Some(&mut drop_rng))?;
        let l = pass.loss(&y)?;
        pass.cx.backward(l)?;
        drop(pass);
        optimizer.step(&mut model.params)?;
        model.params.zero_grad();
        if step % 10 == 0 {
            loss = evaluate_samples(&mut model, &samples, 32)?.loss;
            if loss < 0.05 {
                return Ok((Some(step), loss));
            }
        }
    }
    Ok((None, loss))
}

fn overfit_sanity() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in Family::ALL {
        let start = Instant::now();
        let (steps, loss) = overfit(family)?;
        let secs = start.elapsed().as_secs_f64();
        ok &= steps.is_some() && secs < 300.0;
        parts.push(match steps {
            Some(s) => format!("{family} {loss:.4} at step {s} ({secs:.0}s)"),
            None => format!("{family} {loss:.4} after 500 steps ({secs:.0}s)"),
        });
    }
    outcome(ok, format!("train BCE < 0.05: {}", parts.join(", ")))
}

fn learnability() -> Result<Outcome> {
    let data = synthesize_dataset(2750, 0)?;
    let (train, rest) = data.split_at(2000);
    let (val, test) = rest.split_at(250);
    let mut ok = true;
    let mut parts = Vec::new();
    for family in Family::ALL {
        let mut cfg = TrainConfig::new(ModelSpec::desk(family, 64));
        cfg.epochs = 10;
        let mut model = xrf::models::Model::build(&cfg.spec)?;
        fit(&mut model, train, val, &cfg, None)?;
        let (_, report) = eval_report(&mut model, test)?;
        let auc = report.macro_auc.unwrap_or(f64::NAN);
        ok &= auc >= 0.90;
        parts.push(format!("{family} {auc:.4}"));
    }
    outcome(
        ok,
        format!("test macro AUC after 10 epochs on 2000 train / 500 test (>= 0.90): {}", parts.join(", ")),
    )
}
