//! Acceptance report. Prints one PASS/FAIL line per criterion and always
//! exits 0 so the rest of the workspace suite still runs; read the lines.
//!
//! Set `CXRNET_ACCEPTANCE_SKIP_TRAINING=1` to skip the long synthetic
//! training comparison (criteria 4 and 5).

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cxrnet::autodiff::Tensor;
use cxrnet::data::{
    conditional_entropy_bounds, order_splits, synth_generate, Dataset, Example, Image, SynthSpec, CHEST_XRAY_LABELS,
};
use cxrnet::decoders::LabelVector;
use cxrnet::encoder::EncoderConfig;
use cxrnet::metrics::{auc, dice, pcss, pess, Metric, MetricsReport, THRESHOLD};
use cxrnet::model::{Model, ModelConfig, ModelKind};
use cxrnet::training::{evaluate, read_checkpoint, train, write_checkpoint, DatasetValidator, StopReason, TrainConfig, Validator};
use cxrnet::verify::{default_cases, run_suite, DEFAULT_SEEDS, TOLERANCE};
use cxrnet::Result;

const EXACT: f64 = 1e-12;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(line: Line) -> bool {
    println!(
        "criterion {}: {}  {}",
        line.id,
        if line.pass { "PASS" } else { "FAIL" },
        line.detail
    );
    line.pass
}

fn errored(id: &'static str, e: impl std::fmt::Display) -> Line {
    Line {
        id,
        pass: false,
        detail: format!("error: {e}"),
    }
}

fn gradients() -> Result<Line> {
    let start = Instant::now();
    let cases = default_cases();
    let suite = run_suite(&cases, DEFAULT_SEEDS)?;
    let elapsed = start.elapsed();
    print!("{}", suite.table());
    let worst = suite.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(Line {
        id: "1",
        pass: suite.passed() && elapsed < Duration::from_secs(300),
        detail: format!(
            "{} cases x {DEFAULT_SEEDS} seeds, worst rel err {worst:.2e} (< {TOLERANCE:e}), {:.0}s (< 300s)",
            suite.rows.len(),
            elapsed.as_secs_f64()
        ),
    })
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

/// Mean of sensitivity and specificity over paired predictions, with an
/// empty rate counted as 1.
fn naive_balanced(pairs: &[(bool, bool)]) -> f64 {
    let (mut tp, mut fn_, mut tn, mut fp) = (0.0, 0.0, 0.0, 0.0);
    for &(p, y) in pairs {
        match (p, y) {
            (true, true) => tp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
        }
    }
    let sens = if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) };
    let spec = if tn + fp == 0.0 { 1.0 } else { tn / (tn + fp) };
    (sens + spec) / 2.0
}

fn random_instance(rng: &mut ChaCha8Rng, binary: bool) -> (Tensor, Vec<LabelVector>) {
    let n = rng.random_range(1..30);
    let t = rng.random_range(1..8);
    // coarse levels force ties and values exactly at the threshold
    let data = (0..n * t)
        .map(|_| {
            if binary {
                f64::from(rng.random_bool(0.5))
            } else {
                f64::from(rng.random_range(0..9u8)) / 8.0
            }
        })
        .collect();
    let labels = (0..n)
        .map(|_| LabelVector::from_bools((0..t).map(|_| rng.random_bool(0.4))))
        .collect();
    (Tensor::new(vec![n, t], data).unwrap(), labels)
}

fn metric_oracles() -> Result<Line> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut auc_err, mut pess_err, mut pcss_err, mut dice_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..12u8))).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        auc_err = auc_err.max((auc(&scores, &labels)? - brute_auc(&scores, &labels)).abs());
    }
    for _ in 0..1000 {
        let (m, labels) = random_instance(&mut rng, false);
        let (n, t) = (labels.len(), m.shape()[1]);
        let pe: f64 = (0..n)
            .map(|i| naive_balanced(&(0..t).map(|k| (m.at2(i, k) > THRESHOLD, labels[i].get(k))).collect::<Vec<_>>()))
            .sum::<f64>()
            / n as f64;
        let pc: f64 = (0..t)
            .map(|k| naive_balanced(&(0..n).map(|i| (m.at2(i, k) > THRESHOLD, labels[i].get(k))).collect::<Vec<_>>()))
            .sum::<f64>()
            / t as f64;
        pess_err = pess_err.max((pess(&m, &labels, THRESHOLD)? - pe).abs());
        pcss_err = pcss_err.max((pcss(&m, &labels, THRESHOLD)? - pc).abs());
    }
    for _ in 0..1000 {
        let (m, labels) = random_instance(&mut rng, true);
        let (n, t) = (labels.len(), m.shape()[1]);
        let oracle: f64 = (0..n)
            .map(|i| {
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for k in 0..t {
                    match (m.at2(i, k) == 1.0, labels[i].get(k)) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        (false, false) => {}
                    }
                }
                if tp + fp + fn_ == 0.0 {
                    1.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fn_)
                }
            })
            .sum::<f64>()
            / n as f64;
        dice_err = dice_err.max((dice(&m, &labels)? - oracle).abs());
    }
    let elapsed = start.elapsed();
    let worst = auc_err.max(pess_err).max(pcss_err).max(dice_err);
    Ok(Line {
        id: "2",
        pass: worst <= EXACT && elapsed < Duration::from_secs(60),
        detail: format!(
            "max |diff| auc {auc_err:.1e}, pess {pess_err:.1e}, pcss {pcss_err:.1e}, dice {dice_err:.1e} over 1000 instances each (<= 1e-12), {:.1}s",
            elapsed.as_secs_f64()
        ),
    })
}

fn uniform_baseline() -> Result<Line> {
    let names: Vec<String> = CHEST_XRAY_LABELS.iter().map(|s| s.to_string()).collect();
    let t = names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = Dataset::new(names.clone(), "schema", 64);
    for i in 0..12 {
        let pixels = (0..64 * 64).map(|_| rng.random::<f32>()).collect();
        data.push(Example {
            id: format!("x{i}"),
            image: Image::new(64, pixels)?,
            labels: LabelVector::from_bools((0..t).map(|_| rng.random_bool(0.2))),
        })?;
    }
    let expected = t as f64 * LN_2;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for kind in [ModelKind::Independent, ModelKind::ChainFrequency, ModelKind::ChainAlphabetical] {
        let model = Model::zero_head(ModelConfig::desk(kind, t), names.clone(), 0)?;
        let r = evaluate(&model, &data)?;
        worst = worst.max((r.nll - expected).abs());
        parts.push(format!("{kind} {:.6}", r.nll));
    }
    Ok(Line {
        id: "3",
        pass: worst <= 1e-6,
        detail: format!("T=14 expected {expected:.4}; {} (|diff| {worst:.1e} <= 1e-6)", parts.join(", ")),
    })
}

/// Test-set reports of one trained run: the NLL of the snapshot selected by
/// validation NLL, and each thresholded metric from its own selected snapshot.
struct RunResult {
    nll: f64,
    dice: f64,
    pess: f64,
    pcss: f64,
    updates: usize,
}

struct Comparison {
    a: RunResult,
    b1: Vec<RunResult>,
    b2: Vec<RunResult>,
    joint: f64,
    marginal: f64,
    elapsed: Duration,
}

const SEEDS: u64 = 3;

fn acceptance_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_updates: 3000,
        eval_every_updates: 250,
        seed,
        augment: None,
        ..TrainConfig::default()
    }
}

fn run(kind: ModelKind, seed: u64, splits: [&Dataset; 3]) -> Result<RunResult> {
    let [train_set, val, test] = order_splits(splits, kind.ordering())?;
    let model = Model::build(ModelConfig::desk(kind, train_set.num_labels()), train_set.label_names.clone(), seed)?;
    let start = Instant::now();
    let out = train(model, &train_set, &mut DatasetValidator(&val), &acceptance_train_config(seed))?;
    let test_report = |m: Metric| -> Result<MetricsReport> { evaluate(out.selected(m), &test) };
    let result = RunResult {
        nll: test_report(Metric::Nll)?.nll,
        dice: test_report(Metric::Dice)?.dice,
        pess: test_report(Metric::Pess)?.pess,
        pcss: test_report(Metric::Pcss)?.pcss,
        updates: out.checkpoint.updates,
    };
    println!(
        "  {kind} seed {seed}: test nll {:.4} dice {:.4} pess {:.4} pcss {:.4} ({} updates, {:.0}s)",
        result.nll,
        result.dice,
        result.pess,
        result.pcss,
        result.updates,
        start.elapsed().as_secs_f64()
    );
    Ok(result)
}

fn comparison() -> Result<Comparison> {
    let start = Instant::now();
    let spec = SynthSpec::default_five();
    let bounds = conditional_entropy_bounds(&spec)?;
    let all = synth_generate(&spec, 2750, 0)?.dataset;
    let idx: Vec<usize> = (0..2750).collect();
    let (tr, va, te) = (all.subset(&idx[..2000]), all.subset(&idx[2000..2250]), all.subset(&idx[2250..]));
    let splits = [&tr, &va, &te];
    let a = run(ModelKind::Independent, 0, splits)?;
    let mut b1 = Vec::new();
    let mut b2 = Vec::new();
    for seed in 0..SEEDS {
        b1.push(run(ModelKind::ChainFrequency, seed, splits)?);
        b2.push(run(ModelKind::ChainAlphabetical, seed, splits)?);
    }
    Ok(Comparison {
        a,
        b1,
        b2,
        joint: bounds.joint,
        marginal: bounds.marginal,
        elapsed: start.elapsed(),
    })
}

fn dependency_advantage(c: &Comparison) -> Line {
    let (a, b) = (&c.a, &c.b1[0]);
    let checks = [
        ("nll gap >= 0.05", a.nll - b.nll >= 0.05),
        ("dice higher", b.dice > a.dice),
        ("pess higher", b.pess > a.pess),
        ("pcss higher", b.pcss > a.pcss),
        ("b within 0.15 of joint bound", b.nll - c.joint <= 0.15),
        ("a above marginal bound", a.nll > c.marginal),
        ("runtime < 45 min", c.elapsed < Duration::from_secs(45 * 60)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Line {
        id: "4",
        pass: failed.is_empty(),
        detail: format!(
            "nll a {:.4} b {:.4} (gap {:.4}); dice a {:.4} b {:.4}; pess a {:.4} b {:.4}; pcss a {:.4} b {:.4}; bounds joint {:.4} marginal {:.4}; {:.0}s{}",
            a.nll,
            b.nll,
            a.nll - b.nll,
            a.dice,
            b.dice,
            a.pess,
            b.pess,
            a.pcss,
            b.pcss,
            c.joint,
            c.marginal,
            c.elapsed.as_secs_f64(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    }
}

fn ordering_marginality(c: &Comparison) -> Line {
    let gaps: Vec<f64> = c.b1.iter().zip(&c.b2).map(|(x, y)| (x.nll - y.nll).abs()).collect();
    Line {
        id: "5",
        pass: gaps.iter().all(|g| *g <= 0.05),
        detail: format!(
            "|nll b1 - b2| per seed {} (<= 0.05)",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn parity() -> Result<Line> {
    let a = ModelConfig::full_scale(ModelKind::Independent, 14).param_count();
    let b = ModelConfig::full_scale(ModelKind::ChainFrequency, 14).param_count();
    let rel = a.abs_diff(b) as f64 / a.max(b) as f64;
    Ok(Line {
        id: "6",
        pass: rel <= 0.05,
        detail: format!("model_a {a} vs model_b {b} parameters, relative difference {:.2}% (<= 5%)", rel * 100.0),
    })
}

fn tiny_config(kind: ModelKind, side: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig {
            input_resolution: side,
            growth_rate: 2,
            num_dense_blocks: blocks,
            convblocks_per_dense_block: 2,
            initial_channels: 4,
            transition_compression: 1.0,
        },
        lstm_hidden: 4,
        num_labels: 5,
    }
}

fn determinism() -> Result<Line> {
    let mut spec = SynthSpec::default_five();
    spec.resolution = 16;
    let data = synth_generate(&spec, 60, 7)?.dataset;
    let val = synth_generate(&spec, 20, 8)?.dataset;
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [ModelKind::Independent, ModelKind::ChainFrequency] {
        let config = TrainConfig {
            batch_size: 8,
            max_updates: 40,
            eval_every_updates: 20,
            seed: 5,
            augment: Some(cxrnet::data::AugmentParams::for_resolution(16)),
            ..TrainConfig::default()
        };
        let go = || -> Result<_> {
            let model = Model::build(tiny_config(kind, 16, 2), data.label_names.clone(), 5)?;
            train(model, &data, &mut DatasetValidator(&val), &config)
        };
        let (x, y) = (go()?, go()?);
        let same_trace = x.loss_trace.iter().map(|v| v.to_bits()).eq(y.loss_trace.iter().map(|v| v.to_bits()));
        let bytes = write_checkpoint(&x.checkpoint)?;
        let loaded = read_checkpoint(&bytes)?;
        let before = evaluate(&x.checkpoint.model, &val)?;
        let after = evaluate(&loaded.model, &val)?;
        let same_eval = before == after && before.to_csv()? == after.to_csv()?;
        ok &= same_trace && same_eval;
        parts.push(format!("{kind}: loss trace identical {same_trace}, reload evaluate identical {same_eval}"));
    }
    Ok(Line {
        id: "7",
        pass: ok,
        detail: parts.join("; "),
    })
}

struct Frozen;

impl Validator for Frozen {
    fn validate(&mut self, _model: &Model, _update: usize) -> Result<MetricsReport> {
        Ok(MetricsReport {
            nll: 3.0,
            auc: None,
            dice: 0.5,
            pess: 0.5,
            pcss: 0.5,
            threshold: THRESHOLD,
            n: 1,
        })
    }
}

fn schedule() -> Result<Line> {
    let mut spec = SynthSpec::default_five();
    spec.resolution = 4;
    let data = synth_generate(&spec, 8, 0)?.dataset;
    let model = Model::build(tiny_config(ModelKind::Independent, 4, 1), data.label_names.clone(), 0)?;
    let config = TrainConfig {
        batch_size: 4,
        max_updates: 100_000,
        ..TrainConfig::default()
    };
    let out = train(model, &data, &mut Frozen, &config)?;
    let period = config.eval_every_updates;
    let lr_exact = out
        .checkpoint
        .history
        .iter()
        .enumerate()
        .all(|(k, r)| r.lr == 0.001 * 0.9f64.powi(k as i32));
    // the first evaluation always improves, so decay starts one period later
    let trace_exact = out
        .lr_trace
        .iter()
        .enumerate()
        .all(|(u, &lr)| lr == 0.001 * 0.9f64.powi((u / period).saturating_sub(1) as i32));
    let stopped = out.stop == StopReason::EarlyStop;
    let first_eval = period;
    let unimproved = out.checkpoint.updates - first_eval;
    let in_window = (10_000..10_000 + period).contains(&unimproved);
    Ok(Line {
        id: "8",
        pass: lr_exact && trace_exact && stopped && in_window,
        detail: format!(
            "lr = 0.001*0.9^k at every evaluation {lr_exact}, per-update trace {trace_exact}; stopped early {stopped} at update {} ({unimproved} updates after the last improvement)",
            out.checkpoint.updates
        ),
    })
}

fn main() {
    let mut passed = 0;
    let mut total = 0;
    let mut record = |line: Line| {
        total += 1;
        if report(line) {
            passed += 1;
        }
    };
    record(gradients().unwrap_or_else(|e| errored("1", e)));
    record(metric_oracles().unwrap_or_else(|e| errored("2", e)));
    record(uniform_baseline().unwrap_or_else(|e| errored("3", e)));
    if std::env::var_os("CXRNET_ACCEPTANCE_SKIP_TRAINING").is_some() {
        println!("criterion 4: SKIPPED");
        println!("criterion 5: SKIPPED");
    } else {
        match comparison() {
            Ok(c) => {
                record(dependency_advantage(&c));
                record(ordering_marginality(&c));
            }
            Err(e) => {
                record(errored("4", &e));
                record(errored("5", &e));
            }
        }
    }
    record(parity().unwrap_or_else(|e| errored("6", e)));
    record(determinism().unwrap_or_else(|e| errored("7", e)));
    record(schedule().unwrap_or_else(|e| errored("8", e)));
    println!("acceptance: {passed}/{total} criteria pass");
}
