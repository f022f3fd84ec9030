//! Finite-difference gradient suite: every tape op once, plus both model
//! families end to end.

use rand::Rng as _;

use crate::autodiff::{grad_check_resampled, relative_error, GradCheck, Mode, PoolKind, RunningStats, Tape, Tensor, Var};
use crate::decoders::LabelVector;
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::metrics::{weighted_bce, Weighting};
use crate::model::{Model, ModelBound, ModelConfig, ModelKind};
use crate::params::Bound;
use crate::rng::{substream, Rng};

pub const TOLERANCE: f64 = 1e-4;
/// Large enough that roundoff in the loss stays well below the tolerance
/// even for gradient components near 1e-7; the fourth-order stencil keeps
/// truncation error negligible at this size.
pub const STEP: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;
const MAX_ATTEMPTS: u32 = 50;

/// One entry of the suite.
pub trait GradCase {
    fn name(&self) -> &str;
    fn check(&self, seed: u64) -> Result<GradCheck>;
}

type Sampler = fn(&mut Rng, u64) -> Vec<Tensor>;
type Forward = fn(&mut Tape, &[Var], u64) -> Result<Var>;

struct OpCase {
    name: &'static str,
    sample: Sampler,
    forward: Forward,
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

/// Contract an op output with fixed random weights so every coordinate of
/// the upstream gradient differs.
fn readout(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = substream(seed, "test");
    let w = normal(&mut rng, tape.shape(out));
    let w = tape.constant(w)?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

impl GradCase for OpCase {
    fn name(&self) -> &str {
        self.name
    }

    fn check(&self, seed: u64) -> Result<GradCheck> {
        grad_check_resampled(
            |attempt| {
                let mut rng = substream(seed.wrapping_mul(1000).wrapping_add(u64::from(attempt)), "test");
                (self.sample)(&mut rng, seed)
            },
            |tape, vars| {
                let out = (self.forward)(tape, vars, seed)?;
                readout(tape, out, seed)
            },
            STEP,
            MAX_ATTEMPTS,
        )
    }
}

fn op_cases() -> Vec<OpCase> {
    fn unary_sample(rng: &mut Rng, _: u64) -> Vec<Tensor> {
        vec![uniform(rng, &[3, 4], -2.0, 2.0)]
    }
    fn binary_sample(rng: &mut Rng, seed: u64) -> Vec<Tensor> {
        // odd seeds broadcast a single-element right operand
        let b = if seed % 2 == 1 { &[1][..] } else { &[3, 4][..] };
        vec![normal(rng, &[3, 4]), normal(rng, b)]
    }
    fn image_sample(rng: &mut Rng, _: u64) -> Vec<Tensor> {
        vec![normal(rng, &[2, 2, 6, 6])]
    }
    vec![
        OpCase {
            name: "conv2d",
            sample: |rng, _| vec![normal(rng, &[2, 2, 5, 5]), normal(rng, &[3, 2, 3, 3]), normal(rng, &[3])],
            forward: |t, v, seed| {
                if seed % 2 == 1 {
                    t.conv2d(v[0], v[1], Some(v[2]), 2, 1)
                } else {
                    t.conv2d(v[0], v[1], None, 1, 0)
                }
            },
        },
        OpCase {
            name: "max_pool",
            sample: image_sample,
            forward: |t, v, seed| {
                if seed % 2 == 1 {
                    t.pool2d_padded(v[0], PoolKind::Max, 3, 2, 1)
                } else {
                    t.pool2d(v[0], PoolKind::Max, 2, 2)
                }
            },
        },
        OpCase {
            name: "avg_pool",
            sample: image_sample,
            forward: |t, v, _| t.pool2d(v[0], PoolKind::Avg, 2, 2),
        },
        OpCase {
            name: "global_avg_pool",
            sample: image_sample,
            forward: |t, v, _| t.global_avg_pool(v[0]),
        },
        OpCase {
            name: "affine",
            sample: |rng, _| vec![normal(rng, &[3, 4]), normal(rng, &[4, 5]), normal(rng, &[5])],
            forward: |t, v, seed| t.affine(v[0], v[1], (seed % 2 == 1).then_some(v[2])),
        },
        OpCase {
            name: "sigmoid",
            sample: unary_sample,
            forward: |t, v, _| t.sigmoid(v[0]),
        },
        OpCase {
            name: "tanh",
            sample: unary_sample,
            forward: |t, v, _| t.tanh(v[0]),
        },
        OpCase {
            name: "relu",
            sample: unary_sample,
            forward: |t, v, _| t.relu(v[0]),
        },
        OpCase {
            name: "log",
            sample: |rng, _| vec![uniform(rng, &[3, 4], 0.2, 3.0)],
            forward: |t, v, _| t.log(v[0]),
        },
        OpCase {
            name: "neg",
            sample: unary_sample,
            forward: |t, v, _| t.neg(v[0]),
        },
        OpCase {
            name: "clamp",
            sample: unary_sample,
            forward: |t, v, _| t.clamp(v[0], -0.5, 0.5),
        },
        OpCase {
            name: "add",
            sample: binary_sample,
            forward: |t, v, _| t.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            sample: binary_sample,
            forward: |t, v, _| t.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            sample: binary_sample,
            forward: |t, v, _| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            sample: unary_sample,
            forward: |t, v, _| t.scale(v[0], -1.7),
        },
        OpCase {
            name: "add_scalar",
            sample: unary_sample,
            forward: |t, v, _| t.add_scalar(v[0], 0.3),
        },
        OpCase {
            name: "concat_channels",
            sample: |rng, _| vec![normal(rng, &[2, 2, 3, 3]), normal(rng, &[2, 3, 3, 3])],
            forward: |t, v, _| t.concat_channels(v[0], v[1]),
        },
        OpCase {
            name: "slice_channels",
            sample: |rng, _| vec![normal(rng, &[2, 5, 3, 3])],
            forward: |t, v, _| t.slice_channels(v[0], 1, 3),
        },
        OpCase {
            name: "batch_norm_train",
            sample: |rng, _| vec![normal(rng, &[3, 2, 3, 3]), uniform(rng, &[2], 0.5, 1.5), normal(rng, &[2])],
            forward: |t, v, _| {
                let running = RunningStats::new(2);
                Ok(t.batch_norm(v[0], v[1], v[2], &running, Mode::Train, 1e-5)?.0)
            },
        },
        OpCase {
            name: "batch_norm_eval",
            sample: |rng, _| vec![normal(rng, &[3, 2, 3, 3]), uniform(rng, &[2], 0.5, 1.5), normal(rng, &[2])],
            forward: |t, v, _| {
                let mut running = RunningStats::new(2);
                running.mean = vec![0.2, -0.1];
                running.var = vec![0.7, 1.3];
                Ok(t.batch_norm(v[0], v[1], v[2], &running, Mode::Eval, 1e-5)?.0)
            },
        },
        OpCase {
            name: "sum",
            sample: unary_sample,
            forward: |t, v, _| t.sum(v[0]),
        },
        OpCase {
            name: "reshape",
            sample: unary_sample,
            forward: |t, v, _| t.reshape(v[0], vec![2, 6]),
        },
    ]
}

/// Whole-model check of the training loss with respect to every parameter.
pub struct ModelCase {
    name: &'static str,
    kind: ModelKind,
}

impl ModelCase {
    /// Tiny configuration used for the end-to-end checks: 16x16 input, three
    /// labels, hidden width 4.
    pub fn config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            encoder: EncoderConfig {
                input_resolution: 16,
                growth_rate: 2,
                num_dense_blocks: 3,
                convblocks_per_dense_block: 2,
                initial_channels: 4,
                transition_compression: 1.0,
            },
            lstm_hidden: 4,
            num_labels: 3,
        }
    }
}

impl GradCase for ModelCase {
    fn name(&self) -> &str {
        self.name
    }

    fn check(&self, seed: u64) -> Result<GradCheck> {
        let config = Self::config(self.kind);
        let names = ["x", "y", "z"].map(String::from).to_vec();
        let template = Model::build(config, names, seed)?;
        let mut rng = substream(seed, "test");
        let labels: Vec<LabelVector> = (0..3)
            .map(|_| LabelVector::from_bools((0..3).map(|_| rng.random_bool(0.5))))
            .collect();
        let [enc, head] = template.param_sets();
        let (split, end) = (enc.len(), enc.len() + head.len());
        let params: Vec<Tensor> = enc.tensors().into_iter().chain(head.tensors()).collect();
        // The image rides along as the last input so a redraw can move the
        // forward pass off relu and max-pool kinks.
        let sample = |attempt: u32| {
            let mut rng = substream(seed.wrapping_mul(1000).wrapping_add(u64::from(attempt)), "test");
            let mut inputs = params.clone();
            inputs.push(normal(&mut rng, &[3, 1, 16, 16]));
            inputs
        };
        let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
            let bound = ModelBound {
                encoder: Bound::from_vars(vars[..split].to_vec()),
                head: Bound::from_vars(vars[split..end].to_vec()),
            };
            let (m, _) = template.forward(tape, &bound, vars[end], &labels, Mode::Train)?;
            weighted_bce(tape, m, &labels, Weighting::Pooled)
        };
        grad_check_resampled(sample, f, STEP, MAX_ATTEMPTS)
    }
}

/// Deliberately broken double: reports the negated gradient of `sum(sigmoid(x))`.
/// Used to confirm the suite actually fails on a wrong backward pass.
pub struct SignFlipDouble;

impl GradCase for SignFlipDouble {
    fn name(&self) -> &str {
        "sign_flip_double"
    }

    fn check(&self, seed: u64) -> Result<GradCheck> {
        let x = normal(&mut substream(seed, "test"), &[4]);
        let mut tape = Tape::new();
        let v = tape.param(x.clone())?;
        let s = tape.sigmoid(v)?;
        let s = tape.sum(s)?;
        tape.backward(s)?;
        let analytic = tape.grad(v).expect("param");
        let f = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut max_rel_error: f64 = 0.0;
        for (&xi, &g) in x.data().iter().zip(analytic.data()) {
            let numeric = (f(xi + STEP) - f(xi - STEP)) / (2.0 * STEP);
            max_rel_error = max_rel_error.max(relative_error(-g, numeric));
        }
        Ok(GradCheck {
            max_rel_error,
            worst: None,
            kink_margin: f64::INFINITY,
            kink_crossings: 0,
            coordinates: x.numel(),
        })
    }
}

/// Every op case followed by the two model cases.
pub fn default_cases() -> Vec<Box<dyn GradCase>> {
    let mut cases: Vec<Box<dyn GradCase>> = op_cases().into_iter().map(|c| Box::new(c) as Box<dyn GradCase>).collect();
    cases.push(Box::new(ModelCase {
        name: "model_a",
        kind: ModelKind::Independent,
    }));
    cases.push(Box::new(ModelCase {
        name: "model_b",
        kind: ModelKind::ChainFrequency,
    }));
    cases
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub seeds: u64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CaseResult::passed)
    }

    /// Fixed-width table, one row per case.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>12} {:>6} {:>6}  result\n", "case", "max_rel_err", "seeds", "worst");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:>12.3e} {:>6} {:>6}  {}\n",
                r.name,
                r.max_rel_error,
                r.seeds,
                r.worst_seed,
                if r.passed() { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Run each case over seeds `0..seeds`, keeping the worst error per case.
pub fn run_suite(cases: &[Box<dyn GradCase>], seeds: u64) -> Result<SuiteReport> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let mut row = CaseResult {
            name: case.name().to_string(),
            max_rel_error: 0.0,
            worst_seed: 0,
            seeds,
        };
        for seed in 0..seeds {
            let report = case.check(seed)?;
            // NaN must not hide behind a comparison
            if report.max_rel_error > row.max_rel_error || report.max_rel_error.is_nan() {
                row.max_rel_error = report.max_rel_error;
                row.worst_seed = seed;
            }
            log::debug!("{} seed {seed}: {:.3e}", row.name, report.max_rel_error);
        }
        rows.push(row);
    }
    Ok(SuiteReport { rows })
}
