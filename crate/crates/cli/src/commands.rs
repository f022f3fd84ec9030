use std::path::{Path, PathBuf};

use cxrnet::data::{
    images_to_tensor, load_dataset, load_image, order_splits, split, synth_generate, write_synth_dir, Dataset, SynthSpec,
};
use cxrnet::metrics::MetricsReport;
use cxrnet::model::Model;
use cxrnet::training::{
    evaluate, history_csv, load_checkpoint, save_checkpoint, train, Checkpoint, DatasetValidator, StopReason,
};
use cxrnet::verify::{default_cases, run_suite, GradCase, SignFlipDouble};

use crate::config::{DataConfig, Overrides, RunConfig};
use crate::error::{write_file, CliError, CliResult};

pub const CONFIG_ECHO: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY: &str = "history.csv";
pub const TEST_METRICS: &str = "test_metrics";
pub const METRICS: &str = "metrics";
pub const PREDICTIONS: &str = "predictions.csv";

/// Output directory creation counts as validation: nothing has been computed yet.
fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Invalid(format!("out: cannot create {}: {e}", dir.display())))
}

fn require_file(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{flag}: {} not found", path.display())))
    }
}

fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> CliResult<()> {
    write_file(dir.join(format!("{stem}.csv")), report.to_csv()?)?;
    write_file(dir.join(format!("{stem}.txt")), report.to_kv())
}

/// `[train, val, test]` in schema label order.
fn load_splits(data: &DataConfig, resolution: usize, seed: u64) -> CliResult<[Dataset; 3]> {
    let names = data.label_names()?;
    let all = load_dataset(&data.images_dir(), &data.labels_csv(), resolution, &names)?;
    log::info!("loaded {} examples from {}", all.len(), data.dir.display());
    match (data.train_count, data.val_count) {
        (Some(tr), Some(va)) => {
            if tr + va > all.len() {
                return Err(CliError::Invalid(format!(
                    "data.train_count: {tr} train + {va} validation exceeds {} examples",
                    all.len()
                )));
            }
            let idx: Vec<usize> = (0..all.len()).collect();
            Ok([all.subset(&idx[..tr]), all.subset(&idx[tr..tr + va]), all.subset(&idx[tr + va..])])
        }
        _ => {
            let (a, b, c) = split(&all, seed);
            Ok([a, b, c])
        }
    }
}

pub fn synth(out: &Path, n: usize, resolution: Option<usize>, seed: u64, config: Option<&Path>) -> CliResult<()> {
    let mut spec = match config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("--config: {}: {e}", path.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default_five(),
    };
    if let Some(r) = resolution {
        spec.resolution = r;
    }
    spec.validate()?;
    prepare_out(out)?;
    let data = synth_generate(&spec, n, seed)?;
    write_synth_dir(out, &spec, &data, seed)?;
    log::info!("wrote {n} synthetic examples to {}", out.display());
    Ok(())
}

pub fn train_cmd(config_path: &Path, overrides: &Overrides) -> CliResult<()> {
    let mut config = RunConfig::load(config_path)?;
    config.apply(overrides);
    config.validate(true)?;
    let out = config.out_dir()?.to_path_buf();
    prepare_out(&out)?;
    write_file(out.join(CONFIG_ECHO), config.to_toml()?)?;

    let seed = config.train.seed;
    let kind = config.model.kind;
    let [tr, va, te] = load_splits(&config.data, config.resolution(), seed)?;
    let [tr, va, te] = order_splits([&tr, &va, &te], kind.ordering())?;
    log::info!(
        "model {kind}: {} train, {} validation, {} test; label order {}",
        tr.len(),
        va.len(),
        te.len(),
        tr.label_names.join(", ")
    );
    let model = Model::build(config.model_config(tr.num_labels()), tr.label_names.clone(), seed)?;
    log::info!("{} parameters", model.param_count());
    let outcome = train(model, &tr, &mut DatasetValidator(&va), &config.train)?;

    let checkpoint = &outcome.checkpoint;
    save_checkpoint(checkpoint, &out.join(FINAL_CHECKPOINT))?;
    write_file(out.join(HISTORY), history_csv(checkpoint))?;
    let metric = config.train.selection_metric;
    // optimizer state restarts from zero if training resumes from here
    let best = match outcome.best.get(&metric) {
        Some(s) => {
            let mut c = Checkpoint::new(s.model.clone(), config.train.clone(), checkpoint.ordering_id.clone());
            c.updates = s.update;
            c.history = checkpoint.history.iter().take_while(|r| r.update <= s.update).cloned().collect();
            c
        }
        None => checkpoint.clone(),
    };
    save_checkpoint(&best, &out.join(BEST_CHECKPOINT))?;
    if !te.is_empty() {
        let report = evaluate(outcome.selected(metric), &te)?;
        log::info!("test (selected by {metric}): {}", report.to_kv().trim().replace('\n', " "));
        write_report(&out, TEST_METRICS, &report)?;
    }
    match &outcome.stop {
        StopReason::Diverged { update, message } => {
            Err(CliError::Runtime(format!("training diverged at update {update}: {message}")))
        }
        stop => {
            log::info!("stopped after {} updates ({stop:?})", checkpoint.updates);
            Ok(())
        }
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Option<SplitChoice>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

/// Rearrange `dataset` into the model's label order.
fn align(dataset: &Dataset, checkpoint: &Checkpoint) -> CliResult<Dataset> {
    let wanted = checkpoint.model.labels();
    let perm: Option<Vec<usize>> = wanted.iter().map(|l| dataset.label_names.iter().position(|n| n == l)).collect();
    match perm {
        Some(perm) if perm.len() == dataset.num_labels() => Ok(dataset.reorder(&perm, checkpoint.ordering_id.clone())?),
        _ => Err(CliError::Invalid(format!(
            "label mismatch: checkpoint ({}) expects [{}], dataset has [{}]",
            checkpoint.ordering_id,
            wanted.join(", "),
            dataset.label_names.join(", ")
        ))),
    }
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    require_file("--checkpoint", &args.checkpoint)?;
    let (data, seed, split_choice, kind) = match (&args.config, &args.data) {
        (Some(path), None) => {
            let mut config = RunConfig::load(path)?;
            if let Some(seed) = args.seed {
                config.train.seed = seed;
            }
            config.data.check_paths()?;
            let kind = Some(config.model.kind);
            (config.data, config.train.seed, args.split.unwrap_or(SplitChoice::Test), kind)
        }
        (None, Some(dir)) => {
            let data = DataConfig::from_dir(dir.clone());
            data.check_paths()?;
            (data, args.seed.unwrap_or(0), args.split.unwrap_or(SplitChoice::All), None)
        }
        _ => return Err(CliError::Invalid("give exactly one of --config and --data".into())),
    };
    prepare_out(&args.out)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    if let Some(kind) = kind.filter(|k| *k != checkpoint.model.kind()) {
        return Err(CliError::Invalid(format!(
            "model.kind: config names {kind}, checkpoint holds {}",
            checkpoint.model.kind()
        )));
    }
    if let Some(ordering) = data.ordering {
        if ordering.id() != checkpoint.ordering_id {
            return Err(CliError::Invalid(format!(
                "data.ordering: checkpoint was trained under `{}`, config asks for `{}`",
                checkpoint.ordering_id,
                ordering.id()
            )));
        }
    }
    let resolution = checkpoint.model.config().encoder.input_resolution;
    let dataset = if split_choice == SplitChoice::All {
        let names = data.label_names()?;
        load_dataset(&data.images_dir(), &data.labels_csv(), resolution, &names)?
    } else {
        let [tr, va, te] = load_splits(&data, resolution, seed)?;
        match split_choice {
            SplitChoice::Train => tr,
            SplitChoice::Val => va,
            _ => te,
        }
    };
    let dataset = align(&dataset, &checkpoint)?;
    let report = evaluate(&checkpoint.model, &dataset)?;
    print!("{}", report.to_kv());
    write_report(&args.out, METRICS, &report)
}

pub fn predict(checkpoint_path: &Path, images: &[PathBuf], out: Option<&Path>) -> CliResult<()> {
    require_file("--checkpoint", checkpoint_path)?;
    if let Some(out) = out {
        prepare_out(out)?;
    }
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let model = &checkpoint.model;
    let resolution = model.config().encoder.input_resolution;
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["image", "label", "predicted", "probability"]).map_err(cxrnet::Error::from)?;
    let mut failed = 0;
    for path in images {
        let image = match load_image(path, resolution) {
            Ok(image) => image,
            Err(e) => {
                log::error!("{}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        let (labels, probs) = model.predict(&images_to_tensor(&[&image])?)?;
        let name = path.display().to_string();
        for (t, label) in model.labels().iter().enumerate() {
            let bit = u8::from(labels[0].get(t)).to_string();
            let p = probs.at2(0, t).to_string();
            rows.write_record([name.as_str(), label, &bit, &p]).map_err(cxrnet::Error::from)?;
        }
    }
    let bytes = rows.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    match out {
        Some(dir) => write_file(dir.join(PREDICTIONS), bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} images could not be read", images.len())));
    }
    Ok(())
}

pub fn gradcheck(seeds: u64, inject_sign_bug: bool, out: Option<&Path>) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::Invalid("--seeds: must be positive".into()));
    }
    if let Some(out) = out {
        prepare_out(out)?;
    }
    let mut cases: Vec<Box<dyn GradCase>> = default_cases();
    if inject_sign_bug {
        cases.push(Box::new(SignFlipDouble));
    }
    let report = run_suite(&cases, seeds)?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = out {
        write_file(out.join("gradcheck.txt"), &table)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        Err(CliError::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}
