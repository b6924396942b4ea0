//! Subcommand implementations. Config-driven commands validate every path
//! before loading data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use topopi_core::codec::{encode_pd, encode_pi};
use topopi_core::data::{gaussian_corrupt, pipeline, synth_images, synth_signals, DatasetBundle, InputKind, NoiseLevel};
use topopi_core::models::{
    dataset_loss, fine_tune, predict_classes, train as fit, Metric, Schedule, Selection, Supervised,
};
use topopi_core::nn::Tensor;
use topopi_core::{default_spec, DatasetTag, PersistenceImage, Rng};

use crate::config::{parse_phases, RunConfig};
use crate::error::{data, usage, CliError, CliResult};
use crate::input::{DataSource, Format};
use crate::model::{analytic_pis, Model, ModelMeta, PREDICT_BATCH};

/// Runs `f` on a pool of `threads` workers (0 = one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Data(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn schedule(cfg: &RunConfig, default: Schedule) -> CliResult<Schedule> {
    let mut s = match (cfg.get("schedule"), cfg.get("phases")) {
        (Some(_), Some(_)) => return Err(usage("set either schedule or phases, not both")),
        (Some(name), None) => Schedule::preset(name).map_err(|e| usage(e.to_string()))?,
        (None, Some(p)) => Schedule::new(parse_phases(p)?, default.batch_size),
        (None, None) => default,
    };
    s.batch_size = cfg.parse_or("batch_size", s.batch_size)?;
    if s.batch_size == 0 {
        return Err(usage("batch_size must be positive"));
    }
    Ok(s)
}

/// Training data and an optional held-out split: `test_input` when given,
/// else a seeded `train_fraction` split (none at 1.0).
fn load_splits(
    cfg: &RunConfig,
    source: &DataSource,
    input: &Path,
    test_input: Option<&Path>,
    rng: &mut Rng,
) -> CliResult<(DatasetBundle, Option<DatasetBundle>)> {
    let all = source.load(input)?;
    if let Some(p) = test_input {
        return Ok((all, Some(source.load(p)?)));
    }
    let frac: f64 = cfg.parse_or("train_fraction", 0.75)?;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(usage(format!("train_fraction must lie in (0, 1], got {frac}")));
    }
    if frac == 1.0 {
        return Ok((all, None));
    }
    let (a, b) = all.split_train_test(frac, rng)?;
    Ok((a, Some(b)))
}

fn supervised(model: &Model, raw: &DatasetBundle) -> CliResult<Supervised> {
    Ok(Supervised::new(model.inputs(raw)?, model.targets(raw)?)?)
}

/// Flat `key=value` report lines in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn score_lines(report: &mut Report, prefix: &str, model: &Model, raw: &DatasetBundle, data: &Supervised) -> CliResult<()> {
    report.push(&format!("{prefix}_loss"), dataset_loss(&model.stack, data, model.meta.loss, PREDICT_BATCH)?);
    if !model.meta.kind.is_surrogate() {
        let labels = raw.labels.as_deref().unwrap_or_default();
        let preds = predict_classes(&model.stack, &data.input_refs(), PREDICT_BATCH)?;
        report.push(&format!("{prefix}_weighted_f1"), topopi_core::data::weighted_f1(&preds, labels)?);
        report.push(&format!("{prefix}_accuracy"), topopi_core::data::accuracy(&preds, labels)?);
    }
    Ok(())
}

/// Trains a model from scratch; writes the model directory, `loss.csv` and
/// `report.txt` to `output`.
pub fn train(cfg: &RunConfig) -> CliResult<Report> {
    let source = DataSource::from_config(cfg)?;
    let input = cfg.existing_path("input")?;
    let test_input = cfg.optional_existing_path("test_input")?;
    cfg.optional_existing_path("aux_weights")?;
    let kind = crate::model::ModelKind::parse(cfg.require("model")?)?;
    let sched = schedule(cfg, kind.default_schedule())?;
    let threads = cfg.parse_or("threads", 0)?;
    let out = cfg.output_dir()?;
    let rng = Rng::new(cfg.seed()?);

    with_threads(threads, || {
        let (train_set, test_set) = load_splits(cfg, &source, &input, test_input.as_deref(), &mut rng.fork(1))?;
        let meta = ModelMeta::from_config(cfg, &train_set)?;
        let mut model = Model::fit(meta, &train_set, &mut rng.fork(2))?;
        let train_data = supervised(&model, &train_set)?;
        let test_data = test_set.as_ref().map(|t| supervised(&model, t)).transpose()?;
        let log = fit(&mut model.stack, &train_data, &sched, model.meta.loss, test_data.as_ref(), &mut rng.fork(3))?;
        model.save(&out)?;
        fs::write(out.join("loss.csv"), log.to_csv())?;

        let mut report = Report::default();
        report.push("model", model.meta.kind.tag());
        report.push("train_samples", train_set.len());
        report.push("test_samples", test_set.as_ref().map_or(0, DatasetBundle::len));
        report.push("epochs", sched.epochs());
        report.push("final_epoch_loss", log.final_loss().map_or("none".into(), |l| l.to_string()));
        score_lines(&mut report, "train", &model, &train_set, &train_data)?;
        if let (Some(t), Some(d)) = (&test_set, &test_data) {
            score_lines(&mut report, "test", &model, t, d)?;
        }
        fs::write(out.join("report.txt"), report.to_text())?;
        Ok(report)
    })
}

/// Loads `weights` and continues training on `input`, on every sample
/// (`selection = all`) or the first `subset_k` per class (`subset`).
pub fn finetune(cfg: &RunConfig) -> CliResult<Report> {
    let source = DataSource::from_config(cfg)?;
    let weights = cfg.existing_path("weights")?;
    let input = cfg.existing_path("input")?;
    let test_input = cfg.optional_existing_path("test_input")?;
    let sched = schedule(cfg, Schedule::finetune_desk())?;
    let threads = cfg.parse_or("threads", 0)?;
    let subset = match cfg.get("selection").unwrap_or("all") {
        "all" => None,
        "subset" => Some(cfg.parse_or("subset_k", 500usize)?),
        other => return Err(usage(format!("selection must be all or subset, got {other:?}"))),
    };
    let out = cfg.output_dir()?;
    let rng = Rng::new(cfg.seed()?);

    with_threads(threads, || {
        let mut model = Model::load(&weights)?;
        let start = model.stack.weight_set();
        let (train_set, test_set) = load_splits(cfg, &source, &input, test_input.as_deref(), &mut rng.fork(1))?;
        let selection = match subset {
            None => Selection::All,
            Some(k) => Selection::PerClass {
                k,
                labels: train_set.labels.clone().ok_or_else(|| data("subset selection needs labels"))?,
            },
        };
        let train_data = supervised(&model, &train_set)?;
        let test_data = test_set.as_ref().map(|t| supervised(&model, t)).transpose()?;
        let outcome = fine_tune(
            &mut model.stack,
            &start,
            &train_data,
            &selection,
            &sched,
            model.meta.loss,
            &mut rng.fork(3),
        )?;
        model.save(&out)?;
        fs::write(out.join("loss.csv"), outcome.log.to_csv())?;

        let mut report = Report::default();
        report.push("model", model.meta.kind.tag());
        report.push("selection", if subset.is_some() { "subset" } else { "all" });
        report.push("samples_used", outcome.samples_used);
        report.push("epochs", sched.epochs());
        report.push("final_epoch_loss", outcome.log.final_loss().map_or("none".into(), |l| l.to_string()));
        score_lines(&mut report, "train", &model, &train_set, &train_data)?;
        if let (Some(t), Some(d)) = (&test_set, &test_data) {
            score_lines(&mut report, "test", &model, t, d)?;
        }
        fs::write(out.join("report.txt"), report.to_text())?;
        Ok(report)
    })
}

fn pi_name(i: usize) -> String {
    format!("sample_{i:05}.pi")
}

/// Surrogates write one persistence image per sample, clipped to [0, 1]
/// since the signal surrogate's output is linear; classifiers write
/// `predictions.csv` (index, predicted class, class scores).
pub fn infer(cfg: &RunConfig) -> CliResult<Report> {
    let source = DataSource::from_config(cfg)?;
    let weights = cfg.existing_path("weights")?;
    let input = cfg.existing_path("input")?;
    let threads = cfg.parse_or("threads", 0)?;
    let out = cfg.output_dir()?;

    with_threads(threads, || {
        let model = Model::load(&weights)?;
        let raw = source.load(&input)?;
        let y = model.predict(&raw)?;
        let mut report = Report::default();
        report.push("model", model.meta.kind.tag());
        report.push("samples", raw.len());
        if model.meta.kind.is_surrogate() {
            let &[_, rows, cols, ch] = y.shape() else {
                return Err(data(format!("surrogate output {:?} is not an image batch", y.shape())));
            };
            for i in 0..raw.len() {
                let clipped = y.sample(i).iter().map(|v| v.clamp(0.0, 1.0)).collect();
                let pi = PersistenceImage::new(rows, cols, ch, clipped)?;
                fs::write(out.join(pi_name(i)), encode_pi(&pi))?;
            }
            report.push("written", format!("{} persistence images", raw.len()));
        } else {
            let classes = model.meta.classes;
            let mut s = String::from("index,predicted");
            for c in 0..classes {
                let _ = write!(s, ",score_{c}");
            }
            s.push('\n');
            for (i, row) in y.data().chunks(classes).enumerate() {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                    .0;
                let _ = write!(s, "{i},{best}");
                for v in row {
                    let _ = write!(s, ",{v:?}");
                }
                s.push('\n');
            }
            fs::write(out.join("predictions.csv"), s)?;
            report.push("written", "predictions.csv");
        }
        fs::write(out.join("infer.txt"), report.to_text())?;
        Ok(report)
    })
}

fn parse_levels(cfg: &RunConfig) -> CliResult<Vec<NoiseLevel>> {
    match cfg.list::<String>("noise_levels")? {
        None => Ok(Vec::new()),
        Some(tags) => tags
            .iter()
            .map(|t| NoiseLevel::parse(t).map_err(|e| usage(e.to_string())))
            .collect(),
    }
}

fn score(model: &Model, raw: &DatasetBundle, metric: Option<Metric>) -> CliResult<f64> {
    let inputs = model.inputs(raw)?;
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    match metric {
        None => {
            let pred = model.stack.predict(&refs, PREDICT_BATCH)?;
            Ok(model.meta.loss.eval(&pred, &model.targets(raw)?)?.0)
        }
        Some(m) => {
            let labels = raw.labels.as_ref().ok_or_else(|| data("evaluation needs labels"))?;
            Ok(topopi_core::models::evaluate(&model.stack, &refs, labels, m)?)
        }
    }
}

/// Scores `input` with the model: weighted F1 or accuracy for classifiers,
/// the training loss against analytic images for surrogates. With
/// `noise_levels` set, also scores Gaussian-corrupted copies (mean over
/// `noise_seeds` draws) and writes `noise.csv` with percentage-point drops.
pub fn eval(cfg: &RunConfig) -> CliResult<Report> {
    let source = DataSource::from_config(cfg)?;
    let weights = cfg.existing_path("weights")?;
    let input = cfg.existing_path("input")?;
    let threads = cfg.parse_or("threads", 0)?;
    let levels = parse_levels(cfg)?;
    let noise_seeds: u64 = cfg.parse_or("noise_seeds", 3)?;
    let out = cfg.output_dir()?;
    let seed = cfg.seed()?;

    with_threads(threads, || {
        let model = Model::load(&weights)?;
        let metric = if model.meta.kind.is_surrogate() {
            None
        } else {
            Some(Metric::parse(cfg.get("metric").unwrap_or("f1")).map_err(|e| usage(e.to_string()))?)
        };
        let raw = source.load(&input)?;
        let clean = score(&model, &raw, metric)?;
        let mut report = Report::default();
        report.push("model", model.meta.kind.tag());
        report.push("metric", metric.map_or(model.meta.loss.name(), Metric::name));
        report.push("samples", raw.len());
        report.push("score", clean);

        if !levels.is_empty() {
            if raw.kind != InputKind::Image {
                return Err(usage("noise levels apply to image inputs"));
            }
            let mut csv = String::from("level,sigma,seeds,score,drop_pp\n");
            for level in &levels {
                let mut total = 0.0;
                for s in 0..noise_seeds {
                    let mut rng = Rng::new(seed).fork(1000 + s);
                    let mut noisy = raw.clone();
                    noisy.inputs = gaussian_corrupt(&raw.inputs, *level, &mut rng)?;
                    total += score(&model, &noisy, metric)?;
                }
                let mean = total / noise_seeds.max(1) as f64;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    level.tag(),
                    level.sigma(),
                    noise_seeds,
                    mean,
                    (clean - mean) * 100.0
                );
                report.push(&format!("score_{}", level.tag()), mean);
            }
            fs::write(out.join("noise.csv"), csv)?;
        }
        fs::write(out.join("eval.txt"), report.to_text())?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub device: String,
    pub batch_size: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,device,batch_size,mean_ms_per_item,std_ms_per_item,items\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.4},{:.4},{}", r.method, r.device, r.batch_size, r.mean_ms, r.std_ms, r.items);
        }
        s
    }

    pub fn row(&self, method: &str, batch_size: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.batch_size == batch_size)
    }
}

pub const BENCH_BATCHES: [usize; 2] = [1, 32];

/// Per-item milliseconds of `f` over consecutive batches of `b` items, after
/// `warmup` untimed single-item calls.
fn time_batches(
    raw: &DatasetBundle,
    items: usize,
    b: usize,
    warmup: usize,
    f: &dyn Fn(&DatasetBundle) -> CliResult<()>,
) -> CliResult<(f64, f64, usize)> {
    for i in 0..warmup {
        f(&raw.select(&[i % raw.len()]))?;
    }
    let batches = (items / b).max(1);
    let mut per_item = Vec::with_capacity(batches);
    for j in 0..batches {
        let idx: Vec<usize> = (j * b..(j + 1) * b).map(|i| i % raw.len()).collect();
        let batch = raw.select(&idx);
        let t0 = Instant::now();
        f(&batch)?;
        per_item.push(t0.elapsed().as_secs_f64() * 1e3 / b as f64);
    }
    let n = per_item.len() as f64;
    let mean = per_item.iter().sum::<f64>() / n;
    let std = (per_item.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok((mean, std, batches * b))
}

/// Wall-clock cost per item of the analytic diagram + image pipeline against
/// the surrogate forward pass, at batch sizes 1 and 32. Inputs are loaded
/// before timing starts. Writes `bench.csv`.
pub fn bench(cfg: &RunConfig) -> CliResult<BenchReport> {
    let source = DataSource::from_config(cfg)?;
    let weights = cfg.existing_path("weights")?;
    let input = cfg.existing_path("input")?;
    let items: usize = cfg.parse_or("bench_items", 100)?;
    let warmup: usize = cfg.parse_or("bench_warmup", 2)?;
    let threads: usize = cfg.parse_or("threads", 1)?;
    if items < 32 {
        return Err(usage("bench_items must be at least 32"));
    }
    let out = cfg.output_dir()?;

    with_threads(threads, || {
        let model = Model::load(&weights)?;
        if !model.meta.kind.is_surrogate() {
            return Err(usage(format!("bench needs surrogate weights, got {}", model.meta.kind.tag())));
        }
        let raw = source.load(&input)?;
        let spec = model.meta.pi_spec();
        let device = format!("cpu x{}", rayon::current_num_threads());
        let analytic = |b: &DatasetBundle| analytic_pis(b, &spec).map(drop);
        let surrogate = |b: &DatasetBundle| model.predict(b).map(drop);
        let mut report = BenchReport::default();
        for (method, f) in [("analytic", &analytic as &dyn Fn(&DatasetBundle) -> CliResult<()>), ("surrogate", &surrogate)] {
            for b in BENCH_BATCHES {
                let (mean_ms, std_ms, n) = time_batches(&raw, items, b, warmup, f)?;
                report.rows.push(BenchRow {
                    method: method.to_string(),
                    device: device.clone(),
                    batch_size: b,
                    mean_ms,
                    std_ms,
                    items: n,
                });
            }
        }
        fs::write(out.join("bench.csv"), report.to_csv())?;
        Ok(report)
    })
}

/// Writes a Gaussian-corrupted copy of an image dataset.
pub fn corrupt(source: &DataSource, input: &Path, level: NoiseLevel, seed: u64, output: &Path) -> CliResult<usize> {
    if source.format.kind() != InputKind::Image {
        return Err(usage("corrupt applies to image datasets"));
    }
    let mut raw = source.load(input)?;
    raw.inputs = gaussian_corrupt(&raw.inputs, level, &mut Rng::new(seed))?;
    source.write(output, &raw)?;
    Ok(raw.len())
}

/// Writes a seeded synthetic dataset.
pub fn synth(source: &DataSource, count: usize, classes: usize, seed: u64, output: &Path) -> CliResult<usize> {
    let mut rng = Rng::new(seed);
    let s = &source.shape;
    let bundle = match source.format.kind() {
        InputKind::Signal => synth_signals(count, s[0], s[1], classes, &mut rng)?,
        InputKind::Image => synth_images(count, s[0], s[1], s[2], classes, &mut rng)?,
    };
    source.write(output, &bundle)?;
    Ok(bundle.len())
}

fn spec_for(kind: InputKind, tag: Option<&str>) -> CliResult<DatasetTag> {
    match tag {
        Some(t) => DatasetTag::parse(t).map_err(|e| usage(e.to_string())),
        None if kind == InputKind::Signal => Ok(DatasetTag::Signal),
        None => Ok(DatasetTag::Cifar),
    }
}

/// One `TPD1` file per sample and channel: `sample_00000_c0.pd`, ...
pub fn pd(source: &DataSource, input: &Path, tag: Option<&str>, output: &Path) -> CliResult<usize> {
    let spec = default_spec(spec_for(source.format.kind(), tag)?);
    let raw = source.load(input)?;
    fs::create_dir_all(output)?;
    let diagrams = match raw.kind {
        InputKind::Signal => pipeline::signal_diagrams(&raw.inputs)?,
        InputKind::Image => pipeline::image_diagrams(&raw.inputs, spec.lifetime_floor)?,
    };
    let mut written = 0;
    for (i, pds) in diagrams.iter().enumerate() {
        for (c, d) in pds.iter().enumerate() {
            fs::write(output.join(format!("sample_{i:05}_c{c}.pd")), encode_pd(d))?;
            written += 1;
        }
    }
    Ok(written)
}

/// One multi-channel `TPI1` file per sample.
pub fn pi(source: &DataSource, input: &Path, tag: Option<&str>, output: &Path) -> CliResult<usize> {
    let spec = default_spec(spec_for(source.format.kind(), tag)?);
    let raw = source.load(input)?;
    fs::create_dir_all(output)?;
    let diagrams = match raw.kind {
        InputKind::Signal => pipeline::signal_diagrams(&raw.inputs)?,
        InputKind::Image => pipeline::image_diagrams(&raw.inputs, spec.lifetime_floor)?,
    };
    let images = pipeline::diagrams_to_images(&diagrams, &spec)?;
    for (i, im) in images.iter().enumerate() {
        fs::write(output.join(pi_name(i)), encode_pi(im))?;
    }
    Ok(images.len())
}

/// Data source from the `--format` and `--shape` flags.
pub fn source_from_flags(format: &str, shape: Option<&str>) -> CliResult<DataSource> {
    DataSource::new(Format::parse(format)?, shape)
}

pub fn parse_level(tag: &str) -> CliResult<NoiseLevel> {
    NoiseLevel::parse(tag).map_err(|e| usage(e.to_string()))
}

pub fn path_must_exist(p: &Path) -> CliResult<PathBuf> {
    if p.exists() {
        Ok(p.to_path_buf())
    } else {
        Err(data(format!("{} does not exist", p.display())))
    }
}
