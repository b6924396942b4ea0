use std::fmt::Write as _;

use crate::codec::WeightSet;
use crate::data::metrics::{accuracy, weighted_f1};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, LayerStack, LossKind, Mode, Src, Tensor};
use crate::rng::Rng;

/// Inputs (one tensor per stack input, batch-aligned) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Tensor<f32>,
}

impl Supervised {
    pub fn new(inputs: Vec<Tensor<f32>>, targets: Tensor<f32>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("a training set needs at least one input tensor"));
        }
        let n = targets.batch();
        if let Some(x) = inputs.iter().find(|x| x.batch() != n) {
            return Err(Error::invalid(format!(
                "input batch {} does not match {n} targets",
                x.batch()
            )));
        }
        Ok(Supervised { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Supervised {
        Supervised {
            inputs: self.inputs.iter().map(|x| x.select(idx)).collect(),
            targets: self.targets.select(idx),
        }
    }

    pub fn input_refs(&self) -> Vec<&Tensor<f32>> {
        self.inputs.iter().collect()
    }
}

/// Piecewise-constant learning rate: `(epochs, lr)` phases run in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub phases: Vec<(usize, f64)>,
    pub batch_size: usize,
}

impl Schedule {
    pub fn new(phases: Vec<(usize, f64)>, batch_size: usize) -> Self {
        Schedule { phases, batch_size }
    }

    pub fn epochs(&self) -> usize {
        self.phases.iter().map(|p| p.0).sum()
    }

    /// Full-size signal surrogate schedule.
    pub fn signal_paper() -> Self {
        Schedule::new(vec![(300, 1e-3), (300, 1e-4), (400, 1e-5)], 128)
    }

    /// Full-size image surrogate schedule.
    pub fn image_paper() -> Self {
        Schedule::new(vec![(15, 1e-3), (200, 1e-5), (200, 1e-6)], 32)
    }

    /// Full-size fine-tuning schedule.
    pub fn finetune_paper() -> Self {
        Schedule::new(vec![(200, 1e-6)], 32)
    }

    /// 30 epochs with the same three-phase decay, for desk-sized data.
    pub fn signal_desk() -> Self {
        Schedule::new(vec![(20, 1e-3), (5, 1e-4), (5, 1e-5)], 32)
    }

    /// Starts an order of magnitude hotter than the full-size schedule: with
    /// a few hundred images there are too few steps for the output norm's
    /// shift to settle at 1e-3.
    pub fn image_desk() -> Self {
        Schedule::new(vec![(10, 1e-2), (5, 1e-3), (5, 1e-4)], 32)
    }

    pub fn finetune_desk() -> Self {
        Schedule::new(vec![(10, 1e-4)], 32)
    }

    pub fn classifier_desk() -> Self {
        Schedule::new(vec![(20, 1e-3), (10, 1e-4)], 32)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "signal-paper" => Ok(Self::signal_paper()),
            "image-paper" => Ok(Self::image_paper()),
            "finetune-paper" => Ok(Self::finetune_paper()),
            "signal-desk" => Ok(Self::signal_desk()),
            "image-desk" => Ok(Self::image_desk()),
            "finetune-desk" => Ok(Self::finetune_desk()),
            "classifier-desk" => Ok(Self::classifier_desk()),
            other => Err(Error::invalid(format!("unknown schedule preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    /// `epoch,lr,train_loss,val_loss` with an empty last cell when no
    /// validation set was given.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{:e},{}", r.epoch, r.lr, r.train_loss, val);
        }
        s
    }
}

/// Mean loss of the stack over `data` in inference mode.
pub fn dataset_loss(stack: &LayerStack<f32>, data: &Supervised, loss: LossKind, batch_size: usize) -> Result<f64> {
    let pred = stack.predict(&data.input_refs(), batch_size)?;
    Ok(loss.eval(&pred, &data.targets)?.0)
}

/// Mini-batch Adam. Each epoch visits a fresh permutation drawn from `rng`,
/// which also drives dropout. The recorded train loss is the size-weighted
/// mean of the batch losses (weight decay excluded).
///
/// Batch-norm moving statistics are recomputed over `data` with dropout off
/// after the last epoch, and before every validation pass.
pub fn train(
    stack: &mut LayerStack<f32>,
    data: &Supervised,
    schedule: &Schedule,
    loss: LossKind,
    validation: Option<&Supervised>,
    rng: &mut Rng,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let bs = schedule.batch_size.max(1);
    let mut adam = AdamState::new();
    let mut log = TrainLog::default();
    let has_norm = stack.layers().any(|l| l.kind() == "batchnorm");
    let mut epoch = 0;
    for &(epochs, lr) in &schedule.phases {
        let cfg = AdamConfig::with_lr(lr);
        for _ in 0..epochs {
            let order = rng.permutation(data.len());
            let mut total = 0.0;
            for (b, idx) in order.chunks(bs).enumerate() {
                let batch = data.select(idx);
                stack.zero_grads();
                let pred = stack.forward(&batch.input_refs(), Mode::Train, rng)?;
                let (l, g) = loss.eval(&pred, &batch.targets)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b, loss: l });
                }
                total += l * idx.len() as f64;
                stack.backward(&g)?;
                stack.add_decay_grads();
                adam_step(&mut adam, &mut stack.params_mut(), &cfg);
            }
            stack.clear_trace();
            let last = epoch + 1 == schedule.epochs();
            if has_norm && (last || validation.is_some()) {
                stack.recalibrate_batchnorm(&data.input_refs(), bs)?;
            }
            let val_loss = match validation {
                Some(v) => Some(dataset_loss(stack, v, loss, bs)?),
                None => None,
            };
            log.records.push(EpochRecord {
                epoch,
                lr,
                train_loss: total / data.len() as f64,
                val_loss,
            });
            epoch += 1;
        }
    }
    Ok(log)
}

/// Which target samples fine-tuning sees.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Every sample.
    All,
    /// The first `k` samples of each class (in dataset order).
    PerClass { k: usize, labels: Vec<usize> },
}

impl Selection {
    pub fn indices(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Selection::All => Ok((0..n).collect()),
            Selection::PerClass { k, labels } => {
                if labels.len() != n {
                    return Err(Error::invalid(format!("{} labels for {n} samples", labels.len())));
                }
                let classes = labels.iter().max().map_or(0, |m| m + 1);
                let mut taken = vec![0usize; classes];
                Ok((0..n)
                    .filter(|&i| {
                        let c = labels[i];
                        taken[c] += 1;
                        taken[c] <= *k
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub log: TrainLog,
    pub samples_used: usize,
}

/// Loads `source` into `stack`, then trains on the selected samples.
pub fn fine_tune(
    stack: &mut LayerStack<f32>,
    source: &WeightSet,
    data: &Supervised,
    selection: &Selection,
    schedule: &Schedule,
    loss: LossKind,
    rng: &mut Rng,
) -> Result<FineTuneOutcome> {
    stack.load_weights(source)?;
    let idx = selection.indices(data.len())?;
    let subset = data.select(&idx);
    let log = if schedule.epochs() == 0 {
        TrainLog::default()
    } else {
        train(stack, &subset, schedule, loss, None, rng)?
    };
    Ok(FineTuneOutcome {
        log,
        samples_used: idx.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    WeightedF1,
    Accuracy,
}

impl Metric {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "f1" | "weighted_f1" | "weighted-f1" => Ok(Metric::WeightedF1),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::WeightedF1 => "weighted_f1",
            Metric::Accuracy => "accuracy",
        }
    }
}

/// Row-wise argmax of class scores.
pub fn predict_classes(stack: &LayerStack<f32>, inputs: &[&Tensor<f32>], batch_size: usize) -> Result<Vec<usize>> {
    let scores = stack.predict(inputs, batch_size)?;
    let classes = *scores.shape().last().unwrap();
    Ok(scores
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

pub fn evaluate(stack: &LayerStack<f32>, inputs: &[&Tensor<f32>], labels: &[usize], metric: Metric) -> Result<f64> {
    let preds = predict_classes(stack, inputs, 64)?;
    match metric {
        Metric::WeightedF1 => weighted_f1(&preds, labels),
        Metric::Accuracy => accuracy(&preds, labels),
    }
}

/// Copies every weight of `base` into the matching layers of `fused`, a
/// classifier with the same trunk and an auxiliary branch from input 1.
/// The head dense layer receives the base rows first; the rows fed by the
/// auxiliary vector are left as they are.
pub fn transfer_base_weights<T: crate::nn::Scalar>(base: &LayerStack<T>, fused: &mut LayerStack<T>) -> Result<()> {
    let mut tainted = vec![false; fused.len()];
    let mut bi = 0;
    let mismatch = |i: usize, msg: &str| Error::IncompatibleWeights(format!("fused layer {i}: {msg}"));
    for fi in 0..fused.len() {
        tainted[fi] = fused.layer_sources(fi).iter().any(|s| match *s {
            Src::Input(k) => k > 0,
            Src::Node(j) => tainted[j],
        });
        let kind = fused.layer(fi).kind();
        if tainted[fi] && !matches!(kind, "dense" | "softmax") {
            continue;
        }
        if bi >= base.len() {
            return Err(mismatch(fi, "base stack is shorter"));
        }
        if base.layer(bi).kind() != kind {
            return Err(mismatch(fi, &format!("{kind} vs base {}", base.layer(bi).kind())));
        }
        let src: Vec<Tensor<T>> = base.layer(bi).tensors().into_iter().cloned().collect();
        let dst = fused.layer_mut(fi).tensors_mut();
        for (d, s) in dst.into_iter().zip(&src) {
            if d.shape() == s.shape() {
                *d = s.clone();
            } else if kind == "dense" && d.shape()[1..] == s.shape()[1..] && d.shape()[0] > s.shape()[0] {
                d.data_mut()[..s.len()].copy_from_slice(s.data());
            } else {
                return Err(mismatch(fi, &format!("{:?} vs base {:?}", d.shape(), s.shape())));
            }
        }
        bi += 1;
    }
    if bi != base.len() {
        return Err(Error::IncompatibleWeights(format!(
            "{} base layers left unmatched",
            base.len() - bi
        )));
    }
    Ok(())
}
