use crate::error::{Error, Result};
use crate::filtration::SignalFrame;
use crate::nn::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// `[N, t, n]` frames.
    Signal,
    /// `[N, h, w, c]` images with pixels in [0, 1].
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Whole,
}

/// Per-(time-step, channel) statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardization {
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(x)?;
        let per = self.mean.len();
        let data = x
            .data()
            .chunks(per)
            .flat_map(|s| {
                s.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &sd))| ((v as f64 - m) / sd) as f32)
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn invert(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(x)?;
        let per = self.mean.len();
        let data = x
            .data()
            .chunks(per)
            .flat_map(|s| {
                s.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &sd))| (v as f64 * sd + m) as f32)
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn check(&self, x: &Tensor<f32>) -> Result<()> {
        if x.sample_len() != self.mean.len() {
            return Err(Error::invalid(format!(
                "statistics cover {} values per frame, frames have {}",
                self.mean.len(),
                x.sample_len()
            )));
        }
        Ok(())
    }
}

/// Aligned inputs with optional persistence-image targets and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub kind: InputKind,
    pub inputs: Tensor<f32>,
    pub targets: Option<Tensor<f32>>,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
    pub standardization: Option<Standardization>,
}

impl DatasetBundle {
    pub fn new(kind: InputKind, inputs: Tensor<f32>, labels: Option<Vec<usize>>) -> Result<Self> {
        let rank = match kind {
            InputKind::Signal => 3,
            InputKind::Image => 4,
        };
        if inputs.shape().len() != rank {
            return Err(Error::invalid(format!(
                "{kind:?} inputs need rank {rank}, got shape {:?}",
                inputs.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.batch() {
                return Err(Error::invalid(format!("{} labels for {} samples", l.len(), inputs.batch())));
            }
        }
        Ok(DatasetBundle {
            kind,
            inputs,
            targets: None,
            labels,
            split: Split::Whole,
            standardization: None,
        })
    }

    pub fn with_targets(mut self, targets: Tensor<f32>) -> Result<Self> {
        if targets.batch() != self.len() {
            return Err(Error::invalid(format!(
                "{} targets for {} samples",
                targets.batch(),
                self.len()
            )));
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample shape (without the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn class_count(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn select(&self, idx: &[usize]) -> DatasetBundle {
        DatasetBundle {
            kind: self.kind,
            inputs: self.inputs.select(idx),
            targets: self.targets.as_ref().map(|t| t.select(idx)),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            split: self.split,
            standardization: self.standardization.clone(),
        }
    }

    pub fn frame(&self, i: usize) -> Result<SignalFrame> {
        match (self.kind, self.sample_shape()) {
            (InputKind::Signal, &[t, n]) => SignalFrame::from_f32(t, n, self.inputs.sample(i)),
            _ => Err(Error::invalid("not a signal dataset")),
        }
    }

    /// Seeded shuffle into `train_fraction` / remainder.
    pub fn split_train_test(&self, train_fraction: f64, rng: &mut Rng) -> Result<(DatasetBundle, DatasetBundle)> {
        let n = self.len();
        let cut = (n as f64 * train_fraction).round() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::invalid(format!(
                "split of {n} samples at {train_fraction} leaves an empty side"
            )));
        }
        let order = rng.permutation(n);
        let mut train = self.select(&order[..cut]);
        let mut test = self.select(&order[cut..]);
        train.split = Split::Train;
        test.split = Split::Test;
        Ok((train, test))
    }
}

/// Fits per-(step, channel) mean and std on `train` (std floored at
/// [`STD_FLOOR`]) and standardizes both splits with them.
pub fn standardize_signals(
    train: &DatasetBundle,
    test: &DatasetBundle,
) -> Result<(DatasetBundle, DatasetBundle, Standardization)> {
    if train.is_empty() {
        return Err(Error::invalid("cannot fit standardization on an empty training split"));
    }
    if train.kind != InputKind::Signal || test.kind != InputKind::Signal {
        return Err(Error::invalid("standardization applies to signal datasets"));
    }
    if train.sample_shape() != test.sample_shape() {
        return Err(Error::invalid(format!(
            "train frames {:?} vs test frames {:?}",
            train.sample_shape(),
            test.sample_shape()
        )));
    }
    let per = train.inputs.sample_len();
    let m = train.len() as f64;
    let mut mean = vec![0.0; per];
    for s in train.inputs.data().chunks(per) {
        for (a, &v) in mean.iter_mut().zip(s) {
            *a += v as f64;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; per];
    for s in train.inputs.data().chunks(per) {
        for ((a, &v), &mu) in var.iter_mut().zip(s).zip(&mean) {
            *a += (v as f64 - mu).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / m).sqrt().max(STD_FLOOR)).collect();
    let stats = Standardization { mean, std };
    let mut a = train.clone();
    a.inputs = stats.apply(&train.inputs)?;
    a.standardization = Some(stats.clone());
    let mut b = test.clone();
    b.inputs = stats.apply(&test.inputs)?;
    b.standardization = Some(stats.clone());
    Ok((a, b, stats))
}
