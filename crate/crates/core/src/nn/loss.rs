use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Which loss a training run minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Bce,
    Cce,
}

impl LossKind {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            "cce" => Ok(LossKind::Cce),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
            LossKind::Cce => "cce",
        }
    }

    pub fn eval<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self {
            LossKind::Mse => mse_loss(pred, target),
            LossKind::Bce => bce_loss(pred, target),
            LossKind::Cce => cce_loss(pred, target),
        }
    }
}

fn check<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, name: &str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "{name}: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred, target, "mse")?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let scale = T::from_f64(2.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Binary cross-entropy averaged over all elements.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred, target, "bce")?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64(), t.as_f64());
            let pc = p.clamp(CLAMP, 1.0 - CLAMP);
            sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            if pc != p {
                T::zero()
            } else {
                T::from_f64((p - t) / (p * (1.0 - p)) / n)
            }
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Categorical cross-entropy on probability rows (last axis), averaged over
/// rows.
pub fn cce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred, target, "cce")?;
    let classes = *pred.shape().last().unwrap();
    let rows = (pred.len() / classes) as f64;
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64(), t.as_f64());
            let pc = p.clamp(CLAMP, 1.0 - CLAMP);
            sum -= t * pc.ln();
            if pc != p {
                T::zero()
            } else {
                T::from_f64(-t / p / rows)
            }
        })
        .collect();
    Ok((sum / rows, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} outside {classes} classes")));
        }
        data[i * classes + l] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}
