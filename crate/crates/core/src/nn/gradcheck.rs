//! Central-difference verification of reverse-mode gradients.
//!
//! The check runs the stack in train mode with a freshly seeded generator on
//! every evaluation, so dropout masks repeat exactly. Entries whose
//! perturbation flips a relu or changes a pooling winner are skipped: the
//! function is not differentiable across that kink.

use super::layer::Mode;
use super::stack::LayerStack;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;

/// Scalar objective of the stack output: value and gradient.
pub type Objective<'a> = &'a dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries sampled per parameter tensor (all entries when smaller).
    pub samples_per_tensor: usize,
    pub check_inputs: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples_per_tensor: 12,
            check_inputs: true,
            seed: 0,
        }
    }
}

/// Which value a gradient entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Param(usize),
    Input(usize),
}

#[derive(Debug, Clone)]
pub struct AnalyticGrads {
    pub params: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    signature: Vec<u64>,
}

impl AnalyticGrads {
    pub fn get(&self, slot: Slot, index: usize) -> f64 {
        match slot {
            Slot::Param(p) => self.params[p][index],
            Slot::Input(i) => self.inputs[i][index],
        }
    }

    pub fn get_mut(&mut self, slot: Slot, index: usize) -> &mut f64 {
        match slot {
            Slot::Param(p) => &mut self.params[p][index],
            Slot::Input(i) => &mut self.inputs[i][index],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NumericEntry {
    pub slot: Slot,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<(Slot, usize, f64, f64)>,
}

/// Relative error with a floor on the denominator so entries that are
/// (nearly) zero on both sides compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn evaluate(
    stack: &mut LayerStack<f64>,
    inputs: &[Tensor<f64>],
    objective: Objective,
    seed: u64,
) -> Result<(f64, Tensor<f64>)> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let y = stack.forward(&refs, Mode::Train, &mut Rng::new(seed))?;
    let (l, g) = objective(&y)?;
    Ok((l + stack.decay_penalty(), g))
}

/// Reverse-mode gradients of `objective(stack(inputs)) + decay penalty`.
pub fn analytic_grads(
    stack: &mut LayerStack<f64>,
    inputs: &[Tensor<f64>],
    objective: Objective,
    seed: u64,
) -> Result<AnalyticGrads> {
    stack.zero_grads();
    let (_, g) = evaluate(stack, inputs, objective, seed)?;
    let signature = stack.kink_signature();
    let dx = stack.backward(&g)?;
    stack.add_decay_grads();
    Ok(AnalyticGrads {
        params: stack.params().iter().map(|p| p.grad.data().to_vec()).collect(),
        inputs: dx.into_iter().map(|t| t.into_data()).collect(),
        signature,
    })
}

fn sample_indices(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        let mut idx = rng.permutation(len);
        idx.truncate(count);
        idx.sort_unstable();
        idx
    }
}

/// Central differences on sampled entries; kink-crossing entries are left
/// out and counted in the returned skip total.
pub fn numeric_grads(
    stack: &mut LayerStack<f64>,
    inputs: &[Tensor<f64>],
    objective: Objective,
    reference: &AnalyticGrads,
    opts: &GradCheckOptions,
) -> Result<(Vec<NumericEntry>, usize)> {
    let mut pick = Rng::new(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut targets = Vec::new();
    for (p, len) in stack.params().iter().map(|p| p.value.len()).enumerate() {
        for i in sample_indices(len, opts.samples_per_tensor, &mut pick) {
            targets.push((Slot::Param(p), i));
        }
    }
    if opts.check_inputs {
        for (k, x) in inputs.iter().enumerate() {
            for i in sample_indices(x.len(), opts.samples_per_tensor, &mut pick) {
                targets.push((Slot::Input(k), i));
            }
        }
    }
    let h = opts.step;
    let mut xs = inputs.to_vec();
    let mut out = Vec::with_capacity(targets.len());
    let mut skipped = 0;
    for (slot, i) in targets {
        let probe = |stack: &mut LayerStack<f64>, xs: &mut Vec<Tensor<f64>>, delta: f64| -> Result<(f64, bool)> {
            let orig = read(stack, xs, slot, i);
            write(stack, xs, slot, i, orig + delta);
            let (l, _) = evaluate(stack, xs, objective, opts.seed)?;
            let same = stack.kink_signature() == reference.signature;
            write(stack, xs, slot, i, orig);
            Ok((l, same))
        };
        let (up, same_up) = probe(stack, &mut xs, h)?;
        let (dn, same_dn) = probe(stack, &mut xs, -h)?;
        if !(same_up && same_dn) {
            skipped += 1;
            continue;
        }
        out.push(NumericEntry {
            slot,
            index: i,
            value: (up - dn) / (2.0 * h),
        });
    }
    Ok((out, skipped))
}

fn read(stack: &LayerStack<f64>, xs: &[Tensor<f64>], slot: Slot, i: usize) -> f64 {
    match slot {
        Slot::Param(p) => stack.params()[p].value.data()[i],
        Slot::Input(k) => xs[k].data()[i],
    }
}

fn write(stack: &mut LayerStack<f64>, xs: &mut [Tensor<f64>], slot: Slot, i: usize, v: f64) {
    match slot {
        Slot::Param(p) => stack.params_mut()[p].value.data_mut()[i] = v,
        Slot::Input(k) => xs[k].data_mut()[i] = v,
    }
}

pub fn compare(analytic: &AnalyticGrads, numeric: &[NumericEntry], skipped: usize) -> GradCheckReport {
    let mut report = GradCheckReport {
        skipped,
        ..Default::default()
    };
    for e in numeric {
        let a = analytic.get(e.slot, e.index);
        let err = relative_error(a, e.value);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((e.slot, e.index, a, e.value));
        }
    }
    report
}

/// Full check: analytic vs central differences on sampled entries of every
/// parameter tensor (and optionally the inputs).
pub fn grad_check(
    stack: &mut LayerStack<f64>,
    inputs: &[Tensor<f64>],
    objective: Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = analytic_grads(stack, inputs, objective, opts.seed)?;
    let (numeric, skipped) = numeric_grads(stack, inputs, objective, &analytic, opts)?;
    Ok(compare(&analytic, &numeric, skipped))
}

/// `sum(w * y)` with fixed pseudo-random weights `w`, a generic objective
/// that gives every output entry a distinct, non-zero gradient.
pub fn projection_objective(shape: &[usize], seed: u64) -> impl Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    let mut rng = Rng::new(seed);
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let shape = shape.to_vec();
    move |y: &Tensor<f64>| {
        if y.shape() != shape.as_slice() {
            return Err(crate::error::Error::invalid(format!(
                "objective expects {:?}, got {:?}",
                shape,
                y.shape()
            )));
        }
        let l = y.data().iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok((l, Tensor::new(shape.clone(), w.clone())?))
    }
}
