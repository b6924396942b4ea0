use std::fmt::Write as _;

use super::layer::{Activation, Cache, Layer, LayerSpec, Mode, Param};
use super::tensor::{Scalar, Tensor};
use crate::codec::WeightSet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Where a layer reads one of its inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Input(usize),
    Node(usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    layer: Layer<T>,
    srcs: Vec<Src>,
    out_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

/// Layers evaluated in order; each reads the previous layer unless it names
/// its sources explicitly (concatenations). The last layer is the output.
#[derive(Debug, Clone)]
pub struct LayerStack<T> {
    input_shapes: Vec<Vec<usize>>,
    nodes: Vec<Node<T>>,
    weight_decay: f64,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> LayerStack<T> {
    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes.last().expect("stacks are never empty").out_shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layer(&self, i: usize) -> &Layer<T> {
        &self.nodes[i].layer
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer<T> {
        &mut self.nodes[i].layer
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.nodes.iter().map(|n| &n.layer)
    }

    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.nodes[i].out_shape
    }

    pub fn layer_sources(&self, i: usize) -> &[Src] {
        &self.nodes[i].srcs
    }

    /// L2 coefficient applied to kernels and dense weights during training.
    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn set_weight_decay(&mut self, lambda: f64) {
        self.weight_decay = lambda;
    }

    pub fn trainable_param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.trainable_count()).sum()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.nodes.iter().flat_map(|n| n.layer.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.nodes.iter_mut().flat_map(|n| n.layer.params_mut()).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// `lambda * sum(w^2)` over decayed parameters.
    pub fn decay_penalty(&self) -> f64 {
        if self.weight_decay == 0.0 {
            return 0.0;
        }
        let sq: f64 = self
            .params()
            .iter()
            .filter(|p| p.decay)
            .flat_map(|p| p.value.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum();
        self.weight_decay * sq
    }

    /// Adds the gradient of [`Self::decay_penalty`] to the parameter grads.
    pub fn add_decay_grads(&mut self) {
        if self.weight_decay == 0.0 {
            return;
        }
        let two_l = T::from_f64(2.0 * self.weight_decay);
        for p in self.params_mut() {
            if p.decay {
                for (g, &w) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                    *g = *g + two_l * w;
                }
            }
        }
    }

    fn check_inputs(&self, inputs: &[&Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("expected {} inputs, got {}", self.input_shapes.len(), inputs.len()),
            });
        }
        let batch = inputs[0].batch();
        for (i, (x, s)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if &x.shape()[1..] != s.as_slice() || x.batch() != batch {
                return Err(Error::Shape {
                    layer: 0,
                    msg: format!(
                        "input {i} has shape {:?}, expected [batch, {}]",
                        x.shape(),
                        s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
                    ),
                });
            }
        }
        Ok(batch)
    }

    fn gather<'a>(srcs: &[Src], inputs: &'a [Tensor<T>], outputs: &'a [Tensor<T>]) -> Vec<&'a Tensor<T>> {
        srcs.iter()
            .map(|s| match *s {
                Src::Input(i) => &inputs[i],
                Src::Node(i) => &outputs[i],
            })
            .collect()
    }

    /// Runs the stack. Train mode caches what [`Self::backward`] needs and
    /// updates batch-norm moving statistics; `rng` drives dropout masks.
    pub fn forward(&mut self, inputs: &[&Tensor<T>], mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.infer(inputs);
        }
        self.check_inputs(inputs)?;
        let owned: Vec<Tensor<T>> = inputs.iter().map(|t| (*t).clone()).collect();
        let mut outputs = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for node in &mut self.nodes {
            let xs = Self::gather(&node.srcs, &owned, &outputs);
            let mut cache = Cache::Empty;
            let y = node.layer.forward(&xs, &node.out_shape, mode, rng, &mut cache);
            node.layer.commit(&cache);
            outputs.push(y);
            caches.push(cache);
        }
        let out = outputs.last().cloned().expect("stacks are never empty");
        self.trace = Some(Trace {
            inputs: owned,
            outputs,
            caches,
        });
        Ok(out)
    }

    /// Single-input convenience for [`Self::forward`].
    pub fn forward_one(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        self.forward(&[x], mode, rng)
    }

    /// Inference pass; read-only, so a frozen stack can be shared.
    pub fn infer(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.check_inputs(inputs)?;
        let owned: Vec<Tensor<T>> = inputs.iter().map(|t| (*t).clone()).collect();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        // Dropout ignores the generator in infer mode.
        let mut idle = Rng::new(0);
        for (i, node) in self.nodes.iter().enumerate() {
            let xs = Self::gather(&node.srcs, &owned, &outputs);
            let mut cache = Cache::Empty;
            let y = node
                .layer
                .forward(&xs, &node.out_shape, Mode::Infer, &mut idle, &mut cache);
            outputs.push(y);
            // Release activations no later node reads.
            for j in 0..i {
                let needed = self.nodes[i + 1..]
                    .iter()
                    .any(|n| n.srcs.contains(&Src::Node(j)));
                if !needed && outputs[j].len() > 1 {
                    outputs[j] = Tensor::zeros(&[1]);
                }
            }
        }
        Ok(outputs.pop().expect("stacks are never empty"))
    }

    /// Inference over a large batch in chunks of `batch_size` samples.
    pub fn predict(&self, inputs: &[&Tensor<T>], batch_size: usize) -> Result<Tensor<T>> {
        let n = self.check_inputs(inputs)?;
        let bs = batch_size.max(1);
        if n <= bs {
            return self.infer(inputs);
        }
        let mut parts = Vec::with_capacity(n.div_ceil(bs));
        for start in (0..n).step_by(bs) {
            let idx: Vec<usize> = (start..(start + bs).min(n)).collect();
            let chunk: Vec<Tensor<T>> = inputs.iter().map(|t| t.select(&idx)).collect();
            let refs: Vec<&Tensor<T>> = chunk.iter().collect();
            parts.push(self.infer(&refs)?);
        }
        Tensor::concat_batches(&parts)
    }

    /// Sets every batch-norm moving mean and variance to the population
    /// statistics of its input over `inputs`. Batches of `batch_size` run as
    /// in training (batch statistics) but with dropout off, so the stored
    /// statistics match what inference sees.
    pub fn recalibrate_batchnorm(&mut self, inputs: &[&Tensor<T>], batch_size: usize) -> Result<()> {
        let n = self.check_inputs(inputs)?;
        let bs = batch_size.max(1);
        // Per node: rows seen, sum of values, sum of squares.
        let mut acc: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = vec![None; self.nodes.len()];
        let mut idle = Rng::new(0);
        for start in (0..n).step_by(bs) {
            let idx: Vec<usize> = (start..(start + bs).min(n)).collect();
            let chunk: Vec<Tensor<T>> = inputs.iter().map(|t| t.select(&idx)).collect();
            let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
            for (i, node) in self.nodes.iter().enumerate() {
                let xs = Self::gather(&node.srcs, &chunk, &outputs);
                let mode = match node.layer {
                    Layer::Dropout { .. } => Mode::Infer,
                    _ => Mode::Train,
                };
                let mut cache = Cache::Empty;
                let y = node.layer.forward(&xs, &node.out_shape, mode, &mut idle, &mut cache);
                if let Cache::Norm { mean, var, .. } = &cache {
                    let rows = (xs[0].len() / mean.len()) as f64;
                    let (count, sum, sq) =
                        acc[i].get_or_insert_with(|| (0.0, vec![0.0; mean.len()], vec![0.0; mean.len()]));
                    *count += rows;
                    for j in 0..mean.len() {
                        sum[j] += mean[j] * rows;
                        sq[j] += (var[j] + mean[j] * mean[j]) * rows;
                    }
                }
                outputs.push(y);
            }
        }
        for (node, a) in self.nodes.iter_mut().zip(acc) {
            if let (Layer::BatchNorm(b), Some((count, sum, sq))) = (&mut node.layer, a) {
                for j in 0..sum.len() {
                    let mean = sum[j] / count;
                    b.moving_mean.data_mut()[j] = T::from_f64(mean);
                    b.moving_var.data_mut()[j] = T::from_f64((sq[j] / count - mean * mean).max(0.0));
                }
            }
        }
        Ok(())
    }

    /// Back-propagates `dy` (gradient w.r.t. the output of the last training
    /// forward pass). Parameter gradients accumulate; returns input gradients.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let trace = self.trace.take().ok_or(Error::MissingForward)?;
        let result = self.backward_with(&trace, dy);
        self.trace = Some(trace);
        result
    }

    fn backward_with(&mut self, trace: &Trace<T>, dy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let last = trace.outputs.last().expect("stacks are never empty");
        if dy.shape() != last.shape() {
            return Err(Error::Shape {
                layer: self.nodes.len() - 1,
                msg: format!("output gradient {:?} vs output {:?}", dy.shape(), last.shape()),
            });
        }
        let n = self.nodes.len();
        let mut node_grads: Vec<Option<Vec<T>>> = vec![None; n];
        let mut input_grads: Vec<Option<Vec<T>>> = vec![None; trace.inputs.len()];
        node_grads[n - 1] = Some(dy.data().to_vec());
        fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a = *a + b;
                    }
                }
                None => *slot = Some(g),
            }
        }
        for i in (0..n).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &mut self.nodes[i];
            let out = &trace.outputs[i];
            let dy = Tensor::new(out.shape().to_vec(), g).expect("gradient matches output");
            let xs = Self::gather(&node.srcs, &trace.inputs, &trace.outputs);
            let dxs = node.layer.backward(&xs, out, &dy, &trace.caches[i]);
            for (src, dx) in node.srcs.iter().zip(dxs) {
                match *src {
                    Src::Input(j) => accumulate(&mut input_grads[j], dx),
                    Src::Node(j) => accumulate(&mut node_grads[j], dx),
                }
            }
        }
        Ok(input_grads
            .into_iter()
            .zip(&trace.inputs)
            .map(|(g, x)| {
                let data = g.unwrap_or_else(|| vec![T::zero(); x.len()]);
                Tensor::new(x.shape().to_vec(), data).expect("gradient matches input")
            })
            .collect())
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
    }

    /// Fingerprint of the piecewise-linear branch taken by the last training
    /// pass: relu on/off pattern and pooling winners.
    pub fn kink_signature(&self) -> Vec<u64> {
        let Some(trace) = &self.trace else {
            return Vec::new();
        };
        let mut sig = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match (&node.layer, &trace.caches[i]) {
                (Layer::Relu, _) => {
                    let out = trace.outputs[i].data();
                    for chunk in out.chunks(64) {
                        let mut bits = 0u64;
                        for (b, &v) in chunk.iter().enumerate() {
                            if v > T::zero() {
                                bits |= 1 << b;
                            }
                        }
                        sig.push(bits);
                    }
                }
                (_, Cache::Argmax(arg)) => sig.extend(arg.iter().map(|&a| a as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Parameters and moving statistics of every layer, as `f32`.
    pub fn weight_set(&self) -> WeightSet {
        WeightSet {
            layers: self
                .nodes
                .iter()
                .map(|n| n.layer.tensors().into_iter().map(|t| t.cast()).collect())
                .collect(),
        }
    }

    /// Overwrites parameters from `ws`; on mismatch nothing is changed and the
    /// error lists every offending layer.
    pub fn load_weights(&mut self, ws: &WeightSet) -> Result<()> {
        if ws.layers.len() != self.nodes.len() {
            return Err(Error::IncompatibleWeights(format!(
                "weights hold {} layers, model has {}",
                ws.layers.len(),
                self.nodes.len()
            )));
        }
        let mut problems = Vec::new();
        for (i, (node, src)) in self.nodes.iter().zip(&ws.layers).enumerate() {
            let own = node.layer.tensors();
            let ok = own.len() == src.len() && own.iter().zip(src).all(|(a, b)| a.shape() == b.shape());
            if !ok {
                let fmt = |shapes: Vec<&[usize]>| format!("{shapes:?}");
                problems.push(format!(
                    "layer {i} ({}): expected {}, got {}",
                    node.layer.kind(),
                    fmt(own.iter().map(|t| t.shape()).collect()),
                    fmt(src.iter().map(|t| t.shape()).collect()),
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::IncompatibleWeights(problems.join("; ")));
        }
        for (node, src) in self.nodes.iter_mut().zip(&ws.layers) {
            for (dst, s) in node.layer.tensors_mut().into_iter().zip(src) {
                *dst = s.cast();
            }
        }
        Ok(())
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Scalar>(&self) -> LayerStack<U> {
        let mut rng = Rng::new(0);
        let mut b = StackBuilder::<U>::with_inputs(&self.input_shapes.iter().map(|s| s.as_slice()).collect::<Vec<_>>());
        for node in &self.nodes {
            b = b.push_from(node.layer.spec(), &node.srcs, &mut rng);
        }
        let mut out = b.build().expect("same architecture builds");
        out.weight_decay = self.weight_decay;
        for (dst, src) in out.nodes.iter_mut().zip(&self.nodes) {
            for (d, s) in dst.layer.tensors_mut().into_iter().zip(src.layer.tensors()) {
                *d = s.cast();
            }
        }
        out
    }

    /// One line per layer: index, kind, sources, output shape, parameters.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let srcs: Vec<String> = n
                .srcs
                .iter()
                .map(|s| match s {
                    Src::Input(j) => format!("in{j}"),
                    Src::Node(j) => format!("{j}"),
                })
                .collect();
            let _ = writeln!(
                s,
                "{i:>3} {:<10} <- {:<8} {:?} params={}",
                n.layer.kind(),
                srcs.join(","),
                n.out_shape,
                n.layer.trainable_count()
            );
        }
        let _ = writeln!(s, "trainable parameters: {}", self.trainable_param_count());
        s
    }
}

/// Incremental construction with shape inference. The first error is kept
/// and reported by [`StackBuilder::build`] with the offending layer index.
#[derive(Debug)]
pub struct StackBuilder<T> {
    input_shapes: Vec<Vec<usize>>,
    nodes: Vec<Node<T>>,
    cursor: Src,
    weight_decay: f64,
    error: Option<Error>,
}

impl<T: Scalar> StackBuilder<T> {
    pub fn new(input_shape: &[usize]) -> Self {
        Self::with_inputs(&[input_shape])
    }

    pub fn with_inputs(input_shapes: &[&[usize]]) -> Self {
        let error = if input_shapes.is_empty() || input_shapes.iter().any(|s| s.contains(&0)) {
            Some(Error::Shape {
                layer: 0,
                msg: format!("invalid input shapes {input_shapes:?}"),
            })
        } else {
            None
        };
        StackBuilder {
            input_shapes: input_shapes.iter().map(|s| s.to_vec()).collect(),
            nodes: Vec::new(),
            cursor: Src::Input(0),
            weight_decay: 0.0,
            error,
        }
    }

    /// Output of the most recently added layer (or input 0 when empty).
    pub fn cursor(&self) -> Src {
        self.cursor
    }

    /// Makes the next default-sourced layer read from `src`.
    pub fn from(mut self, src: Src) -> Self {
        self.cursor = src;
        self
    }

    pub fn shape_of(&self, src: Src) -> Option<&[usize]> {
        match src {
            Src::Input(i) => self.input_shapes.get(i).map(|s| s.as_slice()),
            Src::Node(i) => self.nodes.get(i).map(|n| n.out_shape.as_slice()),
        }
    }

    /// Shape produced at the cursor.
    pub fn current_shape(&self) -> Option<&[usize]> {
        self.shape_of(self.cursor)
    }

    pub fn weight_decay(mut self, lambda: f64) -> Self {
        self.weight_decay = lambda;
        self
    }

    pub fn push(self, spec: LayerSpec, rng: &mut Rng) -> Self {
        let src = [self.cursor];
        self.push_from(spec, &src, rng)
    }

    pub fn push_from(mut self, spec: LayerSpec, srcs: &[Src], rng: &mut Rng) -> Self {
        if self.error.is_some() {
            return self;
        }
        let index = self.nodes.len();
        let shapes: Option<Vec<&[usize]>> = srcs.iter().map(|&s| self.shape_of(s)).collect();
        let result = match shapes {
            None => Err(format!("unknown source in {srcs:?}")),
            Some(shapes) => Layer::from_spec(&spec, &shapes, rng),
        };
        match result {
            Ok((layer, out_shape)) => {
                self.nodes.push(Node {
                    layer,
                    srcs: srcs.to_vec(),
                    out_shape,
                });
                self.cursor = Src::Node(index);
            }
            Err(msg) => self.error = Some(Error::Shape { layer: index, msg }),
        }
        self
    }

    pub fn conv1d(self, filters: usize, kernel: usize, rng: &mut Rng) -> Self {
        self.push(LayerSpec::Conv1d { filters, kernel }, rng)
    }

    pub fn conv2d(self, filters: usize, kernel: usize, rng: &mut Rng) -> Self {
        self.push(LayerSpec::Conv2d { filters, kernel }, rng)
    }

    pub fn conv_transpose2d(self, filters: usize, kernel: usize, rng: &mut Rng) -> Self {
        self.push(LayerSpec::ConvTranspose2d { filters, kernel }, rng)
    }

    pub fn dense(self, units: usize, rng: &mut Rng) -> Self {
        self.push(LayerSpec::Dense { units }, rng)
    }

    fn push_plain(self, spec: LayerSpec) -> Self {
        // Parameter-free layers never draw from the generator.
        self.push(spec, &mut Rng::new(0))
    }

    pub fn batchnorm(self) -> Self {
        self.push_plain(LayerSpec::BatchNorm)
    }

    pub fn activation(self, a: Activation) -> Self {
        self.push_plain(LayerSpec::Activation(a))
    }

    pub fn relu(self) -> Self {
        self.activation(Activation::Relu)
    }

    pub fn maxpool1d(self, window: usize, stride: usize) -> Self {
        self.push_plain(LayerSpec::MaxPool1d { window, stride })
    }

    pub fn maxpool2d(self, window: usize, stride: usize) -> Self {
        self.push_plain(LayerSpec::MaxPool2d { window, stride })
    }

    pub fn global_avg_pool(self) -> Self {
        self.push_plain(LayerSpec::GlobalAvgPool)
    }

    pub fn dropout(self, rate: f64) -> Self {
        self.push_plain(LayerSpec::Dropout { rate })
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        self.push_plain(LayerSpec::Reshape(shape.to_vec()))
    }

    /// Channel-wise (last axis) concatenation of `srcs`.
    pub fn concat(self, srcs: &[Src]) -> Self {
        self.push_from(LayerSpec::Concat, srcs, &mut Rng::new(0))
    }

    pub fn build(self) -> Result<LayerStack<T>> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.nodes.is_empty() {
            return Err(Error::Shape {
                layer: 0,
                msg: "a stack needs at least one layer".into(),
            });
        }
        Ok(LayerStack {
            input_shapes: self.input_shapes,
            nodes: self.nodes,
            weight_decay: self.weight_decay,
            trace: None,
        })
    }
}
