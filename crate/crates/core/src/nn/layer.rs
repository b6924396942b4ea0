use super::kernels::{self, ConvGeom, PoolGeom};
use super::tensor::{Scalar, Tensor};
use crate::rng::Rng;

pub const BATCHNORM_MOMENTUM: f64 = 0.99;
pub const BATCHNORM_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor and its gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Subject to L2 weight decay (kernels, not biases or scales).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, decay }
    }

    fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.uniform_in(-limit, limit))).collect();
        Param::new(Tensor::new(shape.to_vec(), data).expect("valid shape"), true)
    }

    fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape), false)
    }

    fn ones(shape: &[usize]) -> Self {
        Param::new(Tensor::full(shape, T::one()), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
}

/// Hyperparameters of a layer; the builder turns these into a [`Layer`]
/// once the input shape is known.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv1d { filters: usize, kernel: usize },
    Conv2d { filters: usize, kernel: usize },
    ConvTranspose2d { filters: usize, kernel: usize },
    Dense { units: usize },
    BatchNorm,
    Activation(Activation),
    MaxPool1d { window: usize, stride: usize },
    MaxPool2d { window: usize, stride: usize },
    GlobalAvgPool,
    Dropout { rate: f64 },
    Reshape(Vec<usize>),
    Concat,
}

#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub window: usize,
    pub stride: usize,
}

/// A layer with its parameters and mutable state.
///
/// Per-sample shapes (batch axis excluded):
/// conv1d `[t, c]`, conv2d/tconv2d/maxpool2d `[h, w, c]`, dense `[d]`.
/// Convolution kernels are `[k, cin, cout]` (1D), `[k, k, cin, cout]` (2D) and
/// `[k, k, cout, cin]` (transposed).
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv1d(Conv<T>),
    Conv2d(Conv<T>),
    ConvTranspose2d(Conv<T>),
    Dense(Dense<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    Sigmoid,
    Softmax,
    MaxPool1d(Pool),
    MaxPool2d(Pool),
    GlobalAvgPool,
    Dropout { rate: f64 },
    Reshape(Vec<usize>),
    Concat,
}

/// Per-layer values saved by a training forward pass.
#[derive(Debug, Clone, Default)]
pub(crate) enum Cache<T> {
    #[default]
    Empty,
    Norm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Argmax(Vec<u32>),
    Mask(Vec<T>),
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Conv2d(_) => "conv2d",
            Layer::ConvTranspose2d(_) => "tconv2d",
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::GlobalAvgPool => "gap",
            Layer::Dropout { .. } => "dropout",
            Layer::Reshape(_) => "reshape",
            Layer::Concat => "concat",
        }
    }

    /// Hyperparameters that rebuild this layer (with fresh weights).
    pub fn spec(&self) -> LayerSpec {
        let filters = |c: &Conv<T>, axis: usize| c.kernel.value.shape()[axis];
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                filters: filters(c, 2),
                kernel: c.size,
            },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                filters: filters(c, 3),
                kernel: c.size,
            },
            Layer::ConvTranspose2d(c) => LayerSpec::ConvTranspose2d {
                filters: filters(c, 2),
                kernel: c.size,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                units: d.weight.value.shape()[1],
            },
            Layer::BatchNorm(_) => LayerSpec::BatchNorm,
            Layer::Relu => LayerSpec::Activation(Activation::Relu),
            Layer::Sigmoid => LayerSpec::Activation(Activation::Sigmoid),
            Layer::Softmax => LayerSpec::Activation(Activation::Softmax),
            Layer::MaxPool1d(p) => LayerSpec::MaxPool1d {
                window: p.window,
                stride: p.stride,
            },
            Layer::MaxPool2d(p) => LayerSpec::MaxPool2d {
                window: p.window,
                stride: p.stride,
            },
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Reshape(s) => LayerSpec::Reshape(s.clone()),
            Layer::Concat => LayerSpec::Concat,
        }
    }

    /// Instantiates `spec` for the given per-sample input shapes, returning
    /// the layer and its per-sample output shape.
    pub fn from_spec(
        spec: &LayerSpec,
        inputs: &[&[usize]],
        rng: &mut Rng,
    ) -> std::result::Result<(Self, Vec<usize>), String> {
        let one = || -> std::result::Result<&[usize], String> {
            match inputs {
                [s] => Ok(*s),
                _ => Err(format!("expects one input, got {}", inputs.len())),
            }
        };
        let layer = match spec {
            LayerSpec::Conv1d { filters, kernel } => {
                let s = one()?;
                let [_, cin] = s else {
                    return Err(format!("conv1d needs [t, c] input, got {}", shape_str(s)));
                };
                Layer::Conv1d(Conv {
                    kernel: Param::glorot(&[*kernel, *cin, *filters], kernel * cin, kernel * filters, rng),
                    bias: Param::zeros(&[*filters]),
                    size: *kernel,
                })
            }
            LayerSpec::Conv2d { filters, kernel } => {
                let s = one()?;
                let [_, _, cin] = s else {
                    return Err(format!("conv2d needs [h, w, c] input, got {}", shape_str(s)));
                };
                let area = kernel * kernel;
                Layer::Conv2d(Conv {
                    kernel: Param::glorot(&[*kernel, *kernel, *cin, *filters], area * cin, area * filters, rng),
                    bias: Param::zeros(&[*filters]),
                    size: *kernel,
                })
            }
            LayerSpec::ConvTranspose2d { filters, kernel } => {
                let s = one()?;
                let [_, _, cin] = s else {
                    return Err(format!("tconv2d needs [h, w, c] input, got {}", shape_str(s)));
                };
                let area = kernel * kernel;
                Layer::ConvTranspose2d(Conv {
                    kernel: Param::glorot(&[*kernel, *kernel, *filters, *cin], area * cin, area * filters, rng),
                    bias: Param::zeros(&[*filters]),
                    size: *kernel,
                })
            }
            LayerSpec::Dense { units } => {
                let s = one()?;
                let [d] = s else {
                    return Err(format!("dense needs a flat input, got {}", shape_str(s)));
                };
                Layer::Dense(Dense {
                    weight: Param::glorot(&[*d, *units], *d, *units, rng),
                    bias: Param::zeros(&[*units]),
                })
            }
            LayerSpec::BatchNorm => {
                let s = one()?;
                let c = *s.last().ok_or("batchnorm needs a non-scalar input")?;
                Layer::BatchNorm(BatchNorm {
                    gamma: Param::ones(&[c]),
                    beta: Param::zeros(&[c]),
                    moving_mean: Tensor::zeros(&[c]),
                    moving_var: Tensor::full(&[c], T::one()),
                })
            }
            LayerSpec::Activation(Activation::Relu) => Layer::Relu,
            LayerSpec::Activation(Activation::Sigmoid) => Layer::Sigmoid,
            LayerSpec::Activation(Activation::Softmax) => Layer::Softmax,
            LayerSpec::MaxPool1d { window, stride } => Layer::MaxPool1d(Pool {
                window: *window,
                stride: *stride,
            }),
            LayerSpec::MaxPool2d { window, stride } => Layer::MaxPool2d(Pool {
                window: *window,
                stride: *stride,
            }),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Layer::Dropout { rate: *rate }
            }
            LayerSpec::Reshape(shape) => Layer::Reshape(shape.clone()),
            LayerSpec::Concat => Layer::Concat,
        };
        let out = layer.output_shape(inputs)?;
        Ok((layer, out))
    }

    /// Shape rule of the layer on per-sample shapes.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> std::result::Result<Vec<usize>, String> {
        if !matches!(self, Layer::Concat) && inputs.len() != 1 {
            return Err(format!("{} expects one input, got {}", self.kind(), inputs.len()));
        }
        let s = inputs.first().copied().unwrap_or(&[]);
        let check_channels = |p: &Param<T>, axis: usize, cin: usize| {
            let k = p.value.shape()[axis];
            if k == cin {
                Ok(())
            } else {
                Err(format!("kernel expects {k} input channels, input has {cin}"))
            }
        };
        match self {
            Layer::Conv1d(c) => match s {
                [t, cin] => {
                    check_channels(&c.kernel, 1, *cin)?;
                    Ok(vec![*t, c.kernel.value.shape()[2]])
                }
                _ => Err(format!("conv1d needs [t, c], got {}", shape_str(s))),
            },
            Layer::Conv2d(c) => match s {
                [h, w, cin] => {
                    check_channels(&c.kernel, 2, *cin)?;
                    Ok(vec![*h, *w, c.kernel.value.shape()[3]])
                }
                _ => Err(format!("conv2d needs [h, w, c], got {}", shape_str(s))),
            },
            Layer::ConvTranspose2d(c) => match s {
                [h, w, cin] => {
                    check_channels(&c.kernel, 3, *cin)?;
                    Ok(vec![*h, *w, c.kernel.value.shape()[2]])
                }
                _ => Err(format!("tconv2d needs [h, w, c], got {}", shape_str(s))),
            },
            Layer::Dense(d) => match s {
                [n] if *n == d.weight.value.shape()[0] => Ok(vec![d.weight.value.shape()[1]]),
                _ => Err(format!(
                    "dense expects [{}], got {}",
                    d.weight.value.shape()[0],
                    shape_str(s)
                )),
            },
            Layer::BatchNorm(b) => {
                if s.last() == Some(&b.gamma.value.len()) {
                    Ok(s.to_vec())
                } else {
                    Err(format!(
                        "batchnorm over {} channels got {}",
                        b.gamma.value.len(),
                        shape_str(s)
                    ))
                }
            }
            Layer::Relu | Layer::Sigmoid | Layer::Dropout { .. } => Ok(s.to_vec()),
            Layer::Softmax => {
                if s.is_empty() {
                    Err("softmax needs at least one axis".into())
                } else {
                    Ok(s.to_vec())
                }
            }
            Layer::MaxPool1d(p) => match s {
                [t, c] if p.window > 0 && p.stride > 0 => {
                    Ok(vec![kernels::same_out(*t, p.stride), *c])
                }
                _ => Err(format!("maxpool1d needs [t, c], got {}", shape_str(s))),
            },
            Layer::MaxPool2d(p) => match s {
                [h, w, c] if p.window > 0 && p.stride > 0 => Ok(vec![
                    kernels::same_out(*h, p.stride),
                    kernels::same_out(*w, p.stride),
                    *c,
                ]),
                _ => Err(format!("maxpool2d needs [h, w, c], got {}", shape_str(s))),
            },
            Layer::GlobalAvgPool => match s {
                [_, c] | [_, _, c] => Ok(vec![*c]),
                _ => Err(format!("gap needs a spatial input, got {}", shape_str(s))),
            },
            Layer::Reshape(target) => {
                let a: usize = s.iter().product();
                let b: usize = target.iter().product();
                if a == b {
                    Ok(target.clone())
                } else {
                    Err(format!("cannot reshape {} into {}", shape_str(s), shape_str(target)))
                }
            }
            Layer::Concat => {
                let first = inputs.first().ok_or("concat needs inputs")?;
                let lead = &first[..first.len().saturating_sub(1)];
                let mut last = 0;
                for s in inputs {
                    if s.is_empty() || &s[..s.len() - 1] != lead {
                        return Err(format!("concat inputs disagree: {inputs:?}"));
                    }
                    last += s[s.len() - 1];
                }
                let mut out = lead.to_vec();
                out.push(last);
                Ok(out)
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv1d(c) | Layer::Conv2d(c) | Layer::ConvTranspose2d(c) => vec![&c.kernel, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv1d(c) | Layer::Conv2d(c) | Layer::ConvTranspose2d(c) => {
                vec![&mut c.kernel, &mut c.bias]
            }
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => vec![],
        }
    }

    /// Parameters followed by non-trainable state, in serialization order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.params().into_iter().map(|p| &p.value).collect();
        if let Layer::BatchNorm(b) = self {
            out.push(&b.moving_mean);
            out.push(&b.moving_var);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv1d(c) | Layer::Conv2d(c) | Layer::ConvTranspose2d(c) => {
                vec![&mut c.kernel.value, &mut c.bias.value]
            }
            Layer::Dense(d) => vec![&mut d.weight.value, &mut d.bias.value],
            Layer::BatchNorm(b) => vec![
                &mut b.gamma.value,
                &mut b.beta.value,
                &mut b.moving_mean,
                &mut b.moving_var,
            ],
            _ => vec![],
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn forward(
        &self,
        inputs: &[&Tensor<T>],
        out_shape: &[usize],
        mode: Mode,
        rng: &mut Rng,
        cache: &mut Cache<T>,
    ) -> Tensor<T> {
        let x = inputs[0];
        let batch = x.batch();
        let mut shape = vec![batch];
        shape.extend_from_slice(out_shape);
        let data = match self {
            Layer::Conv1d(c) | Layer::Conv2d(c) => {
                let g = conv_geom(x.shape(), c, false);
                kernels::correlate_forward(x.data(), batch, &g, c.kernel.value.data(), c.bias.value.data())
            }
            Layer::ConvTranspose2d(c) => {
                let g = conv_geom(x.shape(), c, true);
                let flipped = flip_transposed(c.kernel.value.data(), c.size, g.cout, g.cin);
                kernels::correlate_forward(x.data(), batch, &g, &flipped, c.bias.value.data())
            }
            Layer::Dense(d) => {
                let (n_in, n_out) = (d.weight.value.shape()[0], d.weight.value.shape()[1]);
                let mut y = Vec::with_capacity(batch * n_out);
                for _ in 0..batch {
                    y.extend_from_slice(d.bias.value.data());
                }
                T::gemm(
                    batch,
                    n_in,
                    n_out,
                    T::one(),
                    x.data(),
                    n_in as isize,
                    1,
                    d.weight.value.data(),
                    n_out as isize,
                    1,
                    T::one(),
                    &mut y,
                    n_out as isize,
                    1,
                );
                y
            }
            Layer::BatchNorm(b) => batchnorm_forward(b, x.data(), mode, cache),
            Layer::Relu => x.data().iter().map(|&v| v.max(T::zero())).collect(),
            Layer::Sigmoid => x
                .data()
                .iter()
                .map(|&v| T::one() / (T::one() + (-v).exp()))
                .collect(),
            Layer::Softmax => {
                let c = *out_shape.last().unwrap();
                let mut y = x.data().to_vec();
                for row in y.chunks_exact_mut(c) {
                    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                    let mut sum = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        sum = sum + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / sum;
                    }
                }
                y
            }
            Layer::MaxPool1d(p) | Layer::MaxPool2d(p) => {
                let g = pool_geom(x.shape(), p);
                let (y, arg) = kernels::max_pool_forward(x.data(), batch, &g);
                if mode == Mode::Train {
                    *cache = Cache::Argmax(arg);
                }
                y
            }
            Layer::GlobalAvgPool => {
                let c = *x.shape().last().unwrap();
                let per = x.sample_len() / c;
                let scale = T::from_f64(1.0 / per as f64);
                let mut y = vec![T::zero(); batch * c];
                for (b, sample) in x.data().chunks_exact(per * c).enumerate() {
                    let acc = &mut y[b * c..(b + 1) * c];
                    for px in sample.chunks_exact(c) {
                        for (a, &v) in acc.iter_mut().zip(px) {
                            *a = *a + v;
                        }
                    }
                    for a in acc.iter_mut() {
                        *a = *a * scale;
                    }
                }
                y
            }
            Layer::Dropout { rate } => {
                if mode == Mode::Infer || *rate == 0.0 {
                    if mode == Mode::Train {
                        *cache = Cache::Mask(vec![T::one(); x.len()]);
                    }
                    x.data().to_vec()
                } else {
                    let keep = T::from_f64(1.0 / (1.0 - *rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.uniform() < *rate { T::zero() } else { keep })
                        .collect();
                    let y = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                    *cache = Cache::Mask(mask);
                    y
                }
            }
            Layer::Reshape(_) => x.data().to_vec(),
            Layer::Concat => {
                let widths: Vec<usize> = inputs.iter().map(|t| *t.shape().last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = x.len() / widths[0];
                let mut y = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (t, &w) in inputs.iter().zip(&widths) {
                        y.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                    }
                }
                y
            }
        };
        Tensor::new(shape, data).expect("layer output matches declared shape")
    }

    /// Folds batch statistics from a training pass into the moving averages.
    pub(crate) fn commit(&mut self, cache: &Cache<T>) {
        if let (Layer::BatchNorm(b), Cache::Norm { mean, var, .. }) = (self, cache) {
            let m = BATCHNORM_MOMENTUM;
            for (mm, &v) in b.moving_mean.data_mut().iter_mut().zip(mean) {
                *mm = T::from_f64(mm.as_f64() * m + v * (1.0 - m));
            }
            for (mv, &v) in b.moving_var.data_mut().iter_mut().zip(var) {
                *mv = T::from_f64(mv.as_f64() * m + v * (1.0 - m));
            }
        }
    }

    /// Input gradients; parameter gradients are accumulated into the params.
    pub(crate) fn backward(
        &mut self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        dy: &Tensor<T>,
        cache: &Cache<T>,
    ) -> Vec<Vec<T>> {
        let x = inputs[0];
        let batch = x.batch();
        let dyd = dy.data();
        match self {
            Layer::Conv1d(c) | Layer::Conv2d(c) => {
                let g = conv_geom(x.shape(), c, false);
                let Conv { kernel, bias, .. } = c;
                vec![kernels::correlate_backward(
                    x.data(),
                    dyd,
                    batch,
                    &g,
                    kernel.value.data(),
                    kernel.grad.data_mut(),
                    bias.grad.data_mut(),
                )]
            }
            Layer::ConvTranspose2d(c) => {
                let g = conv_geom(x.shape(), c, true);
                let flipped = flip_transposed(c.kernel.value.data(), c.size, g.cout, g.cin);
                let mut dflipped = vec![T::zero(); flipped.len()];
                let dx = kernels::correlate_backward(
                    x.data(),
                    dyd,
                    batch,
                    &g,
                    &flipped,
                    &mut dflipped,
                    c.bias.grad.data_mut(),
                );
                let back = unflip_transposed(&dflipped, c.size, g.cout, g.cin);
                for (gk, d) in c.kernel.grad.data_mut().iter_mut().zip(back) {
                    *gk = *gk + d;
                }
                vec![dx]
            }
            Layer::Dense(d) => {
                let (n_in, n_out) = (d.weight.value.shape()[0], d.weight.value.shape()[1]);
                // dW += x^T dy
                T::gemm(
                    n_in,
                    batch,
                    n_out,
                    T::one(),
                    x.data(),
                    1,
                    n_in as isize,
                    dyd,
                    n_out as isize,
                    1,
                    T::one(),
                    d.weight.grad.data_mut(),
                    n_out as isize,
                    1,
                );
                let db = d.bias.grad.data_mut();
                for row in dyd.chunks_exact(n_out) {
                    for (g, &v) in db.iter_mut().zip(row) {
                        *g = *g + v;
                    }
                }
                let mut dx = vec![T::zero(); batch * n_in];
                T::gemm(
                    batch,
                    n_out,
                    n_in,
                    T::one(),
                    dyd,
                    n_out as isize,
                    1,
                    d.weight.value.data(),
                    1,
                    n_out as isize,
                    T::zero(),
                    &mut dx,
                    n_in as isize,
                    1,
                );
                vec![dx]
            }
            Layer::BatchNorm(b) => vec![batchnorm_backward(b, dyd, cache)],
            Layer::Relu => vec![output
                .data()
                .iter()
                .zip(dyd)
                .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                .collect()],
            Layer::Sigmoid => vec![output
                .data()
                .iter()
                .zip(dyd)
                .map(|(&y, &g)| g * y * (T::one() - y))
                .collect()],
            Layer::Softmax => {
                let c = *output.shape().last().unwrap();
                let mut dx = Vec::with_capacity(output.len());
                for (yr, gr) in output.data().chunks_exact(c).zip(dyd.chunks_exact(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
                }
                vec![dx]
            }
            Layer::MaxPool1d(_) | Layer::MaxPool2d(_) => {
                let Cache::Argmax(arg) = cache else {
                    unreachable!("pool backward without argmax cache")
                };
                let mut dx = vec![T::zero(); x.len()];
                for (&i, &g) in arg.iter().zip(dyd) {
                    dx[i as usize] = dx[i as usize] + g;
                }
                vec![dx]
            }
            Layer::GlobalAvgPool => {
                let c = *x.shape().last().unwrap();
                let per = x.sample_len() / c;
                let scale = T::from_f64(1.0 / per as f64);
                let mut dx = Vec::with_capacity(x.len());
                for b in 0..batch {
                    let g = &dyd[b * c..(b + 1) * c];
                    for _ in 0..per {
                        dx.extend(g.iter().map(|&v| v * scale));
                    }
                }
                vec![dx]
            }
            Layer::Dropout { .. } => {
                let Cache::Mask(mask) = cache else {
                    unreachable!("dropout backward without mask")
                };
                vec![dyd.iter().zip(mask).map(|(&g, &m)| g * m).collect()]
            }
            Layer::Reshape(_) => vec![dyd.to_vec()],
            Layer::Concat => {
                let widths: Vec<usize> = inputs.iter().map(|t| *t.shape().last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let mut grads: Vec<Vec<T>> = inputs.iter().map(|t| Vec::with_capacity(t.len())).collect();
                for row in dyd.chunks_exact(total) {
                    let mut off = 0;
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        g.extend_from_slice(&row[off..off + w]);
                        off += w;
                    }
                }
                grads
            }
        }
    }
}

fn conv_geom<T: Scalar>(x_shape: &[usize], c: &Conv<T>, transposed: bool) -> ConvGeom {
    let k = c.size;
    let ks = c.kernel.value.shape();
    // Keras "same": floor((k-1)/2) leading pad. The transposed layer crops its
    // full output by the same amount, i.e. correlates with ceil((k-1)/2) lead.
    let lead = if transposed { k - 1 - (k - 1) / 2 } else { (k - 1) / 2 };
    match x_shape {
        [_, t, cin] => ConvGeom {
            h: 1,
            w: *t,
            cin: *cin,
            cout: ks[2],
            kh: 1,
            kw: k,
            ph: 0,
            pw: lead,
        },
        [_, h, w, cin] => ConvGeom {
            h: *h,
            w: *w,
            cin: *cin,
            cout: if transposed { ks[2] } else { ks[3] },
            kh: k,
            kw: k,
            ph: lead,
            pw: lead,
        },
        _ => unreachable!("conv input rank checked at build time"),
    }
}

fn pool_geom(x_shape: &[usize], p: &Pool) -> PoolGeom {
    match x_shape {
        [_, t, c] => PoolGeom {
            h: 1,
            w: *t,
            c: *c,
            wh: 1,
            ww: p.window,
            sh: 1,
            sw: p.stride,
        },
        [_, h, w, c] => PoolGeom {
            h: *h,
            w: *w,
            c: *c,
            wh: p.window,
            ww: p.window,
            sh: p.stride,
            sw: p.stride,
        },
        _ => unreachable!("pool input rank checked at build time"),
    }
}

/// `[k, k, cout, cin]` transposed kernel -> `[k, k, cin, cout]` correlation
/// kernel rotated by 180 degrees.
fn flip_transposed<T: Scalar>(kernel: &[T], k: usize, cout: usize, cin: usize) -> Vec<T> {
    let mut out = vec![T::zero(); kernel.len()];
    for u in 0..k {
        for v in 0..k {
            for co in 0..cout {
                for ci in 0..cin {
                    let src = ((u * k + v) * cout + co) * cin + ci;
                    let dst = (((k - 1 - u) * k + (k - 1 - v)) * cin + ci) * cout + co;
                    out[dst] = kernel[src];
                }
            }
        }
    }
    out
}

fn unflip_transposed<T: Scalar>(flipped: &[T], k: usize, cout: usize, cin: usize) -> Vec<T> {
    let mut out = vec![T::zero(); flipped.len()];
    for u in 0..k {
        for v in 0..k {
            for co in 0..cout {
                for ci in 0..cin {
                    let dst = ((u * k + v) * cout + co) * cin + ci;
                    let src = (((k - 1 - u) * k + (k - 1 - v)) * cin + ci) * cout + co;
                    out[dst] = flipped[src];
                }
            }
        }
    }
    out
}

fn batchnorm_forward<T: Scalar>(b: &BatchNorm<T>, x: &[T], mode: Mode, cache: &mut Cache<T>) -> Vec<T> {
    let c = b.gamma.value.len();
    let rows = x.len() / c;
    let eps = BATCHNORM_EPS;
    let gamma = b.gamma.value.data();
    let beta = b.beta.value.data();
    match mode {
        Mode::Infer => {
            let scale: Vec<T> = (0..c)
                .map(|j| gamma[j] / T::from_f64((b.moving_var.data()[j].as_f64() + eps).sqrt()))
                .collect();
            let mm = b.moving_mean.data();
            let mut y = Vec::with_capacity(x.len());
            for row in x.chunks_exact(c) {
                y.extend((0..c).map(|j| (row[j] - mm[j]) * scale[j] + beta[j]));
            }
            y
        }
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j].as_f64() - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
            let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
            let mut xhat = Vec::with_capacity(x.len());
            let mut y = Vec::with_capacity(x.len());
            for row in x.chunks_exact(c) {
                for j in 0..c {
                    let h = (row[j] - mean_t[j]) * inv_std[j];
                    xhat.push(h);
                    y.push(gamma[j] * h + beta[j]);
                }
            }
            *cache = Cache::Norm {
                xhat,
                inv_std,
                mean,
                var,
            };
            y
        }
    }
}

fn batchnorm_backward<T: Scalar>(b: &mut BatchNorm<T>, dy: &[T], cache: &Cache<T>) -> Vec<T> {
    let Cache::Norm { xhat, inv_std, .. } = cache else {
        unreachable!("batchnorm backward without cache")
    };
    let c = b.gamma.value.len();
    let rows = dy.len() / c;
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (gr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            sum_dy[j] = sum_dy[j] + gr[j];
            sum_dy_xhat[j] = sum_dy_xhat[j] + gr[j] * hr[j];
        }
    }
    for j in 0..c {
        b.gamma.grad.data_mut()[j] = b.gamma.grad.data()[j] + sum_dy_xhat[j];
        b.beta.grad.data_mut()[j] = b.beta.grad.data()[j] + sum_dy[j];
    }
    let gamma = b.gamma.value.data();
    let n = T::from_f64(rows as f64);
    let mut dx = Vec::with_capacity(dy.len());
    for (gr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            let scale = gamma[j] * inv_std[j] / n;
            dx.push(scale * (n * gr[j] - sum_dy[j] - hr[j] * sum_dy_xhat[j]));
        }
    }
    dx
}
