//! Trained-model directories: architecture metadata, weights and the
//! preprocessing fitted on the training split.
//!
//! ```text
//! meta.txt    key=value architecture record
//! model.twt   weights (TWT1)
//! stats.csv   per-(step, channel) mean,std for signal inputs
//! pca.csv     fusion PCA: mean row, then one variance,basis... row per component
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use topopi_core::codec::{decode_weights, encode_weights};
use topopi_core::data::{
    pipeline, standardize_signals, statistical_features, DatasetBundle, InputKind, Pca, Standardization,
    FEATURE_COUNT,
};
use topopi_core::models::{
    build_cnn1d, build_dense_classifier, build_image_surrogate, build_mlp, build_signal_surrogate, DenseNetConfig,
    FusionHead, ImageSurrogateConfig, Schedule, SignalSurrogateConfig, FUSION_DIM,
};
use topopi_core::nn::{one_hot, LayerStack, LossKind, Tensor};
use topopi_core::pimage::GRID;
use topopi_core::{default_spec, DatasetTag, PersistenceImageSpec, Rng};

use crate::config::{parse_shape, RunConfig};
use crate::error::{data, usage, CliResult};

pub const PREDICT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SignalSurrogate,
    ImageSurrogate,
    Cnn1d,
    /// 1D CNN with a PCA of persistence images concatenated after pooling.
    Cnn1dFused,
    /// MLP on the 19 statistical features.
    MlpFeatures,
    /// MLP on vectorised persistence images.
    MlpPi,
    DenseNet,
    /// Dense classifier with a persistence-image conv branch.
    DenseNetFused,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::SignalSurrogate,
        ModelKind::ImageSurrogate,
        ModelKind::Cnn1d,
        ModelKind::Cnn1dFused,
        ModelKind::MlpFeatures,
        ModelKind::MlpPi,
        ModelKind::DenseNet,
        ModelKind::DenseNetFused,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::SignalSurrogate => "signal-surrogate",
            ModelKind::ImageSurrogate => "image-surrogate",
            ModelKind::Cnn1d => "cnn1d",
            ModelKind::Cnn1dFused => "cnn1d-fused",
            ModelKind::MlpFeatures => "mlp-sf",
            ModelKind::MlpPi => "mlp-pi",
            ModelKind::DenseNet => "densenet",
            ModelKind::DenseNetFused => "densenet-fused",
        }
    }

    pub fn parse(tag: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|k| k.tag()).collect();
                usage(format!("unknown model {tag:?} (expected one of {})", known.join(", ")))
            })
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            ModelKind::ImageSurrogate | ModelKind::DenseNet | ModelKind::DenseNetFused => InputKind::Image,
            _ => InputKind::Signal,
        }
    }

    pub fn is_surrogate(self) -> bool {
        matches!(self, ModelKind::SignalSurrogate | ModelKind::ImageSurrogate)
    }

    /// Whether the model consumes persistence images (analytic or from a
    /// surrogate).
    pub fn uses_pis(self) -> bool {
        matches!(self, ModelKind::Cnn1dFused | ModelKind::MlpPi | ModelKind::DenseNetFused)
    }

    pub fn standardizes(self) -> bool {
        matches!(self, ModelKind::SignalSurrogate | ModelKind::Cnn1d | ModelKind::Cnn1dFused)
    }

    pub fn default_loss(self) -> LossKind {
        match self {
            ModelKind::SignalSurrogate => LossKind::Mse,
            ModelKind::ImageSurrogate => LossKind::Bce,
            _ => LossKind::Cce,
        }
    }

    pub fn default_schedule(self) -> Schedule {
        match self {
            ModelKind::SignalSurrogate => Schedule::signal_desk(),
            ModelKind::ImageSurrogate => Schedule::image_desk(),
            _ => Schedule::classifier_desk(),
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub sample_shape: Vec<usize>,
    /// 0 for surrogates.
    pub classes: usize,
    pub widths: [usize; 4],
    pub filters: usize,
    pub spec: DatasetTag,
    pub loss: LossKind,
    /// Surrogate model directory producing persistence images; analytic
    /// images when absent.
    pub aux: Option<PathBuf>,
}

impl ModelMeta {
    /// Architecture from a run config and the training data's shape/labels.
    pub fn from_config(cfg: &RunConfig, train: &DatasetBundle) -> CliResult<Self> {
        let kind = ModelKind::parse(cfg.require("model")?)?;
        if train.kind != kind.input_kind() {
            return Err(usage(format!("{} needs {:?} inputs", kind.tag(), kind.input_kind())));
        }
        let widths = match cfg.list::<usize>("widths")? {
            None => SignalSurrogateConfig::default().widths,
            Some(w) => w
                .try_into()
                .map_err(|w: Vec<usize>| usage(format!("widths needs 4 values, got {}", w.len())))?,
        };
        let filters = cfg.parse_or("filters", ImageSurrogateConfig::default().filters)?;
        let spec = match cfg.get("spec") {
            Some(s) => DatasetTag::parse(s).map_err(|e| usage(e.to_string()))?,
            None if kind.input_kind() == InputKind::Signal => DatasetTag::Signal,
            None => DatasetTag::Cifar,
        };
        let loss = match cfg.get("loss") {
            Some(s) => LossKind::parse(s).map_err(|e| usage(e.to_string()))?,
            None => kind.default_loss(),
        };
        let classes = if kind.is_surrogate() {
            0
        } else {
            let c = train.class_count();
            if c < 2 {
                return Err(data("classifiers need labels covering at least two classes"));
            }
            c
        };
        let aux = if kind.uses_pis() { cfg.optional_existing_path("aux_weights")? } else { None };
        Ok(ModelMeta {
            kind,
            sample_shape: train.sample_shape().to_vec(),
            classes,
            widths,
            filters,
            spec,
            loss,
            aux,
        })
    }

    pub fn pi_spec(&self) -> PersistenceImageSpec {
        default_spec(self.spec)
    }

    fn channels(&self) -> usize {
        *self.sample_shape.last().unwrap()
    }

    pub fn to_text(&self) -> String {
        let shape: Vec<String> = self.sample_shape.iter().map(ToString::to_string).collect();
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.kind.tag());
        let _ = writeln!(s, "shape={}", shape.join("x"));
        let _ = writeln!(s, "classes={}", self.classes);
        let _ = writeln!(s, "widths={}", widths.join(","));
        let _ = writeln!(s, "filters={}", self.filters);
        let _ = writeln!(s, "spec={}", self.spec.name());
        let _ = writeln!(s, "loss={}", self.loss.name());
        let aux = self.aux.as_ref().map_or("analytic".to_string(), |p| p.display().to_string());
        let _ = writeln!(s, "aux={aux}");
        s
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let get = |key: &str| {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| data(format!("model metadata is missing {key:?}")))
        };
        let bad = |key: &str| data(format!("model metadata has a bad {key:?}"));
        let widths: Vec<usize> = get("widths")?
            .split(',')
            .map(|v| v.parse().map_err(|_| bad("widths")))
            .collect::<CliResult<_>>()?;
        Ok(ModelMeta {
            kind: ModelKind::parse(get("model")?).map_err(|_| bad("model"))?,
            sample_shape: parse_shape(get("shape")?).map_err(|_| bad("shape"))?,
            classes: get("classes")?.parse().map_err(|_| bad("classes"))?,
            widths: widths.try_into().map_err(|_| bad("widths"))?,
            filters: get("filters")?.parse().map_err(|_| bad("filters"))?,
            spec: DatasetTag::parse(get("spec")?).map_err(|_| bad("spec"))?,
            loss: LossKind::parse(get("loss")?).map_err(|_| bad("loss"))?,
            aux: match get("aux")? {
                "analytic" => None,
                p => Some(PathBuf::from(p)),
            },
        })
    }
}

/// A network with its preprocessing.
#[derive(Debug, Clone)]
pub struct Model {
    pub meta: ModelMeta,
    pub stack: LayerStack<f32>,
    pub stats: Option<Standardization>,
    pub pca: Option<Pca>,
    aux: Option<Box<Model>>,
}

impl Model {
    /// Fits preprocessing on `train` and builds freshly initialised weights.
    pub fn fit(meta: ModelMeta, train: &DatasetBundle, rng: &mut Rng) -> CliResult<Self> {
        let aux = load_aux(&meta)?;
        let stats = if meta.kind.standardizes() { Some(standardize_signals(train, train)?.2) } else { None };
        let pca = if meta.kind == ModelKind::Cnn1dFused {
            let pis = pis_for(&meta, aux.as_deref(), train)?;
            let rows: Vec<Vec<f64>> = (0..pis.batch())
                .map(|i| pis.sample(i).iter().map(|&v| v as f64).collect())
                .collect();
            Some(Pca::fit(&rows, FUSION_DIM)?)
        } else {
            None
        };
        let stack = build_stack(&meta, pca.as_ref(), rng)?;
        Ok(Model { meta, stack, stats, pca, aux })
    }

    fn check(&self, raw: &DatasetBundle) -> CliResult<()> {
        if raw.kind != self.meta.kind.input_kind() || raw.sample_shape() != self.meta.sample_shape.as_slice() {
            return Err(data(format!(
                "{} expects {:?} samples of shape {:?}, got {:?} of {:?}",
                self.meta.kind.tag(),
                self.meta.kind.input_kind(),
                self.meta.sample_shape,
                raw.kind,
                raw.sample_shape()
            )));
        }
        Ok(())
    }

    /// Persistence images of `raw`: from the auxiliary surrogate when one is
    /// attached, otherwise analytic.
    pub fn pis(&self, raw: &DatasetBundle) -> CliResult<Tensor<f32>> {
        pis_for(&self.meta, self.aux.as_deref(), raw)
    }

    /// Network inputs for `raw` samples.
    pub fn inputs(&self, raw: &DatasetBundle) -> CliResult<Vec<Tensor<f32>>> {
        self.check(raw)?;
        let standardized = || -> CliResult<Tensor<f32>> {
            let stats = self.stats.as_ref().ok_or_else(|| data("model is missing its standardization"))?;
            Ok(stats.apply(&raw.inputs)?)
        };
        Ok(match self.meta.kind {
            ModelKind::SignalSurrogate | ModelKind::Cnn1d => vec![standardized()?],
            ModelKind::Cnn1dFused => {
                let pca = self.pca.as_ref().ok_or_else(|| data("fused 1D CNN needs its PCA"))?;
                let pis = self.pis(raw)?;
                let mut z = Vec::with_capacity(pis.batch() * FUSION_DIM);
                for i in 0..pis.batch() {
                    let row: Vec<f64> = pis.sample(i).iter().map(|&v| v as f64).collect();
                    z.extend(pca.project(&row)?.into_iter().map(|v| v as f32));
                }
                vec![standardized()?, Tensor::new(vec![pis.batch(), FUSION_DIM], z)?]
            }
            ModelKind::MlpFeatures => {
                let mut f = Vec::with_capacity(raw.len() * FEATURE_COUNT);
                for i in 0..raw.len() {
                    f.extend(statistical_features(&raw.frame(i)?)?.iter().map(|&v| v as f32));
                }
                vec![Tensor::new(vec![raw.len(), FEATURE_COUNT], f)?]
            }
            ModelKind::MlpPi => {
                let pis = self.pis(raw)?;
                let n = pis.batch();
                let d = pis.sample_len();
                vec![pis.reshape(&[n, d])?]
            }
            ModelKind::ImageSurrogate | ModelKind::DenseNet => vec![raw.inputs.clone()],
            ModelKind::DenseNetFused => vec![raw.inputs.clone(), self.pis(raw)?],
        })
    }

    /// Training targets: analytic persistence images for surrogates, one-hot
    /// labels for classifiers.
    pub fn targets(&self, raw: &DatasetBundle) -> CliResult<Tensor<f32>> {
        self.check(raw)?;
        if self.meta.kind.is_surrogate() {
            return analytic_pis(raw, &self.meta.pi_spec());
        }
        let labels = raw.labels.as_ref().ok_or_else(|| data("classifier data needs labels"))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.meta.classes) {
            return Err(data(format!("label {bad} outside the model's {} classes", self.meta.classes)));
        }
        Ok(one_hot(labels, self.meta.classes)?)
    }

    /// Network outputs in inference mode.
    pub fn predict(&self, raw: &DatasetBundle) -> CliResult<Tensor<f32>> {
        let inputs = self.inputs(raw)?;
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        Ok(self.stack.predict(&refs, PREDICT_BATCH)?)
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.txt"), self.meta.to_text())?;
        fs::write(dir.join("model.twt"), encode_weights(&self.stack))?;
        if let Some(stats) = &self.stats {
            let mut s = String::from("mean,std\n");
            for (m, sd) in stats.mean.iter().zip(&stats.std) {
                let _ = writeln!(s, "{m:?},{sd:?}");
            }
            fs::write(dir.join("stats.csv"), s)?;
        }
        if let Some(pca) = &self.pca {
            let row = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
            let mut s = row(pca.mean());
            s.push('\n');
            for (var, b) in pca.variances().iter().zip(pca.basis()) {
                let _ = writeln!(s, "{var:?},{}", row(b));
            }
            fs::write(dir.join("pca.csv"), s)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| data(format!("{}: {e}", p.display())))
        };
        let meta = ModelMeta::from_text(&read("meta.txt")?)?;
        let stats = if meta.kind.standardizes() { Some(parse_stats(&read("stats.csv")?)?) } else { None };
        let pca = if meta.kind == ModelKind::Cnn1dFused { Some(parse_pca(&read("pca.csv")?)?) } else { None };
        let aux = load_aux(&meta)?;
        let mut stack = build_stack(&meta, pca.as_ref(), &mut Rng::new(0))?;
        let wpath = dir.join("model.twt");
        let bytes = fs::read(&wpath).map_err(|e| data(format!("{}: {e}", wpath.display())))?;
        stack.load_weights(&decode_weights(&bytes)?)?;
        Ok(Model { meta, stack, stats, pca, aux })
    }
}

fn build_stack(m: &ModelMeta, pca: Option<&Pca>, rng: &mut Rng) -> CliResult<LayerStack<f32>> {
    let s = &m.sample_shape;
    let c = m.channels();
    let pi_shape = [GRID, GRID, c];
    let stack = match m.kind {
        ModelKind::SignalSurrogate => {
            let cfg = SignalSurrogateConfig { widths: m.widths, grid: GRID };
            build_signal_surrogate(s[0], s[1], &cfg, rng)?
        }
        ModelKind::ImageSurrogate => {
            let cfg = ImageSurrogateConfig { filters: m.filters, grid: GRID };
            build_image_surrogate(s[0], s[1], s[2], &cfg, rng)?
        }
        ModelKind::Cnn1d => build_cnn1d(s[0], s[1], m.classes, None, rng)?,
        ModelKind::Cnn1dFused => {
            let pca = pca.cloned().ok_or_else(|| data("fused 1D CNN needs its PCA"))?;
            build_cnn1d(s[0], s[1], m.classes, Some(&FusionHead::PcaConcat(pca)), rng)?
        }
        ModelKind::MlpFeatures => build_mlp(FEATURE_COUNT, m.classes, rng)?,
        ModelKind::MlpPi => build_mlp(GRID * GRID * c, m.classes, rng)?,
        ModelKind::DenseNet => {
            build_dense_classifier(s[0], s[1], s[2], m.classes, &DenseNetConfig::default(), None, rng)?
        }
        ModelKind::DenseNetFused => {
            let fusion = FusionHead::ConvGapConcat { pi_shape };
            build_dense_classifier(s[0], s[1], s[2], m.classes, &DenseNetConfig::default(), Some(&fusion), rng)?
        }
    };
    Ok(stack)
}

fn load_aux(meta: &ModelMeta) -> CliResult<Option<Box<Model>>> {
    let Some(dir) = &meta.aux else { return Ok(None) };
    let aux = Model::load(dir)?;
    if !aux.meta.kind.is_surrogate() || aux.meta.kind.input_kind() != meta.kind.input_kind() {
        return Err(data(format!(
            "aux_weights {} is a {}, not a surrogate for {:?} inputs",
            dir.display(),
            aux.meta.kind.tag(),
            meta.kind.input_kind()
        )));
    }
    if aux.meta.sample_shape != meta.sample_shape {
        return Err(data("aux surrogate was trained on a different sample shape"));
    }
    Ok(Some(Box::new(aux)))
}

fn pis_for(meta: &ModelMeta, aux: Option<&Model>, raw: &DatasetBundle) -> CliResult<Tensor<f32>> {
    match aux {
        Some(aux) => aux.predict(raw),
        None => analytic_pis(raw, &meta.pi_spec()),
    }
}

/// Ground-truth persistence images of every sample.
pub fn analytic_pis(raw: &DatasetBundle, spec: &PersistenceImageSpec) -> CliResult<Tensor<f32>> {
    Ok(match raw.kind {
        InputKind::Signal => pipeline::signal_targets(&raw.inputs, spec)?,
        InputKind::Image => pipeline::image_targets(&raw.inputs, spec)?,
    })
}

fn parse_floats(line: &str) -> CliResult<Vec<f64>> {
    line.split(',')
        .map(|v| v.trim().parse().map_err(|_| data(format!("bad number {v:?} in model files"))))
        .collect()
}

fn parse_stats(text: &str) -> CliResult<Standardization> {
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let v = parse_floats(line)?;
        if v.len() != 2 {
            return Err(data("stats.csv rows need mean,std"));
        }
        mean.push(v[0]);
        std.push(v[1]);
    }
    Ok(Standardization { mean, std })
}

fn parse_pca(text: &str) -> CliResult<Pca> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mean = parse_floats(lines.next().ok_or_else(|| data("empty pca.csv"))?)?;
    let (mut basis, mut variances) = (Vec::new(), Vec::new());
    for line in lines {
        let v = parse_floats(line)?;
        variances.push(v[0]);
        basis.push(v[1..].to_vec());
    }
    Ok(Pca::from_parts(mean, basis, variances)?)
}
