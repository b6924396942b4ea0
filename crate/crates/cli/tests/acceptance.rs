//! Acceptance criteria 1-10. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- 2 4` runs only the listed criteria.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{naive_rips_pairs, quadrature_bins, same_pairs, sweep_sublevel_pairs, walk, zero_aux, Op};
use topopi_cli::commands;
use topopi_cli::{DataSource, Format, Model, Report, RunConfig};
use topopi_core::codec::encode_weights;
use topopi_core::models::{
    build_cnn1d, build_dense_classifier, build_image_surrogate, build_signal_surrogate, fine_tune,
    transfer_base_weights, DenseNetConfig, FusionHead, ImageSurrogateConfig, Schedule, Selection,
    SignalSurrogateConfig, Supervised,
};
use topopi_core::nn::gradcheck::{self, projection_objective, GradCheckOptions};
use topopi_core::nn::{LayerStack, StackBuilder, Tensor};
use topopi_core::pimage::persistence_surface_bins;
use topopi_core::rips::{rips_pd1_with, RipsOptions};
use topopi_core::{default_spec, pd_to_pi, sublevel_pd, DatasetTag, PersistenceDiagram, PointCloud3, Rng};

// Criterion 1
const SIGNALS: usize = 1000;
const MAX_SIGNAL_LEN: usize = 64;
const CLOUDS: usize = 200;
const MAX_CLOUD: usize = 10;
const RIPS_TOL: f64 = 1e-9;
const ORACLE_BUDGET_S: f64 = 120.0;
// Criterion 2
const DIAGRAMS: usize = 100;
const MAX_POINTS: usize = 20;
const QUAD_SUB: usize = 200;
const BIN_TOL: f64 = 1e-4;
// Criterion 3
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 300.0;
// Criterion 5
const SIGNAL_TRAIN: usize = 1000;
const SIGNAL_TEST: usize = 250;
const SIGNAL_STEPS: usize = 250;
const SOURCE_CLASSES: usize = 3;
const MSE_CEILING: f64 = 0.01;
const TEST_OVER_TRAIN: f64 = 2.0;
const IMAGE_TRAIN: usize = 500;
const IMAGE_SIDE: usize = 16;
const BCE_FRACTION_OF_LN2: f64 = 0.7;
const TRAIN_BUDGET_S: f64 = 1800.0;
// Criterion 6
const TARGET_SAMPLES: usize = 1200;
const TARGET_CLASSES: usize = 6;
const SUBSET_K: usize = 50;
const FS_OVER_FA: f64 = 2.0;
// Criterion 7
const FUSION_SEEDS: u64 = 5;
const CLASSIFIER_TRAIN: usize = 300;
const CLASSIFIER_TEST: usize = 150;
const F1_SLACK: f64 = 0.01;
// Criterion 8
const NOISE_TRAIN: usize = 300;
const NOISE_TEST: usize = 300;
const NOISE_SEEDS: usize = 3;
// Criterion 9
const BENCH_SIDE: usize = 32;
const BENCH_ITEMS: usize = 100;
const MIN_SPEEDUP: f64 = 10.0;

type Outcome = Result<String, String>;

/// Scratch directory plus artifacts shared between criteria.
struct Shared {
    dir: tempfile::TempDir,
    signal_surrogate: Option<PathBuf>,
}

impl Shared {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn config(pairs: &[(&str, String)]) -> Result<RunConfig, String> {
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (*k, v.as_str())).collect();
    RunConfig::from_pairs(&refs).map_err(|e| e.to_string())
}

fn synth(sh: &Shared, name: &str, format: &str, shape: &str, count: usize, classes: usize, seed: u64) -> Result<PathBuf, String> {
    let path = sh.path(name);
    let src = DataSource::new(Format::parse(format).map_err(|e| e.to_string())?, Some(shape)).map_err(|e| e.to_string())?;
    commands::synth(&src, count, classes, seed, &path).map_err(|e| e.to_string())?;
    Ok(path)
}

fn number(r: &Report, key: &str) -> Result<f64, String> {
    r.get_f64(key).ok_or_else(|| format!("report has no {key}"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pd_pairs(pd: &PersistenceDiagram) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = pd.points().iter().map(|p| (p.birth, p.lifetime)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

fn c1_oracles(_: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let mut rng = Rng::new(101);
    for i in 0..SIGNALS {
        let len = 1 + rng.below(MAX_SIGNAL_LEN);
        let x: Vec<f64> = rng
            .permutation(len)
            .into_iter()
            .map(|r| r as f64 * 0.37 - 5.0 + rng.uniform() * 0.1)
            .collect();
        let got = pd_pairs(&sublevel_pd(&x).map_err(|e| e.to_string())?);
        let mut want = sweep_sublevel_pairs(&x);
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if got != want {
            return Err(format!("signal {i} differs from the threshold sweep"));
        }
    }
    for i in 0..CLOUDS {
        let m = 3 + rng.below(MAX_CLOUD - 2);
        let pts: Vec<[f64; 3]> = (0..m).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        let cloud = PointCloud3::new(pts.clone()).map_err(|e| e.to_string())?;
        let naive = naive_rips_pairs(&pts);
        for emergent_pairs in [true, false] {
            let pd = rips_pd1_with(&cloud, 0.0, RipsOptions { emergent_pairs }).map_err(|e| e.to_string())?;
            let got: Vec<(f64, f64)> = pd.points().iter().map(|p| (p.birth, p.death())).collect();
            if !same_pairs(&got, &naive, RIPS_TOL) {
                return Err(format!("cloud {i} (m = {m}) differs from the naive reduction"));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        secs < ORACLE_BUDGET_S,
        format!("{SIGNALS} signals exact, {CLOUDS} clouds within {RIPS_TOL:e}, {secs:.1} s (budget {ORACLE_BUDGET_S} s)"),
    )
}

fn c2_images(_: &mut Shared) -> Outcome {
    let mut rng = Rng::new(102);
    let mut worst = 0.0f64;
    for tag in [DatasetTag::Signal, DatasetTag::Cifar, DatasetTag::Svhn] {
        let spec = default_spec(tag);
        let (b0, b1) = spec.birth_range;
        let (l0, l1) = spec.lifetime_range;
        for _ in 0..DIAGRAMS {
            let n = 1 + rng.below(MAX_POINTS);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.uniform_in(b0, b1), rng.uniform_in(l0.max(spec.lifetime_floor), l1)))
                .collect();
            let pd = PersistenceDiagram::from_pairs(1, &pts).map_err(|e| e.to_string())?;
            let got = persistence_surface_bins(&pd, &spec).map_err(|e| e.to_string())?;
            let want = quadrature_bins(
                &pts,
                spec.rows,
                spec.cols,
                spec.birth_range,
                spec.lifetime_range,
                spec.kernel_sigma,
                spec.lifetime_floor,
                QUAD_SUB,
            );
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
            let pi = pd_to_pi(&pd, &spec).map_err(|e| e.to_string())?;
            if pi.channel_max(0) != 1.0 {
                return Err(format!("{tag:?}: normalised max {} != 1", pi.channel_max(0)));
            }
        }
    }
    check(
        worst <= BIN_TOL,
        format!("worst bin error {worst:.2e} (tolerance {BIN_TOL:e}), normalised max = 1 on every diagram"),
    )
}

fn grad_error(stack: &mut LayerStack<f64>, batch: usize, rng: &mut Rng) -> Result<f64, String> {
    let inputs: Vec<Tensor<f64>> = stack
        .input_shapes()
        .to_vec()
        .iter()
        .map(|sh| {
            let mut shape = vec![batch];
            shape.extend_from_slice(sh);
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
        })
        .collect();
    let mut out = vec![batch];
    out.extend_from_slice(stack.output_shape());
    let objective = projection_objective(&out, rng.below(1000) as u64);
    let opts = GradCheckOptions::default();
    let report = gradcheck::grad_check(stack, &inputs, &objective, &opts).map_err(|e| e.to_string())?;
    if report.checked == 0 {
        return Err("grad check compared nothing".into());
    }
    Ok(report.max_rel_error)
}

fn c3_gradients(_: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let mut rng = Rng::new(103);
    let r = &mut rng;
    let mut cases: Vec<(&str, LayerStack<f64>)> = vec![
        ("conv1d", StackBuilder::new(&[7, 2]).conv1d(3, 3, r).build().unwrap()),
        ("conv2d", StackBuilder::new(&[4, 5, 2]).conv2d(3, 3, r).build().unwrap()),
        ("tconv2d", StackBuilder::new(&[3, 4, 2]).conv_transpose2d(2, 4, r).build().unwrap()),
        ("dense", StackBuilder::new(&[5]).dense(4, r).build().unwrap()),
        ("batchnorm", StackBuilder::new(&[4, 3]).batchnorm().build().unwrap()),
        ("relu", StackBuilder::new(&[3, 4]).relu().build().unwrap()),
        ("sigmoid", StackBuilder::new(&[3, 4]).activation(topopi_core::nn::Activation::Sigmoid).build().unwrap()),
        ("softmax", StackBuilder::new(&[3, 4]).activation(topopi_core::nn::Activation::Softmax).build().unwrap()),
        ("maxpool1d", StackBuilder::new(&[7, 2]).maxpool1d(3, 2).build().unwrap()),
        ("maxpool2d", StackBuilder::new(&[5, 4, 2]).maxpool2d(3, 2).build().unwrap()),
        ("gap", StackBuilder::new(&[3, 3, 2]).global_avg_pool().build().unwrap()),
        ("dropout", StackBuilder::new(&[6, 2]).dropout(0.2).build().unwrap()),
        ("reshape", StackBuilder::new(&[6]).reshape(&[2, 3]).build().unwrap()),
        (
            "concat",
            StackBuilder::with_inputs(&[&[3], &[2]])
                .concat(&[topopi_core::nn::Src::Input(0), topopi_core::nn::Src::Input(1)])
                .build()
                .unwrap(),
        ),
    ];
    for p in cases[4].1.params_mut() {
        for v in p.value.data_mut() {
            *v += 0.3;
        }
    }
    let sig = SignalSurrogateConfig { widths: [3, 4, 4, 5], grid: 4 };
    cases.push(("signal surrogate", build_signal_surrogate(16, 2, &sig, r).map_err(|e| e.to_string())?));
    let img = ImageSurrogateConfig { filters: 3, grid: 4 };
    cases.push(("image surrogate", build_image_surrogate(16, 16, 2, &img, r).map_err(|e| e.to_string())?));

    let mut worst = (0.0f64, "");
    for (name, stack) in &mut cases {
        let err = grad_error(stack, 3, &mut rng)?;
        if err > worst.0 {
            worst = (err, name);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst.0 <= GRAD_TOL && secs < GRAD_BUDGET_S,
        format!(
            "{} stacks, worst relative error {:.2e} ({}), tolerance {GRAD_TOL:e}, {secs:.1} s",
            cases.len(),
            worst.0,
            worst.1
        ),
    )
}

fn c4_shapes(_: &mut Shared) -> Outcome {
    let mut rng = Rng::new(104);
    let mut ops = Vec::new();
    for w in [128, 256, 512] {
        ops.extend([Op::Conv(w, 3), Op::Norm, Op::Pass, Op::Pool(2)]);
    }
    ops.extend([Op::Conv(1024, 3), Op::Norm, Op::Pass, Op::Gap, Op::Dense(50 * 50 * 3), Op::Pass, Op::Reshape([50, 50, 3])]);
    let (sig_shape, sig_params) = walk(&[250, 3], &ops);
    let sig = build_signal_surrogate::<f32>(250, 3, &SignalSurrogateConfig::default(), &mut rng).map_err(|e| e.to_string())?;

    let mut ops = Vec::new();
    for _ in 0..3 {
        ops.extend([Op::Conv(128, 3), Op::Norm, Op::Pass, Op::Pool(2)]);
    }
    ops.extend([
        Op::Conv(128, 3),
        Op::Norm,
        Op::Pass,
        Op::Gap,
        Op::Dense(2500),
        Op::Reshape([50, 50, 1]),
        Op::TConv(3, 50),
        Op::Norm,
        Op::Pass,
    ]);
    let (img_shape, img_params) = walk(&[32, 32, 3], &ops);
    let img =
        build_image_surrogate::<f32>(32, 32, 3, &ImageSurrogateConfig::default(), &mut rng).map_err(|e| e.to_string())?;

    let ok = sig.output_shape() == [50, 50, 3]
        && img.output_shape() == [50, 50, 3]
        && sig_shape == [50, 50, 3]
        && img_shape == [50, 50, 3]
        && sig.trainable_param_count() == sig_params
        && img.trainable_param_count() == img_params;
    check(
        ok,
        format!(
            "signal {:?} {} params (walker {sig_params}), image {:?} {} params (walker {img_params})",
            sig.output_shape(),
            sig.trainable_param_count(),
            img.output_shape(),
            img.trainable_param_count()
        ),
    )
}

fn c5_surrogates(sh: &mut Shared) -> Outcome {
    let shape = format!("{SIGNAL_STEPS}x3");
    let train = synth(sh, "signals_train.csv", "signal-csv", &shape, SIGNAL_TRAIN, SOURCE_CLASSES, 501)?;
    let test = synth(sh, "signals_test.csv", "signal-csv", &shape, SIGNAL_TEST, SOURCE_CLASSES, 502)?;
    let out = sh.path("signal_surrogate");
    let t0 = Instant::now();
    let r = commands::train(&config(&[
        ("model", "signal-surrogate".into()),
        ("input", s(&train)),
        ("test_input", s(&test)),
        ("format", "signal-csv".into()),
        ("shape", shape.clone()),
        ("schedule", "signal-desk".into()),
        ("seed", "5".into()),
        ("output", s(&out)),
    ])?)
    .map_err(|e| e.to_string())?;
    let signal_secs = t0.elapsed().as_secs_f64();
    let (mse_train, mse_test) = (number(&r, "train_loss")?, number(&r, "test_loss")?);
    sh.signal_surrogate = Some(out);

    let ishape = format!("{IMAGE_SIDE}x{IMAGE_SIDE}x3");
    let images = synth(sh, "images_train.csv", "image-csv", &ishape, IMAGE_TRAIN, 3, 503)?;
    let t0 = Instant::now();
    let r = commands::train(&config(&[
        ("model", "image-surrogate".into()),
        ("input", s(&images)),
        ("format", "image-csv".into()),
        ("shape", ishape),
        ("schedule", "image-desk".into()),
        ("train_fraction", "1".into()),
        ("seed", "6".into()),
        ("output", s(&sh.path("image_surrogate"))),
    ])?)
    .map_err(|e| e.to_string())?;
    let image_secs = t0.elapsed().as_secs_f64();
    let bce = number(&r, "train_loss")?;
    let bce_ceiling = BCE_FRACTION_OF_LN2 * std::f64::consts::LN_2;

    let ok = mse_train < MSE_CEILING
        && mse_test <= TEST_OVER_TRAIN * mse_train
        && bce <= bce_ceiling
        && signal_secs < TRAIN_BUDGET_S
        && image_secs < TRAIN_BUDGET_S;
    check(
        ok,
        format!(
            "signal MSE train {mse_train:.5} test {mse_test:.5} ({signal_secs:.0} s); \
             image BCE {bce:.4} vs ceiling {bce_ceiling:.4} ({image_secs:.0} s)"
        ),
    )
}

fn c6_finetune(sh: &mut Shared) -> Outcome {
    let source = sh.signal_surrogate.clone().ok_or("needs the signal surrogate from criterion 5")?;
    let shape = format!("{SIGNAL_STEPS}x3");
    let target = synth(sh, "target.csv", "signal-csv", &shape, TARGET_SAMPLES, TARGET_CLASSES, 601)?;

    // Zero epochs leave the loaded weights untouched.
    let mut model = Model::load(&source).map_err(|e| e.to_string())?;
    let before = encode_weights(&model.stack);
    let src = DataSource::new(Format::SignalCsv, Some(&shape)).map_err(|e| e.to_string())?;
    let raw = src.load(&target).map_err(|e| e.to_string())?.select(&(0..40).collect::<Vec<_>>());
    let data = Supervised::new(model.inputs(&raw).map_err(|e| e.to_string())?, model.targets(&raw).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let ws = model.stack.weight_set();
    let zero = Schedule::new(vec![(0, 1e-4)], 32);
    fine_tune(&mut model.stack, &ws, &data, &Selection::All, &zero, model.meta.loss, &mut Rng::new(0))
        .map_err(|e| e.to_string())?;
    let identity = encode_weights(&model.stack) == before;

    let run = |name: &str, selection: &str| -> Result<Report, String> {
        commands::finetune(&config(&[
            ("weights", s(&source)),
            ("input", s(&target)),
            ("format", "signal-csv".into()),
            ("shape", shape.clone()),
            ("selection", selection.into()),
            ("subset_k", SUBSET_K.to_string()),
            ("seed", "7".into()),
            ("output", s(&sh.path(name))),
        ])?)
        .map_err(|e| e.to_string())
    };
    let fa = run("finetune_all", "all")?;
    let fs = run("finetune_subset", "subset")?;
    let (la, ls) = (number(&fa, "test_loss")?, number(&fs, "test_loss")?);
    check(
        identity && ls <= FS_OVER_FA * la,
        format!(
            "0-epoch identity {identity}; held-out MSE FA {la:.5} ({} samples) vs FS {ls:.5} ({} samples), bound {FS_OVER_FA}x",
            fa.get("samples_used").unwrap_or("?"),
            fs.get("samples_used").unwrap_or("?")
        ),
    )
}

fn c7_fusion(sh: &mut Shared) -> Outcome {
    let aux = sh.signal_surrogate.clone().ok_or("needs the signal surrogate from criterion 5")?;
    let mut rng = Rng::new(107);

    // Zeroed auxiliary branch: fused logits equal the baseline bit for bit.
    let x = Tensor::new(vec![4, 250, 3], (0..4 * 250 * 3).map(|_| rng.normal() as f32).collect()).unwrap();
    let pis = Tensor::<f32>::zeros(&[4, 50, 50, 3]);
    let fusion = FusionHead::ConvGapConcat { pi_shape: [50, 50, 3] };
    let base = build_cnn1d::<f32>(250, 3, 6, None, &mut rng).map_err(|e| e.to_string())?;
    let mut fused = build_cnn1d::<f32>(250, 3, 6, Some(&fusion), &mut rng).map_err(|e| e.to_string())?;
    transfer_base_weights(&base, &mut fused).map_err(|e| e.to_string())?;
    zero_aux(&mut fused, 32);
    let cnn_exact = base.infer(&[&x]).unwrap().data() == fused.infer(&[&x, &pis]).unwrap().data();

    let img = Tensor::new(vec![2, 32, 32, 3], (0..2 * 32 * 32 * 3).map(|_| rng.uniform() as f32).collect()).unwrap();
    let pis = Tensor::<f32>::zeros(&[2, 50, 50, 3]);
    let cfg = DenseNetConfig::default();
    let base = build_dense_classifier::<f32>(32, 32, 3, 10, &cfg, None, &mut rng).map_err(|e| e.to_string())?;
    let mut fused = build_dense_classifier::<f32>(32, 32, 3, 10, &cfg, Some(&fusion), &mut rng).map_err(|e| e.to_string())?;
    transfer_base_weights(&base, &mut fused).map_err(|e| e.to_string())?;
    zero_aux(&mut fused, cfg.feature_width().map_err(|e| e.to_string())?);
    let dense_exact = base.infer(&[&img]).unwrap().data() == fused.infer(&[&img, &pis]).unwrap().data();

    let shape = format!("{SIGNAL_STEPS}x3");
    let (mut base_f1, mut fused_f1) = (Vec::new(), Vec::new());
    for seed in 0..FUSION_SEEDS {
        let train = synth(sh, &format!("fusion_train_{seed}.csv"), "signal-csv", &shape, CLASSIFIER_TRAIN, 3, 700 + seed)?;
        let test = synth(sh, &format!("fusion_test_{seed}.csv"), "signal-csv", &shape, CLASSIFIER_TEST, 3, 750 + seed)?;
        for (model, scores) in [("cnn1d", &mut base_f1), ("cnn1d-fused", &mut fused_f1)] {
            let r = commands::train(&config(&[
                ("model", model.into()),
                ("input", s(&train)),
                ("test_input", s(&test)),
                ("format", "signal-csv".into()),
                ("shape", shape.clone()),
                ("aux_weights", s(&aux)),
                ("seed", seed.to_string()),
                ("output", s(&sh.path(&format!("fusion_{model}_{seed}")))),
            ])?)
            .map_err(|e| e.to_string())?;
            scores.push(number(&r, "test_weighted_f1")?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mb, mf) = (mean(&base_f1), mean(&fused_f1));
    check(
        cnn_exact && dense_exact && mf >= mb - F1_SLACK,
        format!(
            "bit-exact 1D CNN {cnn_exact}, DenseNet {dense_exact}; mean weighted F1 over {FUSION_SEEDS} seeds: \
             fused {mf:.4} vs baseline {mb:.4} (slack {F1_SLACK})"
        ),
    )
}

fn c8_noise(sh: &mut Shared) -> Outcome {
    let shape = format!("{IMAGE_SIDE}x{IMAGE_SIDE}x3");
    let train = synth(sh, "noise_train.csv", "image-csv", &shape, NOISE_TRAIN, 3, 801)?;
    let test = synth(sh, "noise_test.csv", "image-csv", &shape, NOISE_TEST, 3, 802)?;
    let model = sh.path("noise_densenet");
    commands::train(&config(&[
        ("model", "densenet".into()),
        ("input", s(&train)),
        ("train_fraction", "1".into()),
        ("format", "image-csv".into()),
        ("shape", shape.clone()),
        ("seed", "8".into()),
        ("output", s(&model)),
    ])?)
    .map_err(|e| e.to_string())?;
    let r = commands::eval(&config(&[
        ("weights", s(&model)),
        ("input", s(&test)),
        ("format", "image-csv".into()),
        ("shape", shape),
        ("metric", "accuracy".into()),
        ("noise_levels", "L1,L2,L3,L4".into()),
        ("noise_seeds", NOISE_SEEDS.to_string()),
        ("seed", "9".into()),
        ("output", s(&sh.path("noise_eval"))),
    ])?)
    .map_err(|e| e.to_string())?;
    let mut curve = vec![number(&r, "score")?];
    for level in ["L1", "L2", "L3", "L4"] {
        curve.push(number(&r, &format!("score_{level}"))?);
    }
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
    check(monotone, format!("mean accuracy clean, L1..L4: {}", shown.join(" >= ")))
}

fn c9_speed(sh: &mut Shared) -> Outcome {
    let shape = format!("{BENCH_SIDE}x{BENCH_SIDE}x3");
    let seedling = synth(sh, "bench_fit.csv", "image-csv", &shape, 2, 2, 901)?;
    let images = synth(sh, "bench_images.csv", "image-csv", &shape, BENCH_ITEMS, 3, 902)?;
    let model = sh.path("bench_surrogate");
    // Timing depends on the architecture only, so the weights stay untrained.
    commands::train(&config(&[
        ("model", "image-surrogate".into()),
        ("input", s(&seedling)),
        ("train_fraction", "1".into()),
        ("format", "image-csv".into()),
        ("shape", shape.clone()),
        ("phases", "0@1e-3".into()),
        ("output", s(&model)),
    ])?)
    .map_err(|e| e.to_string())?;
    let report = commands::bench(&config(&[
        ("weights", s(&model)),
        ("input", s(&images)),
        ("format", "image-csv".into()),
        ("shape", shape),
        ("bench_items", BENCH_ITEMS.to_string()),
        ("threads", "1".into()),
        ("output", s(&sh.path("bench"))),
    ])?)
    .map_err(|e| e.to_string())?;
    let analytic = report.row("analytic", 32).ok_or("no analytic batch-32 row")?;
    let surrogate = report.row("surrogate", 32).ok_or("no surrogate batch-32 row")?;
    let ratio = analytic.mean_ms / surrogate.mean_ms;
    check(
        ratio >= MIN_SPEEDUP && analytic.items >= 32 && report.rows.iter().map(|r| r.items).max() >= Some(BENCH_ITEMS),
        format!(
            "analytic {:.1} ms/image, surrogate {:.2} ms/image at batch 32: {ratio:.0}x (need {MIN_SPEEDUP}x)",
            analytic.mean_ms, surrogate.mean_ms
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_topopi")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("topopi {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).into_iter().flatten().flatten() {
        if e.path().is_file() {
            files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default());
        }
    }
    files
}

fn c10_determinism(sh: &mut Shared) -> Outcome {
    let signals = synth(sh, "det_signals.csv", "signal-csv", "64x3", 48, 3, 1001)?;
    let images = synth(sh, "det_images.csv", "image-csv", "16x16x3", 40, 2, 1002)?;
    let signal_data = format!("input = {}\nformat = signal-csv\nshape = 64x3\nthreads = 2\n", s(&signals));
    let image_data = format!("input = {}\nformat = image-csv\nshape = 16x16x3\nthreads = 2\n", s(&images));
    let jobs: Vec<(&str, &str, String)> = vec![
        ("train", "surrogate", format!("{signal_data}model = signal-surrogate\nphases = 2@1e-3\nseed = 3\n")),
        ("train", "classifier", format!("{signal_data}model = cnn1d-fused\nphases = 2@1e-3\nseed = 4\n")),
        ("train", "densenet", format!("{image_data}model = densenet\nphases = 1@1e-3\nseed = 5\n")),
        ("infer", "surrogate", signal_data.clone()),
        ("infer", "classifier", signal_data.clone()),
        ("eval", "classifier", signal_data.clone()),
        ("eval", "densenet", format!("{image_data}metric = accuracy\nnoise_levels = L1,L3\nseed = 6\n")),
    ];
    let mut compared = 0;
    for (step, (cmd, model, body)) in jobs.iter().enumerate() {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = sh.path(&format!("det_{step}_{run}"));
            let weights = if *cmd == "train" {
                String::new()
            } else {
                format!("weights = {}\n", s(&sh.path(&format!("det_model_{model}_0"))))
            };
            let target = if *cmd == "train" { sh.path(&format!("det_model_{model}_{run}")) } else { out };
            let cfg = sh.path(&format!("det_{step}_{run}.cfg"));
            fs::write(&cfg, format!("{body}{weights}output = {}\n", s(&target))).map_err(|e| e.to_string())?;
            run_cli(&[cmd, &s(&cfg)])?;
            outputs.push(snapshot(&target));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            let differing: Vec<&String> = outputs[0]
                .iter()
                .filter(|(k, v)| outputs[1].get(*k) != Some(v))
                .map(|(k, _)| k)
                .collect();
            return Err(format!("{cmd} ({model}) differs between runs: {differing:?}"));
        }
        compared += outputs[0].len();
    }
    Ok(format!("{} commands run twice, {compared} artifacts byte-identical", jobs.len()))
}

type Criterion = (u32, &'static str, fn(&mut Shared) -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "persistence oracle equivalence", c1_oracles),
    (2, "persistence image correctness", c2_images),
    (3, "gradient correctness", c3_gradients),
    (4, "surrogate shape fidelity", c4_shapes),
    (5, "surrogate training", c5_surrogates),
    (6, "fine-tuning mechanics", c6_finetune),
    (7, "fusion plumbing", c7_fusion),
    (8, "noise robustness protocol", c8_noise),
    (9, "surrogate speedup", c9_speed),
    (10, "determinism", c10_determinism),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared {
        dir: tempfile::tempdir().expect("scratch directory"),
        signal_surrogate: None,
    };
    let mut failed = 0;
    // Panics are reported as failures; keep their default output quiet.
    panic::set_hook(Box::new(|_| {}));
    for (n, name, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS [{secs:.0} s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL [{secs:.0} s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
