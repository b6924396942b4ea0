use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use topopi_cli::{DataSource, Format, Model};
use topopi_core::codec::{decode_pd, decode_pi};
use topopi_core::{default_spec, image_pds, pd_to_pi, pds_to_pi_stack, sublevel_pd, DatasetTag};

fn topopi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topopi")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, format: &str, shape: &str, count: usize) -> PathBuf {
    let out = dir.join(name);
    let n = count.to_string();
    let r = topopi(&["synth", "--format", format, "--shape", shape, "--count", &n, "--classes", "3", "--output", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&topopi(&["frobnicate"])), 1);
    assert_eq!(code(&topopi(&["pd", "--input", "x"])), 1);
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", "model = cnn1d\nlearning_rate = 3\n");
    let out = topopi(&["train", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    let cfg = write_cfg(dir.path(), "twice.cfg", "seed = 1\nseed = 2\n");
    assert_eq!(code(&topopi(&["train", p(&cfg)])), 1);
    assert_eq!(code(&topopi(&["--help"])), 0);
}

#[test]
fn missing_input_exits_two_before_creating_output() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("never");
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        &format!(
            "model = cnn1d\ninput = {}\nformat = signal-csv\nshape = 32x3\noutput = {}\n",
            p(&dir.path().join("absent.csv")),
            p(&out_dir)
        ),
    );
    assert_eq!(code(&topopi(&["train", p(&cfg)])), 2);
    assert!(!out_dir.exists());
    assert_eq!(code(&topopi(&["train", p(&dir.path().join("absent.cfg"))])), 2);
}

#[test]
fn malformed_data_exits_two() {
    let dir = TempDir::new().unwrap();
    let csv = write_cfg(dir.path(), "bad.csv", "t0c0,label\nnot-a-number,0\n");
    let out = topopi(&["pd", "--input", p(&csv), "--format", "signal-csv", "--shape", "1x1", "--output", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "s.csv", "signal-csv", "32x3", 30);
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        &format!(
            "model = mlp-sf\ninput = {}\nformat = signal-csv\nshape = 32x3\nphases = 3@1e30\noutput = {}\n",
            p(&data),
            p(&dir.path().join("m"))
        ),
    );
    let out = topopi(&["train", p(&cfg)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pd_and_pi_files_match_the_library() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "s.csv", "signal-csv", "40x3", 4);
    let pds = dir.path().join("pds");
    let pis = dir.path().join("pis");
    let common = ["--input", p(&data), "--format", "signal-csv", "--shape", "40x3"];
    assert_eq!(code(&topopi(&[&["pd"], &common[..], &["--output", p(&pds)]].concat())), 0);
    assert_eq!(code(&topopi(&[&["pi"], &common[..], &["--output", p(&pis)]].concat())), 0);

    let raw = DataSource::new(Format::SignalCsv, Some("40x3")).unwrap().load(&data).unwrap();
    let spec = default_spec(DatasetTag::Signal);
    for i in 0..raw.len() {
        let frame = raw.frame(i).unwrap();
        let mut diagrams = Vec::new();
        for c in 0..3 {
            let want = sublevel_pd(&frame.column(c)).unwrap();
            let got = decode_pd(&fs::read(pds.join(format!("sample_{i:05}_c{c}.pd"))).unwrap()).unwrap();
            assert_eq!(got, want);
            diagrams.push(want);
        }
        let got = decode_pi(&fs::read(pis.join(format!("sample_{i:05}.pi"))).unwrap()).unwrap();
        assert_eq!(got, pds_to_pi_stack(&diagrams, &spec).unwrap());
    }
}

#[test]
fn cifar_images_go_through_rips() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("c.bin");
    let r = topopi(&["synth", "--format", "cifar", "--count", "2", "--output", p(&data)]);
    assert_eq!(code(&r), 0);
    let pis = dir.path().join("pis");
    let r = topopi(&["pi", "--input", p(&data), "--format", "cifar", "--spec", "cifar", "--output", p(&pis)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let raw = DataSource::new(Format::Cifar, None).unwrap().load(&data).unwrap();
    let spec = default_spec(DatasetTag::Cifar);
    let pds = image_pds(raw.inputs.sample(1), 32, 32, 3, spec.lifetime_floor).unwrap();
    let got = decode_pi(&fs::read(pis.join("sample_00001.pi")).unwrap()).unwrap();
    assert_eq!(got.channel(2), pd_to_pi(&pds[2], &spec).unwrap());
}

#[test]
fn corrupt_is_seeded_and_image_only() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "i.csv", "image-csv", "8x8x1", 5);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let r = topopi(&[
            "corrupt", "--input", p(&data), "--format", "image-csv", "--shape", "8x8x1", "--level", "L3", "--seed", seed,
            "--output", p(&out),
        ]);
        assert_eq!(code(&r), 0);
        fs::read(out).unwrap()
    };
    let (a, b, c) = (run("1", "a.csv"), run("1", "b.csv"), run("2", "c.csv"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, fs::read(&data).unwrap());

    let bad = topopi(&["corrupt", "--input", p(&data), "--format", "image-csv", "--shape", "8x8x1", "--level", "L9", "--output", "x"]);
    assert_eq!(code(&bad), 1);
    let signals = synth(dir.path(), "s.csv", "signal-csv", "16x2", 3);
    let bad = topopi(&[
        "corrupt", "--input", p(&signals), "--format", "signal-csv", "--shape", "16x2", "--level", "L1", "--output",
        p(&dir.path().join("x.csv")),
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn classifier_round_trip_through_model_directory() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "s.csv", "signal-csv", "48x3", 60);
    let model_dir = dir.path().join("model");
    let cfg = write_cfg(
        dir.path(),
        "t.cfg",
        &format!(
            "model = cnn1d-fused\ninput = {}\nformat = signal-csv\nshape = 48x3\nphases = 1@1e-3\noutput = {}\n",
            p(&data),
            p(&model_dir)
        ),
    );
    assert_eq!(code(&topopi(&["train", p(&cfg)])), 0);
    for f in ["meta.txt", "model.twt", "stats.csv", "pca.csv", "loss.csv", "report.txt"] {
        assert!(model_dir.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(model_dir.join("report.txt")).unwrap();
    assert!(report.contains("train_samples=45\n") && report.contains("test_samples=15\n"), "{report}");

    let out = dir.path().join("pred");
    let cfg = write_cfg(
        dir.path(),
        "i.cfg",
        &format!("weights = {}\ninput = {}\nformat = signal-csv\nshape = 48x3\noutput = {}\n", p(&model_dir), p(&data), p(&out)),
    );
    assert_eq!(code(&topopi(&["infer", p(&cfg)])), 0);
    let csv = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "index,predicted,score_0,score_1,score_2");
    assert_eq!(rows.len(), 61);

    // The reloaded model reproduces the written scores.
    let model = Model::load(&model_dir).unwrap();
    let raw = DataSource::new(Format::SignalCsv, Some("48x3")).unwrap().load(&data).unwrap();
    let y = model.predict(&raw).unwrap();
    let first: Vec<f32> = rows[1].split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.as_slice(), y.sample(0));
}

#[test]
fn eval_writes_noise_table() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "i.csv", "image-csv", "8x8x3", 24);
    let model_dir = dir.path().join("model");
    let cfg = write_cfg(
        dir.path(),
        "t.cfg",
        &format!(
            "model = densenet\ninput = {}\nformat = image-csv\nshape = 8x8x3\nphases = 1@1e-3\ntrain_fraction = 1\noutput = {}\n",
            p(&data),
            p(&model_dir)
        ),
    );
    assert_eq!(code(&topopi(&["train", p(&cfg)])), 0);
    let out = dir.path().join("eval");
    let cfg = write_cfg(
        dir.path(),
        "e.cfg",
        &format!(
            "weights = {}\ninput = {}\nformat = image-csv\nshape = 8x8x3\nmetric = accuracy\nnoise_levels = L1,L2,L3,L4\nnoise_seeds = 2\noutput = {}\n",
            p(&model_dir),
            p(&data),
            p(&out)
        ),
    );
    let r = topopi(&["eval", p(&cfg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("metric=accuracy"));
    let table = fs::read_to_string(out.join("noise.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "level,sigma,seeds,score,drop_pp");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("L4,0.08,2,"));

    // Bench needs surrogate weights.
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        &format!("weights = {}\ninput = {}\nformat = image-csv\nshape = 8x8x3\noutput = {}\n", p(&model_dir), p(&data), p(&out)),
    );
    assert_eq!(code(&topopi(&["bench", p(&cfg)])), 1);
}

#[test]
fn subset_finetune_reports_samples_used() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "s.csv", "signal-csv", "32x3", 36);
    let source = dir.path().join("source");
    let cfg = write_cfg(
        dir.path(),
        "t.cfg",
        &format!(
            "model = signal-surrogate\nwidths = 4,4,4,4\ninput = {}\nformat = signal-csv\nshape = 32x3\nphases = 1@1e-3\ntrain_fraction = 1\noutput = {}\n",
            p(&data),
            p(&source)
        ),
    );
    assert_eq!(code(&topopi(&["train", p(&cfg)])), 0);
    let cfg = write_cfg(
        dir.path(),
        "f.cfg",
        &format!(
            "weights = {}\ninput = {}\nformat = signal-csv\nshape = 32x3\nselection = subset\nsubset_k = 2\nphases = 1@1e-4\ntrain_fraction = 1\noutput = {}\n",
            p(&source),
            p(&data),
            p(&dir.path().join("ft"))
        ),
    );
    let r = topopi(&["finetune", p(&cfg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("samples_used=6\n"));
}
