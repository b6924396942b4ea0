use std::fs;
use std::path::Path;

use super::bundle::{DatasetBundle, InputKind};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Records of one label byte followed by three 1024-byte channel planes
/// (row-major); pixels are scaled to [0, 1] and stored channels-last.
pub fn decode_cifar(bytes: &[u8]) -> Result<DatasetBundle> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::decode(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3 * plane);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        let body = &rec[1..];
        for px in 0..plane {
            for ch in 0..3 {
                pixels.push(body[ch * plane + px] as f32 / 255.0);
            }
        }
    }
    let inputs = Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], pixels)?;
    DatasetBundle::new(InputKind::Image, inputs, Some(labels))
}

/// Inverse of [`decode_cifar`] for 32x32x3 labelled bundles (pixels are
/// rounded to the nearest byte).
pub fn encode_cifar(bundle: &DatasetBundle) -> Result<Vec<u8>> {
    if bundle.sample_shape() != [CIFAR_SIDE, CIFAR_SIDE, 3] {
        return Err(Error::invalid(format!(
            "CIFAR records are 32x32x3, got {:?}",
            bundle.sample_shape()
        )));
    }
    let labels = bundle.labels.as_ref().ok_or_else(|| Error::invalid("CIFAR records need labels"))?;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(bundle.len() * CIFAR_RECORD);
    for (i, &label) in labels.iter().enumerate() {
        let label = u8::try_from(label).map_err(|_| Error::invalid(format!("label {label} does not fit a byte")))?;
        out.push(label);
        let s = bundle.inputs.sample(i);
        for ch in 0..3 {
            for px in 0..plane {
                out.push((s[px * 3 + ch].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn load_cifar_binary(path: &Path) -> Result<DatasetBundle> {
    let bytes = fs::read(path)?;
    decode_cifar(&bytes).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_cifar_binary(path: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::write(path, encode_cifar(bundle)?)?;
    Ok(())
}

/// Rows of `t * n` frame values (time-step major) followed by the label. A
/// first line whose first cell is not a number is a header and skipped.
pub fn parse_signal_csv(text: &str, t: usize, n: usize, path: &Path) -> Result<DatasetBundle> {
    if t == 0 || n == 0 {
        return Err(Error::invalid("frame size must be positive"));
    }
    let width = t * n + 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && cells[0].parse::<f64>().is_err() {
            continue;
        }
        if cells.len() != width {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {width} values ({t}x{n} frame + label), found {}", cells.len()),
            ));
        }
        for (j, c) in cells[..width - 1].iter().enumerate() {
            let v: f32 = c
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("column {}: {c:?} is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, i + 1, format!("column {}: non-finite value", j + 1)));
            }
            values.push(v);
        }
        let label: f64 = cells[width - 1]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("label {:?} is not a number", cells[width - 1])))?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(parse_err(path, i + 1, format!("label {label} is not a class index")));
        }
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 0, "no frames"));
    }
    let inputs = Tensor::new(vec![labels.len(), t, n], values)?;
    DatasetBundle::new(InputKind::Signal, inputs, Some(labels))
}

pub fn load_signal_csv(path: &Path, t: usize, n: usize) -> Result<DatasetBundle> {
    let text = fs::read_to_string(path)?;
    parse_signal_csv(&text, t, n, path)
}

/// Images as rows of `h * w * c` pixels (channels innermost) plus a label,
/// the same layout as the signal CSV with `t = h * w` and `n = c`.
pub fn parse_image_csv(text: &str, h: usize, w: usize, c: usize, path: &Path) -> Result<DatasetBundle> {
    let flat = parse_signal_csv(text, h * w, c, path)?;
    let n = flat.len();
    let inputs = flat.inputs.reshape(&[n, h, w, c])?;
    DatasetBundle::new(InputKind::Image, inputs, flat.labels)
}

pub fn load_image_csv(path: &Path, h: usize, w: usize, c: usize) -> Result<DatasetBundle> {
    let text = fs::read_to_string(path)?;
    parse_image_csv(&text, h, w, c, path)
}

/// Header plus one row per sample (flattened, channels innermost); labels
/// default to 0 when absent.
pub fn format_csv(bundle: &DatasetBundle) -> Result<String> {
    let shape = bundle.sample_shape();
    let channels = *shape.last().ok_or_else(|| Error::invalid("samples have no channel axis"))?;
    let positions = bundle.inputs.sample_len() / channels;
    let prefix = match bundle.kind {
        InputKind::Signal => "t",
        InputKind::Image => "p",
    };
    let mut s = String::new();
    for pos in 0..positions {
        for ch in 0..channels {
            s.push_str(&format!("{prefix}{pos}c{ch},"));
        }
    }
    s.push_str("label\n");
    for i in 0..bundle.len() {
        for v in bundle.inputs.sample(i) {
            // Shortest representation that parses back to the same f32.
            s.push_str(&format!("{v:?},"));
        }
        let label = bundle.labels.as_ref().map_or(0, |l| l[i]);
        s.push_str(&format!("{label}\n"));
    }
    Ok(s)
}

pub fn write_csv(path: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::write(path, format_csv(bundle)?)?;
    Ok(())
}
