use crate::error::{Error, Result};
use crate::filtration::SignalFrame;

pub const FEATURE_COUNT: usize = 19;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Hand-crafted features of a three-axis frame:
/// mean, variance and RMS per axis; XY, YZ, XZ correlations; per-axis range
/// (max - min) `dx, dy, dz`; then `|(dx, dy)|, |(dy, dz)|, |(dx, dz)|` and
/// `|(dx, dy, dz)|`.
pub fn statistical_features(frame: &SignalFrame) -> Result<[f64; FEATURE_COUNT]> {
    if frame.channels() != 3 {
        return Err(Error::invalid(format!(
            "statistical features need 3 channels, got {}",
            frame.channels()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..3).map(|c| frame.column(c)).collect();
    let t = frame.steps() as f64;
    let mut f = [0.0; FEATURE_COUNT];
    let mut ranges = [0.0; 3];
    for (c, col) in cols.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / t;
        f[c] = mean;
        f[3 + c] = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        f[6 + c] = (col.iter().map(|v| v * v).sum::<f64>() / t).sqrt();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        ranges[c] = max - min;
        f[12 + c] = ranges[c];
    }
    f[9] = pearson(&cols[0], &cols[1]);
    f[10] = pearson(&cols[1], &cols[2]);
    f[11] = pearson(&cols[0], &cols[2]);
    let [dx, dy, dz] = ranges;
    f[15] = dx.hypot(dy);
    f[16] = dy.hypot(dz);
    f[17] = dx.hypot(dz);
    f[18] = (dx * dx + dy * dy + dz * dz).sqrt();
    Ok(f)
}
