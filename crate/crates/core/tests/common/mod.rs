//! Brute-force references shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use topopi_core::nn::gradcheck::{self, projection_objective, GradCheckOptions};
use topopi_core::nn::{LayerStack, Src, Tensor};
use topopi_core::Rng;

/// Dimension-0 sublevel pairs `(birth, lifetime)` by re-labelling the
/// connected runs of `{i : x_i <= s}` at every threshold `s`. Assumes
/// distinct values. A run is named by its minimum; when two runs meet, the
/// name that disappears is the one with the larger minimum.
pub fn sweep_sublevel_pairs(x: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds = x.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let mut alive: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for &s in &thresholds {
        let mut now = BTreeSet::new();
        let mut i = 0;
        while i < x.len() {
            if x[i] > s {
                i += 1;
                continue;
            }
            let mut best = i;
            while i < x.len() && x[i] <= s {
                if x[i] < x[best] {
                    best = i;
                }
                i += 1;
            }
            now.insert(best);
        }
        for &gone in alive.difference(&now) {
            out.push((x[gone], s - x[gone]));
        }
        alive = now;
    }
    let min = thresholds[0];
    out.push((min, thresholds[thresholds.len() - 1] - min));
    out
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Dimension-1 `(birth, death)` pairs of the full Vietoris-Rips complex by
/// left-to-right column reduction of the triangle boundary matrix over Z/2.
/// Simplices are ordered by (value, sorted vertex tuple).
pub fn naive_rips_pairs(points: &[[f64; 3]]) -> Vec<(f64, f64)> {
    let m = points.len();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            edges.push((dist(&points[i], &points[j]), [i, j]));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let edge_rank: HashMap<[usize; 2], usize> = edges.iter().enumerate().map(|(r, e)| (e.1, r)).collect();

    let mut tris = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let v = [[a, b], [a, c], [b, c]]
                    .iter()
                    .map(|e| edges[edge_rank[e]].0)
                    .fold(0.0, f64::max);
                tris.push((v, [a, b, c]));
            }
        }
    }
    tris.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut low_owner: HashMap<usize, usize> = HashMap::new();
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(tris.len());
    let mut pairs = Vec::new();
    for (t, &(value, [a, b, c])) in tris.iter().enumerate() {
        let mut col: Vec<usize> = vec![edge_rank[&[a, b]], edge_rank[&[a, c]], edge_rank[&[b, c]]];
        col.sort_unstable();
        while let Some(&low) = col.last() {
            match low_owner.get(&low) {
                Some(&other) => col = xor(&col, &columns[other]),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            low_owner.insert(low, t);
            pairs.push((edges[low].0, value));
        }
        columns.push(col);
    }
    pairs
}

fn xor(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    out
}

/// Sorted copies of `pairs` with strictly positive length.
pub fn positive(pairs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = pairs.iter().copied().filter(|p| p.1 > p.0).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

/// Multiset equality after sorting, each coordinate within `tol`.
pub fn same_pairs(a: &[(f64, f64)], b: &[(f64, f64)], tol: f64) -> bool {
    let (a, b) = (positive(a), positive(b));
    a.len() == b.len()
        && a.iter()
            .zip(&b)
            .all(|(p, q)| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol)
}

fn gauss(z: f64, mu: f64, sigma: f64) -> f64 {
    let u = (z - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Midpoint-rule mass of a unit Gaussian over each of `bins` equal cells of
/// `range`, using `sub` sub-intervals per cell.
fn midpoint_masses(range: (f64, f64), bins: usize, mu: f64, sigma: f64, sub: usize) -> Vec<f64> {
    let width = (range.1 - range.0) / bins as f64;
    let h = width / sub as f64;
    (0..bins)
        .map(|b| {
            let lo = range.0 + width * b as f64;
            (0..sub).map(|k| gauss(lo + (k as f64 + 0.5) * h, mu, sigma)).sum::<f64>() * h
        })
        .collect()
}

/// Un-normalised persistence-image bins, `rows x cols` lifetime-major, by
/// `sub x sub` midpoint quadrature of the lifetime-weighted Gaussian sum.
/// The integrand factorises per point, so the 2-D midpoint sum is the
/// product of two 1-D sums.
pub fn quadrature_bins(
    points: &[(f64, f64)],
    rows: usize,
    cols: usize,
    birth_range: (f64, f64),
    lifetime_range: (f64, f64),
    sigma: f64,
    floor: f64,
    sub: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for &(b, l) in points {
        if l < floor {
            continue;
        }
        let bx = midpoint_masses(birth_range, cols, b, sigma, sub);
        let ly = midpoint_masses(lifetime_range, rows, l, sigma, sub);
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += l * ly[r] * bx[c];
            }
        }
    }
    out
}

/// Layer listing walked by hand: shapes exclude the batch axis.
#[derive(Clone, Copy)]
pub enum Op {
    Conv(usize, usize),
    TConv(usize, usize),
    Dense(usize),
    Norm,
    Pool(usize),
    Gap,
    Reshape([usize; 3]),
    Pass,
}

/// Output shape and trainable parameter count of a chain of `ops`.
pub fn walk(input: &[usize], ops: &[Op]) -> (Vec<usize>, usize) {
    let mut shape = input.to_vec();
    let mut params = 0;
    for &op in ops {
        let ch = *shape.last().unwrap();
        match op {
            Op::Conv(f, k) | Op::TConv(f, k) => {
                let spatial = shape.len() - 1;
                params += k.pow(spatial as u32) * ch * f + f;
                *shape.last_mut().unwrap() = f;
            }
            Op::Dense(u) => {
                params += ch * u + u;
                shape = vec![u];
            }
            Op::Norm => params += 2 * ch,
            Op::Pool(s) => {
                let n = shape.len();
                for d in &mut shape[..n - 1] {
                    *d = (*d).div_ceil(s);
                }
            }
            Op::Gap => shape = vec![ch],
            Op::Reshape(s) => shape = s.to_vec(),
            Op::Pass => {}
        }
    }
    (shape, params)
}

/// Worst relative gradient error of `stack` on uniform inputs under a fixed
/// random projection of its output.
pub fn grad_error(stack: &mut LayerStack<f64>, batch: usize, rng: &mut Rng) -> f64 {
    let inputs: Vec<Tensor<f64>> = stack
        .input_shapes()
        .to_vec()
        .iter()
        .map(|s| {
            let mut shape = vec![batch];
            shape.extend_from_slice(s);
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.uniform()).collect()).unwrap()
        })
        .collect();
    let mut out = vec![batch];
    out.extend_from_slice(stack.output_shape());
    let objective = projection_objective(&out, 17);
    let report = gradcheck::grad_check(stack, &inputs, &objective, &GradCheckOptions::default()).unwrap();
    assert!(report.checked > 50, "{report:?}");
    report.max_rel_error
}

/// Zeroes every tensor of layers reading the auxiliary input (directly or
/// through other auxiliary layers) and the auxiliary rows of the head.
pub fn zero_aux(fused: &mut LayerStack<f32>, base_features: usize) {
    let mut aux = vec![false; fused.len()];
    for i in 0..fused.len() {
        aux[i] = fused.layer_sources(i).iter().any(|s| match *s {
            Src::Input(k) => k > 0,
            Src::Node(j) => aux[j] && fused.layer(j).kind() != "concat",
        });
        let kind = fused.layer(i).kind();
        if kind == "dense" && aux[i] {
            let w = &mut fused.layer_mut(i).tensors_mut()[0];
            let units = w.shape()[1];
            w.data_mut()[base_features * units..].iter_mut().for_each(|v| *v = 0.0);
        } else if aux[i] && kind != "concat" {
            for t in fused.layer_mut(i).tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}
