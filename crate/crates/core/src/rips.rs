//! Dimension-1 Vietoris–Rips persistence of (x, y, intensity) point clouds.
//!
//! The complex is truncated at the enclosing radius: at that scale some point
//! is within reach of every other point, the complex is a cone, and no
//! 1-cycle survives. Every non-tree edge therefore gets paired.
//!
//! Pairs are found by reducing the coboundary matrix (edges against
//! triangles) over Z/2, which yields the same persistence pairs as reducing
//! triangle boundaries against edges:
//!
//! * columns are edges in decreasing filtration order, rows are triangles;
//! * spanning-tree edges (paired with vertices in dimension 0) are cleared;
//! * the pivot of a column is its earliest triangle;
//! * triangle columns are never materialised; coboundaries are regenerated
//!   from the distance matrix on demand.
//!
//! Simplices are ordered by (filtration value, lexicographic vertices).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::types::{PersistenceDiagram, PersistencePoint};

/// Points (x, y, intensity) with every coordinate in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud3 {
    points: Vec<[f64; 3]>,
}

const COORD_SLACK: f64 = 1e-9;

impl PointCloud3 {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter()
                .any(|&v| !v.is_finite() || !(-COORD_SLACK..=1.0 + COORD_SLACK).contains(&v))
            {
                return Err(Error::invalid(format!(
                    "point {i} = {p:?} has a coordinate outside [0, 1]"
                )));
            }
        }
        Ok(PointCloud3 { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.points[i], &self.points[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn distance_matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = self.distance(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        d
    }
}

/// Lifts an h x w intensity channel (row-major) to the cloud
/// `(c / (w - 1), r / (h - 1), I[r, c])`.
pub fn image_to_cloud(channel: &[f64], h: usize, w: usize) -> Result<PointCloud3> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "image channel must be at least 2x2 to normalise coordinates, got {h}x{w}"
        )));
    }
    if channel.len() != h * w {
        return Err(Error::invalid(format!(
            "channel has {} values, expected {h}x{w}",
            channel.len()
        )));
    }
    let mut points = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let v = channel[r * w + c];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "intensity {v} at ({r}, {c}) outside [0, 1]"
                )));
            }
            points.push([c as f64 / (w - 1) as f64, r as f64 / (h - 1) as f64, v]);
        }
    }
    PointCloud3::new(points)
}

/// min over p of max over q of |p - q|.
pub fn enclosing_radius(cloud: &PointCloud3) -> f64 {
    enclosing_radius_from(&cloud.distance_matrix(), cloud.len())
}

fn enclosing_radius_from(dist: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| dist[i * n..(i + 1) * n].iter().cloned().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RipsOptions {
    /// Pair a column with its unreduced pivot without building the full
    /// coboundary when that pivot is still unclaimed.
    pub emergent_pairs: bool,
}

impl Default for RipsOptions {
    fn default() -> Self {
        RipsOptions {
            emergent_pairs: true,
        }
    }
}

/// (filtration bits, packed sorted vertices); lexicographic tuple order is
/// the simplex order because filtration values are non-negative.
type TriKey = (u64, u64);

const VERTEX_BITS: u32 = 21;

fn pack3(a: usize, b: usize, c: usize) -> u64 {
    let mut v = [a, b, c];
    v.sort_unstable();
    ((v[0] as u64) << (2 * VERTEX_BITS)) | ((v[1] as u64) << VERTEX_BITS) | v[2] as u64
}

struct Complex {
    n: usize,
    dist: Vec<f64>,
    threshold: f64,
    /// Edges sorted by (length, i, j) with i < j.
    edges: Vec<(f64, u32, u32)>,
}

impl Complex {
    fn build(cloud: &PointCloud3) -> Self {
        let n = cloud.len();
        let dist = cloud.distance_matrix();
        let threshold = enclosing_radius_from(&dist, n);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = dist[i * n + j];
                if d <= threshold {
                    edges.push((d, i as u32, j as u32));
                }
            }
        }
        edges.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Complex {
            n,
            dist,
            threshold,
            edges,
        }
    }

    #[inline]
    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Marks edges that merge components in Kruskal order; these are the
    /// dimension-0 deaths and are cleared from the dimension-1 columns.
    fn spanning_tree(&self) -> Vec<bool> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        self.edges
            .iter()
            .map(|&(_, i, j)| {
                let (ri, rj) = (find(&mut parent, i as usize), find(&mut parent, j as usize));
                if ri == rj {
                    false
                } else {
                    // Union toward the smaller root keeps this deterministic.
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                    true
                }
            })
            .collect()
    }

    fn for_each_cofacet(&self, edge: (f64, u32, u32), mut f: impl FnMut(TriKey)) {
        let (de, i, j) = (edge.0, edge.1 as usize, edge.2 as usize);
        let (row_i, row_j) = (&self.dist[i * self.n..], &self.dist[j * self.n..]);
        for k in 0..self.n {
            if k == i || k == j {
                continue;
            }
            let (dik, djk) = (row_i[k], row_j[k]);
            if dik <= self.threshold && djk <= self.threshold {
                let diam = de.max(dik).max(djk);
                f((diam.to_bits(), pack3(i, j, k)));
            }
        }
    }

    /// Earliest cofacet. A triangle with the edge's own length is the
    /// smallest possible filtration value, and among those the vertex order
    /// grows with the third vertex, so the first hit in k order wins.
    fn min_cofacet(&self, edge: (f64, u32, u32)) -> Option<TriKey> {
        let (de, i, j) = (edge.0, edge.1 as usize, edge.2 as usize);
        for k in 0..self.n {
            if k != i && k != j && self.d(i, k) <= de && self.d(j, k) <= de {
                return Some((de.to_bits(), pack3(i, j, k)));
            }
        }
        let mut best: Option<TriKey> = None;
        self.for_each_cofacet(edge, |key| {
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        });
        best
    }
}

/// Pops the lowest entry with odd multiplicity and leaves it in the heap.
fn heap_pivot(heap: &mut BinaryHeap<Reverse<TriKey>>) -> Option<TriKey> {
    loop {
        let top = heap.pop()?;
        if heap.peek() == Some(&top) {
            heap.pop();
            continue;
        }
        heap.push(top);
        return Some(top.0);
    }
}

/// All finite (birth, death) pairs of dimension 1, including zero-length ones.
pub fn rips_pairs(cloud: &PointCloud3, options: RipsOptions) -> Vec<(f64, f64)> {
    if cloud.len() < 3 {
        return Vec::new();
    }
    let cx = Complex::build(cloud);
    let tree = cx.spanning_tree();

    // pivot triangle -> column edge index
    let mut pivots: HashMap<TriKey, u32> = HashMap::new();
    // reduction (V) columns that are not just the column's own edge
    let mut combos: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut pairs = Vec::new();
    let mut heap: BinaryHeap<Reverse<TriKey>> = BinaryHeap::new();

    for e in (0..cx.edges.len()).rev() {
        if tree[e] {
            continue;
        }
        let edge = cx.edges[e];
        if options.emergent_pairs {
            match cx.min_cofacet(edge) {
                Some(t) if !pivots.contains_key(&t) => {
                    pivots.insert(t, e as u32);
                    pairs.push((edge.0, f64::from_bits(t.0)));
                    continue;
                }
                None => continue,
                _ => {}
            }
        }

        heap.clear();
        cx.for_each_cofacet(edge, |k| heap.push(Reverse(k)));
        let mut combo = vec![e as u32];
        while let Some(pivot) = heap_pivot(&mut heap) {
            let Some(&other) = pivots.get(&pivot) else {
                pivots.insert(pivot, e as u32);
                pairs.push((edge.0, f64::from_bits(pivot.0)));
                break;
            };
            let other_combo = combos.get(&other).cloned().unwrap_or_else(|| vec![other]);
            for &f in &other_combo {
                cx.for_each_cofacet(cx.edges[f as usize], |k| heap.push(Reverse(k)));
            }
            combo = symmetric_difference(&combo, &other_combo);
        }
        if combo.len() > 1 || combo.first() != Some(&(e as u32)) {
            combos.insert(e as u32, combo);
        }
    }
    pairs
}

fn symmetric_difference(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
    sa.sort_unstable();
    sb.sort_unstable();
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    let (mut i, mut j) = (0, 0);
    while i < sa.len() && j < sb.len() {
        match sa[i].cmp(&sb[j]) {
            std::cmp::Ordering::Less => {
                out.push(sa[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(sb[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&sa[i..]);
    out.extend_from_slice(&sb[j..]);
    out
}

/// Dimension-1 diagram keeping pairs whose lifetime is positive and at least
/// `lifetime_floor`, sorted by (birth, lifetime).
pub fn rips_pd1(cloud: &PointCloud3, lifetime_floor: f64) -> Result<PersistenceDiagram> {
    rips_pd1_with(cloud, lifetime_floor, RipsOptions::default())
}

pub fn rips_pd1_with(
    cloud: &PointCloud3,
    lifetime_floor: f64,
    options: RipsOptions,
) -> Result<PersistenceDiagram> {
    if cloud.len() < 2 {
        return Err(Error::invalid("dimension-1 persistence needs at least two points"));
    }
    if !(lifetime_floor >= 0.0) {
        return Err(Error::invalid("lifetime floor must be non-negative"));
    }
    let points = rips_pairs(cloud, options)
        .into_iter()
        .filter(|&(b, d)| d > b && d - b >= lifetime_floor)
        .map(|(b, d)| PersistencePoint {
            birth: b,
            lifetime: d - b,
        })
        .collect();
    Ok(PersistenceDiagram::new(1, points)?.sorted())
}

/// One dimension-1 diagram per channel of an h x w x c image (channels last).
pub fn image_pds(
    image: &[f32],
    h: usize,
    w: usize,
    c: usize,
    lifetime_floor: f64,
) -> Result<Vec<PersistenceDiagram>> {
    if image.len() != h * w * c || c == 0 {
        return Err(Error::invalid(format!(
            "image buffer of {} values does not match {h}x{w}x{c}",
            image.len()
        )));
    }
    (0..c)
        .map(|ch| {
            let channel: Vec<f64> = image.iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
            rips_pd1(&image_to_cloud(&channel, h, w)?, lifetime_floor)
        })
        .collect()
}
