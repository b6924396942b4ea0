//! 0-dimensional sublevel-set persistence of sampled signals.
//!
//! Indices are swept in (value, index) order. A sample whose already-swept
//! neighbours are all absent starts a component; a sample joining two
//! components kills the younger one (larger birth under the same order). The
//! surviving component is closed at the global maximum so every point is
//! finite.

use crate::error::{Error, Result};
use crate::types::{PersistenceDiagram, PersistencePoint};

/// A t x n multichannel frame, row-major (time-step major).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    steps: usize,
    channels: usize,
    values: Vec<f64>,
}

impl SignalFrame {
    pub fn new(steps: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if steps == 0 || channels == 0 {
            return Err(Error::invalid("signal frame needs at least one step and channel"));
        }
        if values.len() != steps * channels {
            return Err(Error::invalid(format!(
                "frame of {steps}x{channels} needs {} values, got {}",
                steps * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signal frame contains non-finite values"));
        }
        Ok(SignalFrame {
            steps,
            channels,
            values,
        })
    }

    pub fn from_f32(steps: usize, channels: usize, values: &[f32]) -> Result<Self> {
        Self::new(steps, channels, values.iter().map(|&v| v as f64).collect())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Sublevel persistence of a univariate signal, as a dimension-0 diagram sorted
/// by (birth, lifetime).
pub fn sublevel_pd(signal: &[f64]) -> Result<PersistenceDiagram> {
    if signal.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite signal value at index {i}")));
    }
    let n = signal.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| signal[a].total_cmp(&signal[b]).then(a.cmp(&b)));
    // rank[i] = position of i in the sweep; the component root carries the
    // rank of its minimum so "younger" is a plain comparison.
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    const UNSEEN: usize = usize::MAX;
    let mut parent = vec![UNSEEN; n];
    let mut birth_rank = vec![0usize; n];
    let mut points = Vec::new();

    for &i in &order {
        parent[i] = i;
        birth_rank[i] = rank[i];
        for j in [i.wrapping_sub(1), i + 1] {
            if j >= n || parent[j] == UNSEEN {
                continue;
            }
            let ri = find(&mut parent, i);
            let rj = find(&mut parent, j);
            if ri == rj {
                continue;
            }
            let (elder, younger) = if birth_rank[ri] < birth_rank[rj] {
                (ri, rj)
            } else {
                (rj, ri)
            };
            // A fresh singleton joining an existing component is not a
            // merge of two born components.
            if younger != i || birth_rank[younger] != rank[i] {
                let b = signal[order[birth_rank[younger]]];
                points.push(PersistencePoint {
                    birth: b,
                    lifetime: signal[i] - b,
                });
            }
            parent[younger] = elder;
        }
    }

    let gmin = signal[order[0]];
    let gmax = signal[order[n - 1]];
    points.push(PersistencePoint {
        birth: gmin,
        lifetime: gmax - gmin,
    });
    Ok(PersistenceDiagram::new(0, points)?.sorted())
}

/// One dimension-0 diagram per channel of the frame, in channel order.
pub fn frame_pds(frame: &SignalFrame) -> Result<Vec<PersistenceDiagram>> {
    (0..frame.channels())
        .map(|c| sublevel_pd(&frame.column(c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn pairs(pd: &PersistenceDiagram) -> Vec<(f64, f64)> {
        pd.points().iter().map(|p| (p.birth, p.lifetime)).collect()
    }

    #[test]
    fn monotone_signal() {
        assert_eq!(pairs(&sublevel_pd(&[1., 2., 3., 4.]).unwrap()), vec![(1., 3.)]);
    }

    #[test]
    fn two_minima() {
        assert_eq!(
            pairs(&sublevel_pd(&[0., 2., 1., 3.]).unwrap()),
            vec![(0., 3.), (1., 1.)]
        );
    }

    #[test]
    fn flat_signal() {
        assert_eq!(pairs(&sublevel_pd(&[2.5; 3]).unwrap()), vec![(2.5, 0.)]);
    }

    #[test]
    fn single_sample() {
        assert_eq!(pairs(&sublevel_pd(&[7.0]).unwrap()), vec![(7., 0.)]);
    }

    #[test]
    fn plateau_minimum_births_once() {
        // Minimum plateau at indices 1..3, second minimum at index 5.
        let pd = sublevel_pd(&[3., 0., 0., 0., 2., 1., 4.]).unwrap();
        assert_eq!(pairs(&pd), vec![(0., 4.), (1., 1.)]);
    }

    #[test]
    fn tie_break_follows_index_order() {
        // Index 0 is a local minimum under (value, index); it dies at index 1.
        let pd = sublevel_pd(&[1., 1., 0.]).unwrap();
        assert_eq!(pairs(&pd), vec![(0., 1.), (1., 0.)]);
    }

    #[test]
    fn errors() {
        assert!(sublevel_pd(&[]).is_err());
        assert!(sublevel_pd(&[0., f64::NAN]).is_err());
        assert!(SignalFrame::new(2, 1, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn frame_columns() {
        let f = SignalFrame::new(4, 2, vec![1., 4., 2., 3., 3., 2., 4., 1.]).unwrap();
        let pds = frame_pds(&f).unwrap();
        assert_eq!(pds.len(), 2);
        assert_eq!(pairs(&pds[0]), vec![(1., 3.)]);
        assert_eq!(pairs(&pds[1]), vec![(1., 3.)]);
        let single = SignalFrame::new(3, 1, vec![0., 1., 0.5]).unwrap();
        assert_eq!(frame_pds(&single).unwrap(), vec![sublevel_pd(&[0., 1., 0.5]).unwrap()]);
    }

    #[test]
    fn point_count_equals_tie_broken_minima() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let n = 1 + rng.below(40);
            // Coarse values force plenty of ties.
            let s: Vec<f64> = (0..n).map(|_| rng.below(5) as f64).collect();
            let key = |i: usize| (s[i], i);
            let lt = |a: (f64, usize), b: (f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
            let minima = (0..n)
                .filter(|&i| {
                    (i == 0 || lt(key(i), key(i - 1))) && (i + 1 == n || lt(key(i), key(i + 1)))
                })
                .count();
            let pd = sublevel_pd(&s).unwrap();
            assert_eq!(pd.len(), minima);
            let gmax = s.iter().cloned().fold(f64::MIN, f64::max);
            let gmin = s.iter().cloned().fold(f64::MAX, f64::min);
            let essential = pd
                .points()
                .iter()
                .filter(|p| p.birth == gmin && p.death() == gmax)
                .count();
            assert!(essential >= 1);
        }
    }
}
