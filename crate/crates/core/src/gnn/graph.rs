//! Neighbourhood graphs used by the network.

use std::cmp::Ordering;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geom::{covariance, Vec3};
use crate::spatial::{knn_graph, SpatialIndex};

/// Fixed out-degree neighbour lists, nearest first, never containing the
/// node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    k: usize,
    idx: Vec<u32>,
}

impl Neighbors {
    /// From explicit lists, which must all have the same non-zero length.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let k = lists.first().map_or(0, Vec::len);
        assert!(k > 0 && lists.iter().all(|l| l.len() == k), "lists must share a non-zero length");
        Neighbors {
            k,
            idx: lists.iter().flatten().map(|&i| i as u32).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.idx.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        self.idx.chunks(self.k).map(|c| c.iter().map(|&i| i as usize).collect()).collect()
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("graph degree must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(Error::TooFewPoints {
            required: k + 1,
            actual: n,
        });
    }
    Ok(())
}

/// `k` nearest neighbours in 3-D space.
pub fn coordinate_graph(positions: &[Vec3], k: usize) -> Result<Neighbors> {
    check_k(positions.len(), k)?;
    let index = SpatialIndex::from_points(positions)?;
    Ok(Neighbors::from_lists(&knn_graph(&index, k)))
}

/// `k` nearest neighbours in feature space (rows of `x`), by squared
/// Euclidean distance with ties to the lower index. Distances come from the
/// Gram matrix, `|a|² + |b|² − 2a·b`.
pub fn feature_graph<T: Real>(x: &Tensor<T>, k: usize) -> Result<Neighbors> {
    let (n, f) = (x.rows(), x.cols());
    check_k(n, k)?;
    if !x.is_finite() {
        return Err(Error::Numerical("non-finite features".into()));
    }
    let data = x.data();
    let sq: Vec<T> = data.chunks(f).map(|r| r.iter().map(|&v| v * v).sum()).collect();
    if sq.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("feature norms overflow".into()));
    }
    let mut gram = vec![T::zero(); n * n];
    T::gemm(n, f, n, T::one(), data, false, data, true, T::zero(), &mut gram);
    let two = T::from_f64(2.0);
    let mut idx = Vec::with_capacity(n * k);
    let mut row: Vec<(T, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| (sq[i] + sq[j] - two * gram[i * n + j], j as u32)));
        let cmp = |a: &(T, u32), b: &(T, u32)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
        row.select_nth_unstable_by(k - 1, cmp);
        row[..k].sort_unstable_by(cmp);
        idx.extend(row[..k].iter().map(|&(_, j)| j));
    }
    Ok(Neighbors { k, idx })
}

/// Explicit edge features `[x_i, x_i − x_j]`, shape `N × k × 2F`. Used as a
/// reference for the fused edge convolution.
pub fn edge_features<T: Real>(x: &Tensor<T>, graph: &Neighbors) -> Result<Tensor<T>> {
    let (n, f) = (x.rows(), x.cols());
    if graph.len() != n {
        return Err(Error::LengthMismatch {
            what: "graph nodes vs feature rows",
            left: graph.len(),
            right: n,
        });
    }
    let mut out = Vec::with_capacity(n * graph.k() * 2 * f);
    for i in 0..n {
        let xi = x.row(i);
        for &j in graph.of(i) {
            let xj = x.row(j as usize);
            out.extend_from_slice(xi);
            out.extend(xi.iter().zip(xj).map(|(a, b)| *a - *b));
        }
    }
    Tensor::new(vec![n, graph.k(), 2 * f], out)
}

/// Per-point shape descriptor: the mean-centred covariance of the point's
/// graph neighbours (divisor `k`), flattened row-major.
pub fn covariance_features(positions: &[Vec3], graph: &Neighbors) -> Vec<[f64; 9]> {
    (0..graph.len())
        .map(|i| {
            let pts: Vec<Vec3> = graph.of(i).iter().map(|&j| positions[j as usize]).collect();
            let c = covariance(pts.iter());
            let mut out = [0.0; 9];
            for (o, v) in out.iter_mut().zip(c.iter().flatten()) {
                *o = *v;
            }
            out
        })
        .collect()
}
