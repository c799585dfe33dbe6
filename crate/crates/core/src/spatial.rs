//! Exact k-nearest-neighbor search over a point cloud.
//!
//! Neighbors never include the query point itself, come back sorted by
//! ascending distance and, on equal distance, by ascending point index. The
//! brute-force scan [`knn_brute_force`] obeys the same contract and is the
//! oracle the tree is tested against.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{dist2, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable kd-tree over a cloud's positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.positions())
    }

    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                actual: points.len(),
            });
        }
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `min(k, N-1)` nearest other points of point `query`.
    pub fn knn(&self, query: usize, k: usize) -> Result<Vec<Neighbor>> {
        if query >= self.points.len() {
            return Err(Error::IndexOutOfRange {
                index: query,
                len: self.points.len(),
            });
        }
        Ok(self.knn_unchecked(query, k))
    }

    pub(crate) fn knn_unchecked(&self, query: usize, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len() - 1);
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, self.points[query], query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        found
            .into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.d2.sqrt(),
            })
            .collect()
    }

    /// Neighbor indices only.
    pub fn knn_indices(&self, query: usize, k: usize) -> Result<Vec<usize>> {
        Ok(self.knn(query, k)?.into_iter().map(|n| n.index).collect())
    }

    fn search(
        &self,
        node: usize,
        q: Vec3,
        skip: usize,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if i == skip {
                        continue;
                    }
                    let c = Candidate {
                        d2: dist2(q, self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, skip, k, heap);
                // Equal bound may still hide a tie with a lower index.
                if heap.len() < k || delta * delta <= heap.peek().unwrap().d2 {
                    self.search(far, q, skip, k, heap);
                }
            }
        }
    }
}

/// Max-heap entry ordered by `(distance², index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exhaustive O(N) scan with the same contract as [`SpatialIndex::knn`].
pub fn knn_brute_force(cloud: &PointCloud, query: usize, k: usize) -> Result<Vec<Neighbor>> {
    knn_brute_force_points(cloud.positions(), query, k)
}

pub fn knn_brute_force_points(points: &[Vec3], query: usize, k: usize) -> Result<Vec<Neighbor>> {
    if query >= points.len() {
        return Err(Error::IndexOutOfRange {
            index: query,
            len: points.len(),
        });
    }
    let q = points[query];
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, &p)| Candidate {
            d2: dist2(q, p),
            index: i,
        })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    Ok(all
        .into_iter()
        .map(|c| Neighbor {
            index: c.index,
            distance: c.d2.sqrt(),
        })
        .collect())
}

/// Neighbor lists for every point: `k` nearest others, nearest first.
pub fn knn_graph(index: &SpatialIndex, k: usize) -> Vec<Vec<usize>> {
    (0..index.point_count())
        .map(|i| index.knn_unchecked(i, k).into_iter().map(|n| n.index).collect())
        .collect()
}
