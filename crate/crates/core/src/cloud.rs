//! Point clouds and per-point label maps.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Vec3};

/// Tolerance on `|n| - 1` for stored normals.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Marks a point that an algorithm has not assigned yet. Never stored in a
/// [`LabelMap`].
pub(crate) const UNASSIGNED: usize = usize::MAX;

/// `N` positions with optional per-point unit normals.
///
/// Constructed through [`PointCloud::new`] / [`PointCloud::with_normals`],
/// which enforce the invariants, or [`PointCloud::from_raw`], which does not
/// and exists so that [`PointCloud::validate`] has something to report on.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    Empty,
    NonFiniteCoordinate,
    NormalCountMismatch { normals: usize, points: usize },
    NonUnitNormal { norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// Offending point, when the violation is tied to one.
    pub index: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.index {
            write!(f, "point {i}: ")?;
        }
        match self.kind {
            ViolationKind::Empty => write!(f, "cloud has no points"),
            ViolationKind::NonFiniteCoordinate => write!(f, "non-finite coordinate"),
            ViolationKind::NormalCountMismatch { normals, points } => {
                write!(f, "{normals} normals for {points} points")
            }
            ViolationKind::NonUnitNormal { norm } => write!(f, "normal has norm {norm}"),
        }
    }
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        Self::from_raw(positions, None).checked()
    }

    pub fn with_normals(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        Self::from_raw(positions, Some(normals)).checked()
    }

    pub fn from_raw(positions: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Self {
        PointCloud { positions, normals }
    }

    fn checked(self) -> Result<Self> {
        match self.validate().first() {
            None => Ok(self),
            Some(v) => Err(Error::InvalidCloud(v.to_string())),
        }
    }

    /// Every invariant violation, in point order. Empty when the cloud is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.positions.is_empty() {
            out.push(Violation {
                index: None,
                kind: ViolationKind::Empty,
            });
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                out.push(Violation {
                    index: Some(i),
                    kind: ViolationKind::NonFiniteCoordinate,
                });
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.positions.len() {
                out.push(Violation {
                    index: None,
                    kind: ViolationKind::NormalCountMismatch {
                        normals: normals.len(),
                        points: self.positions.len(),
                    },
                });
            }
            for (i, n) in normals.iter().enumerate() {
                let norm = geom::norm(*n);
                if !((norm - 1.0).abs() <= NORMAL_UNIT_TOL) {
                    out.push(Violation {
                        index: Some(i),
                        kind: ViolationKind::NonUnitNormal { norm },
                    });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Same positions, new normals.
    pub fn replace_normals(&self, normals: Vec<Vec3>) -> Result<Self> {
        Self::with_normals(self.positions.clone(), normals)
    }

    pub fn without_normals(&self) -> Self {
        PointCloud {
            positions: self.positions.clone(),
            normals: None,
        }
    }

    pub fn centroid(&self) -> Vec3 {
        geom::centroid(&self.positions)
    }

    /// Points (and normals) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// `p -> R p + t`; normals are rotated.
    pub fn rigid_transform(&self, rotation: &Mat3, translation: Vec3) -> Self {
        PointCloud {
            positions: self
                .positions
                .iter()
                .map(|&p| geom::add(geom::mat_vec(rotation, p), translation))
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|&n| geom::mat_vec(rotation, n)).collect()),
        }
    }

    /// Height of the axis-aligned bounding box along the largest extent.
    pub fn extent(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max)
    }
}

/// Per-point cluster labels. Every value lies in `[0, num_clusters)` and
/// every value in that range is used by at least one point.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl LabelMap {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; num_clusters];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidLabels(format!(
                "label {missing} unused while {num_clusters} clusters are implied"
            )));
        }
        Ok(LabelMap {
            labels,
            num_clusters,
        })
    }

    /// Arbitrary integer values compacted to `[0, q)` by rank, so a map that
    /// is already valid comes back unchanged.
    pub fn from_raw(values: &[i64]) -> Self {
        let mut distinct: Vec<i64> = values.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = values
            .iter()
            .map(|v| distinct.binary_search(v).expect("value is present"))
            .collect();
        LabelMap {
            labels,
            num_clusters: distinct.len(),
        }
    }

    /// All points in one cluster.
    pub fn constant(len: usize) -> Self {
        LabelMap {
            labels: vec![0; len],
            num_clusters: usize::from(len > 0),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Population of each cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_clusters];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Point indices grouped by label.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Renumbers labels in order of first occurrence, starting at 0.
    pub fn relabel_canonical(&self) -> LabelMap {
        let mut map = HashMap::with_capacity(self.num_clusters);
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        LabelMap {
            labels,
            num_clusters: map.len(),
        }
    }

    /// True when both maps induce the same partition of the points.
    pub fn same_partition(&self, other: &LabelMap) -> bool {
        self.len() == other.len() && self.relabel_canonical() == other.relabel_canonical()
    }

    /// Builds from algorithm output that may use any label values
    /// (but never [`UNASSIGNED`]); canonical first-occurrence numbering.
    pub(crate) fn from_assignment(labels: &[usize]) -> Self {
        debug_assert!(labels.iter().all(|&l| l != UNASSIGNED));
        LabelMap {
            labels: labels.to_vec(),
            num_clusters: 0,
        }
        .relabel_canonical()
    }
}
