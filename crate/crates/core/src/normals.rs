//! Per-point normals from local plane fits.
//!
//! The normal of a point is the eigenvector of the smallest eigenvalue of the
//! covariance of the point and its `k` nearest neighbors. Curvature is the
//! surface variation `λ0 / (λ0 + λ1 + λ2)`, which is 0 on a plane and at most
//! 1/3.

use log::warn;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::spatial::SpatialIndex;

pub const DEFAULT_NORMAL_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEstimate {
    pub normal: Vec3,
    pub curvature: f64,
    /// The neighborhood collapsed to a point; `normal` is the +z fallback.
    pub degenerate: bool,
}

pub fn estimate_normals(
    cloud: &PointCloud,
    index: &SpatialIndex,
    k: usize,
) -> Result<Vec<NormalEstimate>> {
    if cloud.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            actual: cloud.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "normal estimation needs k >= 2, got {k}"
        )));
    }
    if index.point_count() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "index vs cloud",
            left: index.point_count(),
            right: cloud.len(),
        });
    }

    let mut degenerate = 0usize;
    let out: Vec<NormalEstimate> = (0..cloud.len())
        .map(|i| {
            let mut hood = Vec::with_capacity(k + 1);
            hood.push(cloud.position(i));
            hood.extend(
                index
                    .knn_unchecked(i, k)
                    .into_iter()
                    .map(|n| cloud.position(n.index)),
            );
            let est = fit_plane(&hood);
            degenerate += usize::from(est.degenerate);
            est
        })
        .collect();
    if degenerate > 0 {
        warn!("{degenerate} point(s) have coincident neighborhoods; normal set to +z");
    }
    Ok(out)
}

/// Plane fit of one neighborhood. The sign is canonical (largest-magnitude
/// component positive) until [`orient_normals`] runs.
pub fn fit_plane(points: &[Vec3]) -> NormalEstimate {
    let cov = geom::covariance(points);
    let eig = geom::sym_eigen(&cov);
    let trace: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    // Exact coincidence; the mean's round-off would otherwise leave a tiny
    // spurious spread.
    let coincident = points.iter().all(|p| *p == points[0]);
    if coincident || !(trace > 0.0) {
        return NormalEstimate {
            normal: [0.0, 0.0, 1.0],
            curvature: 0.0,
            degenerate: true,
        };
    }
    let mut n = eig.vectors[0];
    let major = (0..3)
        .max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()).then(b.cmp(&a)))
        .unwrap();
    if n[major] < 0.0 {
        n = geom::scale(n, -1.0);
    }
    NormalEstimate {
        normal: n,
        curvature: (eig.values[0].max(0.0) / trace).clamp(0.0, 1.0 / 3.0),
        degenerate: false,
    }
}

/// Flips normals to point away from the cloud centroid. Normals orthogonal to
/// the centroid direction are left alone.
pub fn orient_normals(cloud: &PointCloud, normals: &[Vec3]) -> Vec<Vec3> {
    let c = cloud.centroid();
    cloud
        .positions()
        .iter()
        .zip(normals)
        .map(|(&p, &n)| {
            if geom::dot(n, geom::sub(p, c)) < 0.0 {
                geom::scale(n, -1.0)
            } else {
                n
            }
        })
        .collect()
}

/// Estimates, orients and attaches normals. Returns the new cloud and the
/// per-point curvature.
pub fn with_estimated_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, Vec<f64>)> {
    let index = SpatialIndex::build(cloud)?;
    let est = estimate_normals(cloud, &index, k)?;
    let raw: Vec<Vec3> = est.iter().map(|e| e.normal).collect();
    let oriented = orient_normals(cloud, &raw);
    let curvature = est.iter().map(|e| e.curvature).collect();
    Ok((cloud.replace_normals(oriented)?, curvature))
}

/// Curvature only, for clouds that already carry normals.
pub fn curvatures(cloud: &PointCloud, index: &SpatialIndex, k: usize) -> Result<Vec<f64>> {
    Ok(estimate_normals(cloud, index, k)?
        .into_iter()
        .map(|e| e.curvature)
        .collect())
}
