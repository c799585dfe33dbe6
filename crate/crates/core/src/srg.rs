//! Seed region growing.
//!
//! Regions grow breadth-first over the KNN graph. A neighbor `b` of a
//! frontier point `a` joins the region when it is still unassigned, lies
//! within `euclid_threshold_factor × mean 1-NN spacing` of `a`, and the
//! angle between the normal lines of `a` and `b` is at most
//! `normal_threshold_deg`. Accepted points become frontier points in turn,
//! except the most curved ones (above the `curvature_stop_quantile` of the
//! cloud): they join but do not propagate, which keeps noisy creases from
//! bridging two surfaces. When the frontier runs dry the next region starts at the flattest
//! unassigned point. [`reduce_to_k`] then merges or splits regions until the
//! requested part count is reached.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud, UNASSIGNED};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::normals;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrgConfig {
    /// Largest admissible angle between the normal lines of a frontier point
    /// and a candidate, in degrees.
    pub normal_threshold_deg: f64,
    /// Distance threshold as a multiple of the mean nearest-neighbor spacing.
    pub euclid_threshold_factor: f64,
    pub knn_k: usize,
    /// Regions smaller than this are merged away before anything else.
    pub min_region_size: usize,
    /// Points whose curvature exceeds this quantile of the cloud's curvature
    /// join regions but do not grow them. 1.0 (the default) disables the
    /// stop; the pipeline enables it for noisy scans.
    pub curvature_stop_quantile: f64,
}

impl Default for SrgConfig {
    fn default() -> Self {
        SrgConfig {
            normal_threshold_deg: 15.0,
            euclid_threshold_factor: 2.5,
            knn_k: 25,
            min_region_size: 20,
            curvature_stop_quantile: 1.0,
        }
    }
}

impl SrgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.normal_threshold_deg > 0.0 && self.normal_threshold_deg <= 90.0) {
            return bad(format!(
                "normal_threshold_deg must be in (0, 90], got {}",
                self.normal_threshold_deg
            ));
        }
        if !(self.euclid_threshold_factor > 0.0 && self.euclid_threshold_factor.is_finite()) {
            return bad(format!(
                "euclid_threshold_factor must be positive, got {}",
                self.euclid_threshold_factor
            ));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.min_region_size == 0 {
            return bad("min_region_size must be at least 1".into());
        }
        if !(self.curvature_stop_quantile > 0.0 && self.curvature_stop_quantile <= 1.0) {
            return bad(format!(
                "curvature_stop_quantile must be in (0, 1], got {}",
                self.curvature_stop_quantile
            ));
        }
        Ok(())
    }
}

/// Mean distance from each point to its nearest neighbor.
pub fn mean_nn_spacing(cloud: &PointCloud, index: &SpatialIndex) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: cloud.len(),
        });
    }
    let total: f64 = (0..cloud.len())
        .map(|i| index.knn_unchecked(i, 1)[0].distance)
        .sum();
    Ok(total / cloud.len() as f64)
}

/// Region growing with curvature taken from a fresh plane fit over
/// `config.knn_k` neighbors.
pub fn grow_regions(
    cloud: &PointCloud,
    index: &SpatialIndex,
    config: &SrgConfig,
    rng_seed: u64,
) -> Result<LabelMap> {
    if !cloud.has_normals() {
        return Err(Error::MissingNormals);
    }
    let curvature = if cloud.len() >= 3 {
        normals::curvatures(cloud, index, config.knn_k.max(2))?
    } else {
        vec![0.0; cloud.len()]
    };
    grow_regions_with_curvature(cloud, index, config, &curvature, rng_seed)
}

/// Region growing with caller-supplied per-point curvature (seed order and
/// the propagation stop).
pub fn grow_regions_with_curvature(
    cloud: &PointCloud,
    index: &SpatialIndex,
    config: &SrgConfig,
    curvature: &[f64],
    rng_seed: u64,
) -> Result<LabelMap> {
    config.validate()?;
    let normals = cloud.normals().ok_or(Error::MissingNormals)?;
    let n = cloud.len();
    if curvature.len() != n {
        return Err(Error::LengthMismatch {
            what: "curvature vs cloud",
            left: curvature.len(),
            right: n,
        });
    }
    let max_dist = config.euclid_threshold_factor * mean_nn_spacing(cloud, index)?;
    let min_cos = config.normal_threshold_deg.to_radians().cos();

    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            index
                .knn_unchecked(i, config.knn_k)
                .into_iter()
                .map(|nb| (nb.index, nb.distance))
                .collect()
        })
        .collect();

    let stop = curvature_stop(curvature, config.curvature_stop_quantile);
    let propagates: Vec<bool> = curvature.iter().map(|&c| quantize(c) <= stop).collect();
    let seeds = seed_order(curvature, rng_seed);
    let mut labels = vec![UNASSIGNED; n];
    let mut next_label = 0;
    let mut frontier = VecDeque::new();
    for seed in seeds {
        if labels[seed] != UNASSIGNED {
            continue;
        }
        labels[seed] = next_label;
        frontier.push_back(seed);
        while let Some(a) = frontier.pop_front() {
            for &(b, d) in &neighbors[a] {
                if labels[b] == UNASSIGNED
                    && d <= max_dist
                    && geom::dot(normals[a], normals[b]).abs() >= min_cos
                {
                    labels[b] = next_label;
                    if propagates[b] {
                        frontier.push_back(b);
                    }
                }
            }
        }
        next_label += 1;
    }
    Ok(LabelMap::from_assignment(&labels))
}

/// Curvature is compared after rounding to 1e-9 so that rounding noise
/// (flat surfaces fit to ~1e-17) cannot change the outcome, e.g. under a
/// rigid motion of the cloud.
fn quantize(curvature: f64) -> i64 {
    (curvature * 1e9).round() as i64
}

/// Quantized curvature at quantile `q` (lower order statistic); no stop for
/// `q = 1`.
fn curvature_stop(curvature: &[f64], q: f64) -> i64 {
    if q >= 1.0 || curvature.is_empty() {
        return i64::MAX;
    }
    let mut sorted: Vec<i64> = curvature.iter().map(|&c| quantize(c)).collect();
    sorted.sort_unstable();
    sorted[((sorted.len() - 1) as f64 * q) as usize]
}

/// Flattest first by quantized curvature; ties follow a seeded shuffle.
fn seed_order(curvature: &[f64], rng_seed: u64) -> Vec<usize> {
    let mut rank: Vec<usize> = (0..curvature.len()).collect();
    rank.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut tiebreak = vec![0; curvature.len()];
    for (r, &i) in rank.iter().enumerate() {
        tiebreak[i] = r;
    }
    let key = |i: usize| quantize(curvature[i]);
    let mut order: Vec<usize> = (0..curvature.len()).collect();
    order.sort_by_key(|&i| (key(i), tiebreak[i]));
    order
}

struct Region {
    members: Vec<usize>,
    sum: Vec3,
}

impl Region {
    fn centroid(&self) -> Vec3 {
        geom::scale(self.sum, 1.0 / self.members.len() as f64)
    }
}

/// Merges or splits regions until exactly `target_parts` remain.
///
/// Regions below `config.min_region_size` are merged first. While too many
/// regions remain, the smallest is merged into the region it shares the most
/// KNN edges with (ties: closer centroid, then lower label; a region without
/// any neighbor goes to the closest centroid). While too few remain, the
/// largest is split in two by 2-means on positions.
pub fn reduce_to_k(
    cloud: &PointCloud,
    labels: &LabelMap,
    index: &SpatialIndex,
    target_parts: usize,
    config: &SrgConfig,
) -> Result<LabelMap> {
    let n = cloud.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels vs cloud",
            left: labels.len(),
            right: n,
        });
    }
    if target_parts == 0 || target_parts > n {
        return Err(Error::InvalidConfig(format!(
            "cannot form {target_parts} parts from {n} points"
        )));
    }
    if labels.num_clusters() == target_parts {
        return Ok(labels.clone());
    }

    let mut regions: Vec<Option<Region>> = labels
        .groups()
        .into_iter()
        .map(|members| {
            let sum = members
                .iter()
                .fold([0.0; 3], |s, &i| geom::add(s, cloud.position(i)));
            Some(Region { members, sum })
        })
        .collect();
    let mut alive = regions.len();

    if alive > 1 {
        let mut adjacency: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); regions.len()];
        for i in 0..n {
            let li = labels.get(i);
            for nb in index.knn_unchecked(i, config.knn_k) {
                let lj = labels.get(nb.index);
                if li != lj {
                    *adjacency[li].entry(lj).or_default() += 1;
                    *adjacency[lj].entry(li).or_default() += 1;
                }
            }
        }

        let smallest = |regions: &[Option<Region>]| {
            regions
                .iter()
                .enumerate()
                .filter_map(|(l, r)| r.as_ref().map(|r| (r.members.len(), l)))
                .min()
                .expect("at least one region")
        };
        loop {
            if alive <= 1 {
                break;
            }
            let (size, victim) = smallest(&regions);
            if size >= config.min_region_size && alive <= target_parts {
                break;
            }
            let into = merge_target(&regions, &adjacency, victim);
            let gone = regions[victim].take().unwrap();
            let dst = regions[into].as_mut().unwrap();
            dst.sum = geom::add(dst.sum, gone.sum);
            dst.members.extend(gone.members);
            let edges = std::mem::take(&mut adjacency[victim]);
            for (other, w) in edges {
                adjacency[other].remove(&victim);
                if other != into {
                    *adjacency[into].entry(other).or_default() += w;
                    *adjacency[other].entry(into).or_default() += w;
                }
            }
            alive -= 1;
        }
    }

    while alive < target_parts {
        let (_, largest) = regions
            .iter()
            .enumerate()
            .filter_map(|(l, r)| r.as_ref().map(|r| (std::cmp::Reverse(r.members.len()), l)))
            .min()
            .unwrap();
        let region = regions[largest].take().unwrap();
        let (a, b) = split_two_means(cloud.positions(), &region.members);
        for part in [a, b] {
            let sum = part
                .iter()
                .fold([0.0; 3], |s, &i| geom::add(s, cloud.position(i)));
            regions.push(Some(Region { members: part, sum }));
        }
        regions[largest] = regions.pop().unwrap();
        alive += 1;
    }

    let mut out = vec![UNASSIGNED; n];
    for (l, r) in regions.iter().enumerate() {
        if let Some(r) = r {
            for &i in &r.members {
                out[i] = l;
            }
        }
    }
    Ok(LabelMap::from_assignment(&out))
}

fn merge_target(
    regions: &[Option<Region>],
    adjacency: &[BTreeMap<usize, usize>],
    victim: usize,
) -> usize {
    let c = regions[victim].as_ref().unwrap().centroid();
    let dist = |l: usize| geom::dist2(c, regions[l].as_ref().unwrap().centroid());
    let best_adjacent = adjacency[victim].iter().max_by(|(&la, &wa), (&lb, &wb)| {
        wa.cmp(&wb)
            .then(dist(lb).total_cmp(&dist(la)))
            .then(lb.cmp(&la))
    });
    if let Some((&l, _)) = best_adjacent {
        return l;
    }
    (0..regions.len())
        .filter(|&l| l != victim && regions[l].is_some())
        .min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
        .expect("another region exists")
}

/// Splits `members` in two with Lloyd's 2-means, seeded by the member
/// farthest from the centroid and the member farthest from that one. Both
/// halves are non-empty whenever `members.len() >= 2`.
pub(crate) fn split_two_means(points: &[Vec3], members: &[usize]) -> (Vec<usize>, Vec<usize>) {
    debug_assert!(members.len() >= 2);
    let c = geom::centroid(members.iter().map(|&i| &points[i]));
    let farthest_from = |q: Vec3| {
        members
            .iter()
            .copied()
            .max_by(|&a, &b| {
                geom::dist2(points[a], q)
                    .total_cmp(&geom::dist2(points[b], q))
                    .then(b.cmp(&a))
            })
            .unwrap()
    };
    let first = farthest_from(c);
    let second = farthest_from(points[first]);
    let mut centers = [points[first], points[second]];
    let mut assign = vec![false; members.len()];
    for _ in 0..100 {
        let next: Vec<bool> = members
            .iter()
            .map(|&i| geom::dist2(points[i], centers[1]) < geom::dist2(points[i], centers[0]))
            .collect();
        let changed = next != assign;
        assign = next;
        for (side, center) in centers.iter_mut().enumerate() {
            let on_side = members
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == (side == 1))
                .map(|(&i, _)| &points[i]);
            *center = geom::centroid(on_side);
        }
        if !changed {
            break;
        }
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (&i, &a) in members.iter().zip(&assign) {
        if a {
            right.push(i);
        } else {
            left.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        // Coincident points: any balanced cut will do.
        let mut all = members.to_vec();
        all.sort_unstable();
        let right = all.split_off(all.len() / 2);
        return (all, right);
    }
    (left, right)
}

/// Region growing followed by reduction to `target_parts` labels, numbered
/// canonically. Normals are estimated (over `config.knn_k` neighbors) when
/// the cloud carries none.
pub fn srg_segment(
    cloud: &PointCloud,
    config: &SrgConfig,
    target_parts: usize,
    rng_seed: u64,
) -> Result<LabelMap> {
    config.validate()?;
    if target_parts < 1 || target_parts > cloud.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot form {target_parts} parts from {} points",
            cloud.len()
        )));
    }
    if cloud.len() == 1 {
        return Ok(LabelMap::constant(1));
    }
    let index = SpatialIndex::build(cloud)?;
    let (cloud, curvature) = prepare_normals(cloud, &index, config.knn_k)?;
    let grown = grow_regions_with_curvature(&cloud, &index, config, &curvature, rng_seed)?;
    let reduced = reduce_to_k(&cloud, &grown, &index, target_parts, config)?;
    Ok(reduced.relabel_canonical())
}

/// The grown regions alone, before any reduction, with normals prepared as
/// in [`srg_segment`].
pub fn srg_regions(cloud: &PointCloud, config: &SrgConfig, rng_seed: u64) -> Result<LabelMap> {
    config.validate()?;
    if cloud.len() < 2 {
        return Ok(LabelMap::constant(cloud.len()));
    }
    let index = SpatialIndex::build(cloud)?;
    let (cloud, curvature) = prepare_normals(cloud, &index, config.knn_k)?;
    grow_regions_with_curvature(&cloud, &index, config, &curvature, rng_seed)
}

/// Oriented normals (estimated when missing) and curvature from one plane-fit
/// pass.
pub(crate) fn prepare_normals(
    cloud: &PointCloud,
    index: &SpatialIndex,
    k: usize,
) -> Result<(PointCloud, Vec<f64>)> {
    if cloud.len() < 3 {
        let with = match cloud.normals() {
            Some(_) => cloud.clone(),
            None => cloud.replace_normals(vec![[0.0, 0.0, 1.0]; cloud.len()])?,
        };
        return Ok((with, vec![0.0; cloud.len()]));
    }
    let est = normals::estimate_normals(cloud, index, k.max(2))?;
    let curvature = est.iter().map(|e| e.curvature).collect();
    if cloud.has_normals() {
        return Ok((cloud.clone(), curvature));
    }
    let raw: Vec<Vec3> = est.iter().map(|e| e.normal).collect();
    let oriented = normals::orient_normals(cloud, &raw);
    Ok((cloud.replace_normals(oriented)?, curvature))
}
