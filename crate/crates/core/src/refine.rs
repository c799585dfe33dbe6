//! Superpoint refinement and per-cloud self-training.
//!
//! The network is trained on one cloud against pseudo-labels from seed region
//! growing. Every `refine_every` iterations its predictions are made constant
//! on superpoints (a deliberately over-segmented region growing) and blended
//! back into the targets: a superpoint takes the network's refined label when
//! at least half of its points carry that label under SRG as well, and keeps
//! its SRG labels otherwise. The final segmentation is the refined argmax of
//! the trained network.

use std::io::Write;

use log::{debug, info};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geom;
use crate::gnn::{NetInput, SegModel, Sgd, Tensor};
use crate::spatial::SpatialIndex;
use crate::srg::{self, SrgConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Targets are refreshed from refined predictions this often.
    pub refine_every: usize,
    /// Points per training step, drawn at random; inference runs over
    /// disjoint random chunks of this size.
    pub train_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            lr: 0.1,
            momentum: 0.1,
            refine_every: 50,
            train_points: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.refine_every == 0 {
            return bad("refine_every must be at least 1".into());
        }
        if self.train_points < 4 {
            return bad("train_points must be at least 4".into());
        }
        Ok(())
    }
}

/// A partition of the points into superpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Superpoints {
    groups: Vec<Vec<usize>>,
    len: usize,
}

impl Superpoints {
    /// One superpoint per cluster of `labels`.
    pub fn from_labels(labels: &LabelMap) -> Self {
        Superpoints {
            groups: labels.groups(),
            len: labels.len(),
        }
    }

    /// From explicit groups, which must partition `0..n` for some `n`.
    pub fn from_groups(groups: Vec<Vec<usize>>) -> Result<Self> {
        let len = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; len];
        for &i in groups.iter().flatten() {
            if i >= len || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidLabels("superpoint groups do not partition the points".into()));
            }
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::InvalidLabels("empty superpoint".into()));
        }
        Ok(Superpoints { groups, len })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of superpoints.
    pub fn count(&self) -> usize {
        self.groups.len()
    }

    /// Number of points covered.
    pub fn num_points(&self) -> usize {
        self.len
    }
}

/// Region growing without the reduction step; every region is a superpoint.
/// `config` carries the (tight) superpoint thresholds and neighbourhood size.
pub fn extract_superpoints(
    cloud: &PointCloud,
    index: &SpatialIndex,
    config: &SrgConfig,
    rng_seed: u64,
) -> Result<Superpoints> {
    if !cloud.has_normals() {
        return Err(Error::MissingNormals);
    }
    if cloud.len() == 1 {
        return Ok(Superpoints {
            groups: vec![vec![0]],
            len: 1,
        });
    }
    let regions = srg::grow_regions(cloud, index, config, rng_seed)?;
    Ok(Superpoints::from_labels(&regions))
}

/// Replaces every label by the most frequent label of its superpoint
/// (ties: the smallest label). Works on raw label values.
pub fn refine_assignment(predicted: &[usize], sp: &Superpoints) -> Result<Vec<usize>> {
    if predicted.len() != sp.num_points() {
        return Err(Error::LengthMismatch {
            what: "labels vs superpoints",
            left: predicted.len(),
            right: sp.num_points(),
        });
    }
    let mut out = predicted.to_vec();
    let mut counts = std::collections::BTreeMap::new();
    for group in &sp.groups {
        counts.clear();
        for &i in group {
            *counts.entry(predicted[i]).or_insert(0usize) += 1;
        }
        // max_by_key keeps the last maximum; iterate in reverse so that the
        // smallest label wins ties.
        let (&modal, _) = counts.iter().rev().max_by_key(|&(_, &c)| c).expect("superpoints are non-empty");
        for &i in group {
            out[i] = modal;
        }
    }
    Ok(out)
}

/// [`refine_assignment`] on a label map. Labels that survive keep their
/// values when none disappears; otherwise the survivors are compacted in
/// order.
pub fn refine_labels(predicted: &LabelMap, sp: &Superpoints) -> Result<LabelMap> {
    let raw = refine_assignment(predicted.labels(), sp)?;
    Ok(LabelMap::from_raw(&raw.iter().map(|&l| l as i64).collect::<Vec<_>>()))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    /// Distinct predicted labels on the iteration's training batch.
    pub distinct_labels: usize,
}

/// Writes `iteration,loss,distinct_labels` CSV with a header line.
pub fn write_training_log<W: Write>(mut w: W, log: &[LogEntry]) -> std::io::Result<()> {
    writeln!(w, "iteration,loss,distinct_labels")?;
    for e in log {
        writeln!(w, "{},{},{}", e.iteration, e.loss, e.distinct_labels)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final refined segmentation, canonically numbered.
    pub labels: LabelMap,
    pub model: SegModel<f32>,
    pub loss_history: Vec<f64>,
    pub log: Vec<LogEntry>,
    /// The SRG pseudo-labels training started from.
    pub srg_labels: LabelMap,
    pub superpoints: Superpoints,
}

/// Full pipeline on one cloud: normals, SRG pseudo-labels, superpoints,
/// `config.train.iterations` SGD steps with periodic target refinement and a
/// refined final prediction.
pub fn self_train(cloud: &PointCloud, config: &PipelineConfig) -> Result<TrainOutcome> {
    config.validate_for(cloud.len())?;
    let n = cloud.len();
    let q = config.target_parts;
    let index = SpatialIndex::build(cloud)?;
    let (cloud, _) = srg::prepare_normals(cloud, &index, config.srg.knn_k.min(n - 1))?;
    let srg_labels = srg::srg_segment(&cloud, &config.srg, q, config.rng_seed)?;
    let sp = extract_superpoints(&cloud, &index, &config.superpoint_srg(), config.rng_seed)?;
    info!("srg: {} parts, {} superpoints", srg_labels.num_clusters(), sp.count());

    let net_cloud = normalize_to_unit_sphere(&cloud)?;
    let mut model = SegModel::<f32>::new(config.model_config(), config.rng_seed)?;
    let mut sgd = Sgd::new(config.train.lr as f32, config.train.momentum as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x7261_696e);
    let chunks = inference_chunks(n, config.train.train_points, config.rng_seed);
    let sizes = model.param_sizes();
    let batch = config.train.train_points.min(n);
    let k = config.knn_k_graph;

    let mut targets = srg_labels.labels().to_vec();
    let mut log = Vec::with_capacity(config.train.iterations);
    for t in 1..=config.train.iterations {
        let mut idx = sample(&mut rng, n, batch).into_vec();
        idx.sort_unstable();
        let input = NetInput::<f32>::from_cloud(&net_cloud.select(&idx), k)?;
        let batch_targets: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
        let mut pass = model.forward_pass(&input).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{m} at iteration {t}; training diverged (lr {})", config.train.lr)),
            e => e,
        })?;
        let loss = pass.tape.cross_entropy(pass.logits, &batch_targets);
        let grads = pass.tape.backward(loss).params(&sizes);
        let entry = LogEntry {
            iteration: t,
            loss: pass.tape.value(loss).data()[0] as f64,
            distinct_labels: distinct(&argmax_rows(pass.tape.value(pass.logits))),
        };
        if !entry.loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at iteration {t} (lr {})", config.train.lr)));
        }
        sgd.step(model.params_mut(), &grads)?;
        debug!("iter {t}: loss {:.5}, {} labels", entry.loss, entry.distinct_labels);
        log.push(entry);

        if t % config.train.refine_every == 0 && t < config.train.iterations {
            let predicted = predict(&model, &net_cloud, &chunks, k)?;
            let refined = refine_assignment(&predicted, &sp)?;
            let changed = blend_targets(&mut targets, &refined, srg_labels.labels(), &sp);
            info!("iter {t}: loss {:.5}, targets differ from srg on {changed} points", entry.loss);
        }
    }

    let predicted = predict(&model, &net_cloud, &chunks, k)?;
    let labels = refine_labels(&LabelMap::from_raw(&predicted.iter().map(|&l| l as i64).collect::<Vec<_>>()), &sp)?
        .relabel_canonical();
    Ok(TrainOutcome {
        labels,
        model,
        loss_history: log.iter().map(|e| e.loss).collect(),
        log,
        srg_labels,
        superpoints: sp,
    })
}

/// Moves a superpoint's targets to its refined prediction when at least half
/// of its points agree with that label under SRG; otherwise restores its SRG
/// labels. Returns how many targets now differ from SRG.
fn blend_targets(targets: &mut [usize], refined: &[usize], srg: &[usize], sp: &Superpoints) -> usize {
    for group in sp.groups() {
        let label = refined[group[0]];
        let agree = group.iter().filter(|&&i| srg[i] == label).count();
        let adopt = 2 * agree >= group.len();
        for &i in group {
            targets[i] = if adopt { label } else { srg[i] };
        }
    }
    targets.iter().zip(srg).filter(|(a, b)| a != b).count()
}

/// Centres on the centroid and scales the farthest point to distance 1.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let c = cloud.centroid();
    let r = cloud
        .positions()
        .iter()
        .map(|&p| geom::norm(geom::sub(p, c)))
        .fold(0.0, f64::max);
    let s = if r > 0.0 { 1.0 / r } else { 1.0 };
    let positions = cloud.positions().iter().map(|&p| geom::scale(geom::sub(p, c), s)).collect();
    match cloud.normals() {
        Some(nrm) => PointCloud::with_normals(positions, nrm.to_vec()),
        None => PointCloud::new(positions),
    }
}

/// Disjoint random chunks of near-equal size, each at most `chunk` points
/// (a single chunk when the cloud is small enough).
fn inference_chunks(n: usize, chunk: usize, seed: u64) -> Vec<Vec<usize>> {
    let count = n.div_ceil(chunk);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x6368_756e));
    (0..count)
        .map(|c| {
            let mut part = order[c * n / count..(c + 1) * n / count].to_vec();
            part.sort_unstable();
            part
        })
        .collect()
}

/// Argmax labels for every point, inferring one chunk at a time.
fn predict(model: &SegModel<f32>, cloud: &PointCloud, chunks: &[Vec<usize>], k: usize) -> Result<Vec<usize>> {
    let mut out = vec![0; cloud.len()];
    for part in chunks {
        let input = NetInput::<f32>::from_cloud(&cloud.select(part), k)?;
        let labels = argmax_rows(&model.forward(&input)?.logits);
        for (&i, l) in part.iter().zip(labels) {
            out[i] = l;
        }
    }
    Ok(out)
}

/// Row-wise argmax; the first maximum wins.
pub fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0
        })
        .collect()
}

fn distinct(labels: &[usize]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}
