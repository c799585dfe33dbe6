//! Segmentation quality against ground truth.
//!
//! Unsupervised labels are arbitrary, so predicted labels are first matched
//! one-to-one to truth labels with the assignment that maximizes the total
//! number of agreeing points (Hungarian algorithm). IoU is then computed per
//! truth part; a part left without a partner scores 0. Overall accuracy
//! counts points whose matched label equals the truth.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud};
use crate::error::{Error, Result};

/// `counts[a][b]` is the number of points with predicted label `a` and truth
/// label `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn num_pred(&self) -> usize {
        self.counts.len()
    }

    pub fn num_truth(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs truth labels",
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut counts = vec![vec![0usize; truth.num_clusters()]; pred.num_clusters()];
    for (&a, &b) in pred.labels().iter().zip(truth.labels()) {
        counts[a][b] += 1;
    }
    Ok(Confusion { counts })
}

/// Maximum-weight assignment on a rectangular matrix. Returns, for each row,
/// its matched column or `None` when there are more rows than columns.
///
/// Shortest augmenting path form of the Hungarian algorithm on the negated,
/// zero-padded square matrix, O(n³).
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            0.0
        }
    };
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = owner[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Result of matching predicted labels to truth parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub miou: f64,
    /// IoU per truth label.
    pub per_part_iou: Vec<f64>,
    /// Predicted label → truth label, for matched predicted labels.
    pub pairs: BTreeMap<usize, usize>,
}

pub fn matched_miou(pred: &LabelMap, truth: &LabelMap) -> Result<Matching> {
    let conf = confusion(pred, truth)?;
    Ok(matching_from_confusion(&conf))
}

pub fn matching_from_confusion(conf: &Confusion) -> Matching {
    let pred_sizes: Vec<usize> = conf.counts.iter().map(|r| r.iter().sum()).collect();
    let truth_sizes: Vec<usize> = (0..conf.num_truth())
        .map(|b| conf.counts.iter().map(|r| r[b]).sum())
        .collect();
    // Total intersection first; among equally good matchings, the larger IoU
    // sum, so the result does not depend on how labels are numbered. The IoU
    // term of a whole matching stays below 1 and cannot outweigh one point.
    let scale = (conf.num_pred().min(conf.num_truth()) + 1) as f64;
    let weights: Vec<Vec<f64>> = conf
        .counts
        .iter()
        .enumerate()
        .map(|(a, r)| {
            r.iter()
                .enumerate()
                .map(|(b, &c)| {
                    let union = pred_sizes[a] + truth_sizes[b] - c;
                    let iou = if union > 0 { c as f64 / union as f64 } else { 0.0 };
                    c as f64 + iou / scale
                })
                .collect()
        })
        .collect();
    let assignment = hungarian_max(&weights);
    let mut per_part_iou = vec![0.0; conf.num_truth()];
    let mut pairs = BTreeMap::new();
    for (a, m) in assignment.iter().enumerate() {
        if let Some(b) = *m {
            let inter = conf.counts[a][b];
            let union = pred_sizes[a] + truth_sizes[b] - inter;
            if union > 0 {
                per_part_iou[b] = inter as f64 / union as f64;
            }
            pairs.insert(a, b);
        }
    }
    let miou = if per_part_iou.is_empty() {
        0.0
    } else {
        per_part_iou.iter().sum::<f64>() / per_part_iou.len() as f64
    };
    Matching {
        miou,
        per_part_iou,
        pairs,
    }
}

/// Fraction of points whose matched predicted label equals the truth.
pub fn overall_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    let conf = confusion(pred, truth)?;
    let m = matching_from_confusion(&conf);
    Ok(accuracy_under(&conf, &m))
}

fn accuracy_under(conf: &Confusion, m: &Matching) -> f64 {
    let total = conf.total();
    if total == 0 {
        return 0.0;
    }
    let hit: usize = m.pairs.iter().map(|(&a, &b)| conf.counts[a][b]).sum();
    hit as f64 / total as f64
}

/// Runs `f` on `cloud` and measures its wall-clock time in milliseconds.
pub fn time_segmentation<F>(f: F, cloud: &PointCloud) -> Result<(LabelMap, f64)>
where
    F: FnOnce(&PointCloud) -> Result<LabelMap>,
{
    let start = Instant::now();
    let labels = f(cloud)?;
    Ok((labels, start.elapsed().as_secs_f64() * 1e3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub oa: f64,
    pub per_part_iou: Vec<f64>,
    /// Predicted label → truth label.
    pub matching: BTreeMap<usize, usize>,
    pub latency_ms: f64,
}

impl EvalReport {
    pub fn compute(pred: &LabelMap, truth: &LabelMap, latency_ms: f64) -> Result<Self> {
        let conf = confusion(pred, truth)?;
        let m = matching_from_confusion(&conf);
        Ok(EvalReport {
            oa: accuracy_under(&conf, &m),
            miou: m.miou,
            per_part_iou: m.per_part_iou,
            matching: m.pairs,
            latency_ms,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Flat `key: value` text block.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(" ");
        writeln!(f, "miou: {:.6}", self.miou)?;
        writeln!(f, "oa: {:.6}", self.oa)?;
        writeln!(
            f,
            "per_part_iou: {}",
            join(self.per_part_iou.iter().map(|x| format!("{x:.6}")).collect())
        )?;
        writeln!(
            f,
            "matching: {}",
            join(self.matching.iter().map(|(a, b)| format!("{a}->{b}")).collect())
        )?;
        writeln!(f, "latency_ms: {:.3}", self.latency_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(v: &[usize]) -> LabelMap {
        LabelMap::new(v.to_vec()).unwrap()
    }

    #[test]
    fn constant_prediction_counts() {
        let truth = lm(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let c = confusion(&LabelMap::constant(10), &truth).unwrap();
        assert_eq!(c.counts, vec![vec![5, 5]]);
    }

    #[test]
    fn all_one_label_against_two_halves() {
        let truth = lm(&[0, 0, 1, 1]);
        let m = matched_miou(&LabelMap::constant(4), &truth).unwrap();
        assert_eq!(m.miou, 0.25);
    }

    #[test]
    fn split_part_example() {
        // Three truth parts of 100; prediction splits part 0 in half.
        let truth: Vec<usize> = (0..300).map(|i| i / 100).collect();
        let pred: Vec<usize> = (0..300)
            .map(|i| match i {
                0..=49 => 0,
                50..=99 => 3,
                _ => i / 100,
            })
            .collect();
        let m = matched_miou(&lm(&pred), &lm(&truth)).unwrap();
        assert_eq!(m.per_part_iou, vec![0.5, 1.0, 1.0]);
        assert!((m.miou - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn swapped_labels_are_perfect() {
        let truth = lm(&[0, 0, 1, 1, 1]);
        let pred = lm(&[1, 1, 0, 0, 0]);
        assert_eq!(matched_miou(&pred, &truth).unwrap().miou, 1.0);
        assert_eq!(overall_accuracy(&pred, &truth).unwrap(), 1.0);
    }

    #[test]
    fn one_wrong_point_in_a_hundred() {
        let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let mut pred = truth.clone();
        pred[7] = 1 - pred[7];
        assert!((overall_accuracy(&lm(&pred), &lm(&truth)).unwrap() - 0.99).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(confusion(&lm(&[0, 1]), &lm(&[0])).is_err());
    }

    #[test]
    fn hungarian_small_cases() {
        assert_eq!(hungarian_max(&[vec![1.0, 5.0], vec![4.0, 1.0]]), vec![Some(1), Some(0)]);
        // More rows than columns: one row is left out.
        let m = hungarian_max(&[vec![3.0], vec![7.0], vec![2.0]]);
        assert_eq!(m, vec![None, Some(0), None]);
        assert!(hungarian_max(&[]).is_empty());
    }

    #[test]
    fn report_formats() {
        let r = EvalReport::compute(&lm(&[0, 1, 1]), &lm(&[1, 0, 0]), 1.5).unwrap();
        let text = r.to_string();
        assert!(text.contains("miou: 1.000000"));
        assert!(text.contains("matching: 0->1 1->0"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["miou", "oa", "per_part_iou", "matching", "latency_ms"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
