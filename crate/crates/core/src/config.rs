//! Pipeline configuration.
//!
//! Serialized as one flat JSON object: the SRG and training settings are
//! flattened into the top level, so a config file is a plain list of
//! `"field": value` pairs. [`PipelineConfig::merge_json`] applies such a file
//! on top of an existing configuration; keys it does not mention keep their
//! current value.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::gnn::ModelConfig;
use crate::kmeans::{FeatureMode, KMeansConfig};
use crate::refine::TrainConfig;
use crate::srg::SrgConfig;

/// Curvature quantile above which points stop propagating regions in the
/// pipeline. Noise turns creases into wide bands of unreliable normals; not
/// growing through them keeps neighbouring surfaces apart.
pub const DEFAULT_CURVATURE_STOP: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of parts `q`; also the network's class count.
    pub target_parts: usize,
    pub rng_seed: u64,
    /// Neighbourhood size of the network's graphs.
    pub knn_k_graph: usize,
    /// Neighbourhood size of the superpoint extraction.
    pub knn_k_superpoint: usize,
    /// Superpoint growth thresholds; tighter than the part-level ones so
    /// that superpoints over-segment.
    pub superpoint_normal_deg: f64,
    pub superpoint_euclid_factor: f64,
    /// Part-level region growing (`knn_k` is also the normal-estimation
    /// neighbourhood).
    #[serde(flatten)]
    pub srg: SrgConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub kmeans_features: FeatureMode,
    pub kmeans_normal_weight: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        PipelineConfig {
            target_parts: 6,
            rng_seed: 0,
            knn_k_graph: 20,
            knn_k_superpoint: 25,
            superpoint_normal_deg: 10.0,
            superpoint_euclid_factor: 1.5,
            srg: SrgConfig {
                curvature_stop_quantile: DEFAULT_CURVATURE_STOP,
                ..SrgConfig::default()
            },
            train: TrainConfig::default(),
            kmeans_features: km.feature_mode,
            kmeans_normal_weight: km.normal_weight,
            kmeans_max_iters: km.max_iters,
            kmeans_tol: km.tol,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.target_parts < 2 {
            return bad(format!("target_parts must be at least 2, got {}", self.target_parts));
        }
        if self.knn_k_graph == 0 || self.knn_k_superpoint == 0 {
            return bad("knn_k_graph and knn_k_superpoint must be at least 1".into());
        }
        if self.train.train_points <= self.knn_k_graph {
            return bad(format!(
                "train_points ({}) must exceed knn_k_graph ({})",
                self.train.train_points, self.knn_k_graph
            ));
        }
        self.srg.validate()?;
        self.superpoint_srg().validate()?;
        self.train.validate()?;
        self.kmeans_config().validate()?;
        self.model_config().validate()
    }

    /// Run-time checks against a cloud of `n` points.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if n < self.target_parts {
            return Err(Error::TooFewPoints {
                required: self.target_parts,
                actual: n,
            });
        }
        for (name, k) in [("knn_k_graph", self.knn_k_graph), ("knn_k_superpoint", self.knn_k_superpoint)] {
            if k >= n {
                return Err(Error::InvalidConfig(format!("{name} = {k} needs more than {n} points")));
            }
        }
        Ok(())
    }

    pub fn superpoint_srg(&self) -> SrgConfig {
        SrgConfig {
            normal_threshold_deg: self.superpoint_normal_deg,
            euclid_threshold_factor: self.superpoint_euclid_factor,
            knn_k: self.knn_k_superpoint,
            ..self.srg.clone()
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.target_parts,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
            feature_mode: self.kmeans_features,
            normal_weight: self.kmeans_normal_weight,
            rng_seed: self.rng_seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_classes: self.target_parts,
            knn_k: self.knn_k_graph,
            ..ModelConfig::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides fields with the keys of a flat JSON object. Unknown keys
    /// and ill-typed values are errors; the result is validated.
    pub fn merge_json(&self, text: &str) -> Result<Self> {
        let file: Map<String, Value> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config file must be a flat JSON object: {e}")))?;
        let Value::Object(mut merged) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config serializes to an object")
        };
        for (key, value) in file {
            if !merged.contains_key(&key) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
            merged.insert(key, value);
        }
        let out: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::InvalidConfig(format!("config file: {e}")))?;
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
        let m = PipelineConfig::default().model_config();
        assert_eq!((m.num_classes, m.knn_k), (6, 20));
    }

    #[test]
    fn serialization_is_flat() {
        let v: Value = serde_json::from_str(&PipelineConfig::default().to_json()).unwrap();
        let obj = v.as_object().unwrap();
        for key in ["normal_threshold_deg", "lr", "iterations", "knn_k_graph", "kmeans_features"] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert!(obj.values().all(|v| !v.is_object()));
    }

    #[test]
    fn json_round_trip() {
        let mut c = PipelineConfig::default();
        c.rng_seed = u64::MAX;
        c.train.lr = 0.25;
        let back = PipelineConfig::default().merge_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn merge_overrides_only_named_keys() {
        let base = PipelineConfig {
            target_parts: 4,
            ..Default::default()
        };
        let c = base.merge_json(r#"{"normal_threshold_deg": 20, "iterations": 7}"#).unwrap();
        assert_eq!(c.srg.normal_threshold_deg, 20.0);
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.target_parts, 4);
    }

    #[test]
    fn merge_rejects_bad_files() {
        let base = PipelineConfig::default();
        assert!(base.merge_json(r#"{"no_such_key": 1}"#).is_err());
        assert!(base.merge_json(r#"{"iterations": "many"}"#).is_err());
        assert!(base.merge_json(r#"{"target_parts": 1}"#).is_err());
        assert!(base.merge_json("[1, 2]").is_err());
        assert!(base.merge_json(r#"{"srg": {}}"#).is_err());
    }

    #[test]
    fn run_time_checks() {
        let c = PipelineConfig::default();
        assert!(c.validate_for(5).is_err());
        assert!(c.validate_for(20).is_err());
        c.validate_for(100).unwrap();
    }
}
