use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledCloud;
use crate::cloud::LabelMap;
use crate::error::{Error, Result};

/// Uniform sample of `target_n` points without replacement. Kept points stay
/// in their original order; ground truth follows by index and is compacted to
/// the labels that survive.
pub fn downsample_uniform(input: &LabeledCloud, target_n: usize, rng_seed: u64) -> Result<LabeledCloud> {
    let n = input.cloud.len();
    if target_n > n {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {target_n} points from a cloud of {n}"
        )));
    }
    if target_n == 0 {
        return Err(Error::InvalidConfig("target point count must be at least 1".into()));
    }
    let mut keep = if target_n == n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        index::sample(&mut rng, n, target_n).into_vec()
    };
    keep.sort_unstable();
    let cloud = input.cloud.select(&keep);
    let truth = input.truth.as_ref().map(|t| {
        let raw: Vec<i64> = keep.iter().map(|&i| t.get(i) as i64).collect();
        LabelMap::from_raw(&raw)
    });
    LabeledCloud::new(cloud, truth, input.name.clone())
}
