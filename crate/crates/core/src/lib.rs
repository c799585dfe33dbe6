//! Unsupervised part segmentation of 3D point clouds.
//!
//! Seed region growing ([`srg`]) gives pseudo-labels. A graph neural network
//! ([`gnn`]) is self-trained on them, and its predictions are smoothed over
//! superpoints ([`refine`]). [`kmeans`] is the baseline, [`metrics`] scores
//! any segmentation against ground truth, and [`io`] reads and writes the
//! usual point formats.
//!
//! ```
//! use pointseg::io::{make_synthetic, SynthKind, SynthParams};
//! use pointseg::srg::{srg_segment, SrgConfig};
//!
//! let params = SynthParams { n: 500, normals: true, ..Default::default() };
//! let shape = make_synthetic(SynthKind::Dihedral, &params, 0)?;
//! let labels = srg_segment(&shape.cloud, &SrgConfig::default(), 2, 0)?;
//! assert_eq!(labels.len(), 500);
//! # Ok::<(), pointseg::error::Error>(())
//! ```

pub mod cloud;
pub mod config;
pub mod error;
pub mod geom;
pub mod gnn;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod normals;
pub mod refine;
pub mod spatial;
pub mod srg;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
