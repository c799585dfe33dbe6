//! Synthetic shapes with ground-truth part labels.
//!
//! | kind        | geometry                                                      | labels |
//! |-------------|---------------------------------------------------------------|--------|
//! | `plane`     | unit square `[0,1]²` at `z = 0`                                | 1      |
//! | `sphere`    | unit sphere at the origin                                     | 1      |
//! | `dihedral`  | `z = 0` and `x = 0` over `[0,1]²`, meeting at 90° along the y axis | 2 |
//! | `two_blobs` | solid balls of radius 0.5 whose centers are `separation × 0.5` apart on x | 2 |
//! | `humanoid6` | head, torso, two arms, two legs; 2.0 units tall               | 6      |
//!
//! The humanoid stands on `z = 0` facing −y:
//!
//! | label | part      | primitive | pose                                                       |
//! |-------|-----------|-----------|------------------------------------------------------------|
//! | 0     | head      | sphere    | center (0, 0, 1.795), radius 0.205                         |
//! | 1     | torso     | box       | center (0, 0, 1.351), half extents (0.218, 0.162, 0.275)   |
//! | 2     | left arm  | cylinder  | axis (0.198, 0, 1.48) → (1.065, 0, 1.48), radius 0.106     |
//! | 3     | right arm | cylinder  | axis (−0.198, 0, 1.48) → (−1.065, 0, 1.48), radius 0.106   |
//! | 4     | left leg  | cylinder  | axis (0.131, 0, 0) → (0.131, 0, 1.095), radius 0.082       |
//! | 5     | right leg | cylinder  | axis (−0.131, 0, 0) → (−0.131, 0, 1.095), radius 0.082     |
//!
//! Neighboring parts overlap slightly at the joints. The proportions keep
//! every torso face smaller than any limb and leave a gap of about 0.1
//! between the legs, so region growing on a noisy sample can still tell the
//! parts apart. Points are drawn uniformly by area over the surface of the
//! union: samples that fall inside another primitive are rejected, so joints
//! are seams, not hidden walls.
//! Gaussian noise with standard deviation `noise × size` is then added to
//! every position, where size is 2.0 for the humanoid and 1.0 otherwise.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledCloud;
use crate::cloud::{LabelMap, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub const HUMANOID_HEIGHT: f64 = 2.0;
pub const HUMANOID_PARTS: [&str; 6] = ["head", "torso", "left_arm", "right_arm", "left_leg", "right_leg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Plane,
    Sphere,
    Dihedral,
    TwoBlobs,
    Humanoid6,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Plane,
        SynthKind::Sphere,
        SynthKind::Dihedral,
        SynthKind::TwoBlobs,
        SynthKind::Humanoid6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Plane => "plane",
            SynthKind::Sphere => "sphere",
            SynthKind::Dihedral => "dihedral",
            SynthKind::TwoBlobs => "two_blobs",
            SynthKind::Humanoid6 => "humanoid6",
        }
    }

    fn size(self) -> f64 {
        match self {
            SynthKind::Humanoid6 => HUMANOID_HEIGHT,
            _ => 1.0,
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown synthetic kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    /// Noise standard deviation as a fraction of the shape's size.
    pub noise: f64,
    /// Attach analytic surface normals (ignored for `two_blobs`, which is
    /// solid).
    pub normals: bool,
    /// Center distance of `two_blobs`, in blob radii.
    pub separation: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 6000,
            noise: 0.0,
            normals: false,
            separation: 10.0,
        }
    }
}

impl SynthParams {
    fn validate(&self, kind: SynthKind) -> Result<()> {
        let min_n = match kind {
            SynthKind::Dihedral | SynthKind::TwoBlobs => 2,
            SynthKind::Humanoid6 => 6,
            _ => 1,
        };
        if self.n < min_n {
            return Err(Error::InvalidConfig(format!(
                "{} needs at least {min_n} points, got {}",
                kind.name(),
                self.n
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if kind == SynthKind::TwoBlobs && !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "separation must be finite and > 0, got {}",
                self.separation
            )));
        }
        Ok(())
    }
}

pub fn make_synthetic(kind: SynthKind, params: &SynthParams, rng_seed: u64) -> Result<LabeledCloud> {
    params.validate(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = params.n;
    let mut samples: Vec<(Vec3, Vec3, usize)> = match kind {
        SynthKind::Plane => (0..n)
            .map(|_| ([rng.random(), rng.random(), 0.0], [0.0, 0.0, 1.0], 0))
            .collect(),
        SynthKind::Sphere => (0..n)
            .map(|_| {
                let d = unit_vector(&mut rng);
                (d, d, 0)
            })
            .collect(),
        SynthKind::Dihedral => (0..n)
            .map(|i| {
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                if i < n / 2 {
                    ([u, v, 0.0], [0.0, 0.0, 1.0], 0)
                } else {
                    ([0.0, v, u], [1.0, 0.0, 0.0], 1)
                }
            })
            .collect(),
        SynthKind::TwoBlobs => {
            let r = 0.5;
            let half = params.separation * r / 2.0;
            (0..n)
                .map(|i| {
                    let label = usize::from(i >= n / 2);
                    let cx = if label == 0 { -half } else { half };
                    let d = unit_vector(&mut rng);
                    let s = r * rng.random::<f64>().cbrt();
                    ([cx + s * d[0], s * d[1], s * d[2]], d, label)
                })
                .collect()
        }
        SynthKind::Humanoid6 => humanoid(&mut rng, n),
    };

    let sigma = params.noise * kind.size();
    if sigma > 0.0 {
        for (p, _, _) in &mut samples {
            for c in p.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += sigma * z;
            }
        }
    }

    let positions: Vec<Vec3> = samples.iter().map(|s| s.0).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.2).collect();
    let cloud = if params.normals && kind != SynthKind::TwoBlobs {
        PointCloud::with_normals(positions, samples.iter().map(|s| s.1).collect())?
    } else {
        PointCloud::new(positions)?
    };
    let truth = LabelMap::new(labels)?;
    LabeledCloud::new(cloud, Some(truth), kind.name())
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if let Some(u) = geom::normalize(v) {
            return u;
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half: Vec3 },
    Cylinder { a: Vec3, b: Vec3, radius: f64 },
}

/// Parts touch through small overlaps; this keeps the numbers in one place.
const HUMANOID: [Primitive; 6] = [
    Primitive::Sphere {
        center: [0.0, 0.0, 1.795],
        radius: 0.205,
    },
    Primitive::Box {
        center: [0.0, 0.0, 1.351],
        half: [0.218, 0.162, 0.275],
    },
    Primitive::Cylinder {
        a: [0.198, 0.0, 1.48],
        b: [1.065, 0.0, 1.48],
        radius: 0.106,
    },
    Primitive::Cylinder {
        a: [-0.198, 0.0, 1.48],
        b: [-1.065, 0.0, 1.48],
        radius: 0.106,
    },
    Primitive::Cylinder {
        a: [0.131, 0.0, 0.0],
        b: [0.131, 0.0, 1.095],
        radius: 0.082,
    },
    Primitive::Cylinder {
        a: [-0.131, 0.0, 0.0],
        b: [-0.131, 0.0, 1.095],
        radius: 0.082,
    },
];

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Box { half: h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Primitive::Cylinder { a, b, radius } => {
                let len = geom::norm(geom::sub(b, a));
                2.0 * PI * radius * len + 2.0 * PI * radius * radius
            }
        }
    }

    fn contains(&self, p: Vec3) -> bool {
        const EPS: f64 = 1e-9;
        match *self {
            Primitive::Sphere { center, radius } => geom::dist2(p, center) < (radius - EPS).powi(2),
            Primitive::Box { center, half } => (0..3).all(|a| (p[a] - center[a]).abs() < half[a] - EPS),
            Primitive::Cylinder { a, b, radius } => {
                let axis = geom::sub(b, a);
                let len2 = geom::dot(axis, axis);
                let t = geom::dot(geom::sub(p, a), axis) / len2;
                let len = len2.sqrt();
                if t * len <= EPS || (1.0 - t) * len <= EPS {
                    return false;
                }
                let foot = geom::add(a, geom::scale(axis, t));
                geom::dist2(p, foot) < (radius - EPS).powi(2)
            }
        }
    }

    /// A uniform surface sample and its outward normal.
    fn sample(&self, rng: &mut impl Rng) -> (Vec3, Vec3) {
        match *self {
            Primitive::Sphere { center, radius } => {
                let d = unit_vector(rng);
                (geom::add(center, geom::scale(d, radius)), d)
            }
            Primitive::Box { center, half: h } => {
                let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total = 2.0 * faces.iter().sum::<f64>();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 0;
                while face < 5 && pick >= faces[face / 2] {
                    pick -= faces[face / 2];
                    face += 1;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                let mut n = [0.0; 3];
                for a in 0..3 {
                    p[a] = if a == axis {
                        center[a] + sign * h[a]
                    } else {
                        center[a] + h[a] * rng.random_range(-1.0..1.0)
                    };
                }
                n[axis] = sign;
                (p, n)
            }
            Primitive::Cylinder { a, b, radius } => {
                let axis = geom::sub(b, a);
                let len = geom::norm(axis);
                let w = geom::scale(axis, 1.0 / len);
                let helper = if w[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let u = geom::normalize(geom::cross(w, helper)).unwrap();
                let v = geom::cross(w, u);
                let lateral = 2.0 * PI * radius * len;
                let caps = 2.0 * PI * radius * radius;
                let pick = rng.random::<f64>() * (lateral + caps);
                let theta = rng.random::<f64>() * 2.0 * PI;
                let radial = geom::add(geom::scale(u, theta.cos()), geom::scale(v, theta.sin()));
                if pick < lateral {
                    let t = rng.random::<f64>() * len;
                    let p = geom::add(geom::add(a, geom::scale(w, t)), geom::scale(radial, radius));
                    (p, radial)
                } else {
                    let rho = radius * rng.random::<f64>().sqrt();
                    let (base, n) = if pick < lateral + caps / 2.0 {
                        (a, geom::scale(w, -1.0))
                    } else {
                        (b, w)
                    };
                    (geom::add(base, geom::scale(radial, rho)), n)
                }
            }
        }
    }
}

fn humanoid(rng: &mut impl Rng, n: usize) -> Vec<(Vec3, Vec3, usize)> {
    let hum = HUMANOID;
    let areas: Vec<f64> = hum.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut part = 0;
        while part < hum.len() - 1 && pick >= areas[part] {
            pick -= areas[part];
            part += 1;
        }
        let (p, normal) = hum[part].sample(rng);
        let hidden = hum
            .iter()
            .enumerate()
            .any(|(j, other)| j != part && other.contains(p));
        if !hidden {
            out.push((p, normal, part));
        }
    }
    out
}
