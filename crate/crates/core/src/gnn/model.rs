//! The segmentation network.
//!
//! ```text
//! points ─ STN ─┬─ [xyz·T, n] ─ EdgeConv ─ D1 ─ EdgeConv ─ D2 ─ EdgeConv ─ D3
//!               │                                                    │
//! points, cov ──┴─ MLP ─ GraphLayer ×2 ─ MLP ─ max ─ bottleneck       │
//!                                                  │                 │
//!                         per point: [bottleneck, D1, D2, D3] ─ MLP ─ logits
//! ```
//!
//! Each edge-conv block rebuilds its KNN graph in its own input feature
//! space; the graph layers on the bottleneck path use the coordinate graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{coordinate_graph, covariance_features, feature_graph, Neighbors};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::normals::{self, DEFAULT_NORMAL_K};
use crate::spatial::SpatialIndex;

/// Layer widths and graph settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Neighbours per point in every graph.
    pub knn_k: usize,
    /// Hidden width of the transform regressor.
    pub stn_width: usize,
    /// Output width of each edge-conv block.
    pub edge_widths: Vec<usize>,
    /// Perceptron on the 12-wide covariance input; the last width is also
    /// the graph-layer width.
    pub extract_widths: Vec<usize>,
    pub graph_layers: usize,
    /// Perceptron after the graph layers; the last width is the bottleneck.
    pub head_widths: Vec<usize>,
    /// Hidden widths of the per-point segmenter.
    pub seg_widths: Vec<usize>,
    pub leaky_slope: f64,
    /// Feed normals next to the transformed positions into the first block.
    pub use_normals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 6,
            knn_k: 20,
            stn_width: 64,
            edge_widths: vec![64, 64, 64],
            extract_widths: vec![64, 64, 64],
            graph_layers: 2,
            head_widths: vec![128, 256, 512],
            seg_widths: vec![512, 256],
            leaky_slope: 0.2,
            use_normals: true,
        }
    }
}

impl ModelConfig {
    /// Small widths for tests and gradient checks.
    pub fn tiny(num_classes: usize, knn_k: usize) -> Self {
        ModelConfig {
            num_classes,
            knn_k,
            stn_width: 4,
            edge_widths: vec![4, 5, 3],
            extract_widths: vec![6, 5, 4],
            graph_layers: 2,
            head_widths: vec![5, 6, 8],
            seg_widths: vec![7, 5],
            leaky_slope: 0.2,
            use_normals: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if self.stn_width == 0 {
            return bad("stn_width must be at least 1");
        }
        for (name, w) in [
            ("edge_widths", &self.edge_widths),
            ("extract_widths", &self.extract_widths),
            ("head_widths", &self.head_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-empty and positive")));
            }
        }
        if self.seg_widths.contains(&0) {
            return bad("seg_widths must be positive");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in [0, 1)");
        }
        Ok(())
    }

    fn point_features(&self) -> usize {
        if self.use_normals {
            6
        } else {
            3
        }
    }

    pub fn bottleneck_width(&self) -> usize {
        *self.head_widths.last().unwrap()
    }

    /// Width of the per-point concatenation fed to the segmenter.
    pub fn concat_width(&self) -> usize {
        self.bottleneck_width() + self.edge_widths.iter().sum::<usize>()
    }
}

/// Parameter slots of each layer, in registration order.
#[derive(Debug, Clone)]
struct Layout {
    stn: [usize; 4],
    edges: Vec<[usize; 3]>,
    extract: Vec<[usize; 2]>,
    graph: Vec<usize>,
    head: Vec<[usize; 2]>,
    seg: Vec<[usize; 2]>,
}

/// Network parameters with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Everything the network reads from a cloud.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    /// `N × 3` positions.
    pub points: Tensor<T>,
    /// `N × 3` unit normals.
    pub normals: Tensor<T>,
    /// `N × 9` flattened neighbourhood covariances.
    pub covariance: Tensor<T>,
    /// Coordinate-space KNN graph.
    pub graph: Neighbors,
}

impl<T: Real> NetInput<T> {
    /// Builds the coordinate graph and covariances. Normals are estimated
    /// when the cloud has none.
    pub fn from_cloud(cloud: &PointCloud, knn_k: usize) -> Result<Self> {
        let graph = coordinate_graph(cloud.positions(), knn_k)?;
        let normals = match cloud.normals() {
            Some(n) => n.to_vec(),
            None => {
                let index = SpatialIndex::build(cloud)?;
                let k = DEFAULT_NORMAL_K.min(cloud.len() - 1).max(2);
                let est = normals::estimate_normals(cloud, &index, k)?;
                let raw: Vec<_> = est.iter().map(|e| e.normal).collect();
                normals::orient_normals(cloud, &raw)
            }
        };
        let cov = covariance_features(cloud.positions(), &graph);
        Ok(NetInput {
            points: rows3(cloud.positions()),
            normals: rows3(&normals),
            covariance: Tensor::matrix(
                cloud.len(),
                9,
                cov.iter().flatten().map(|&v| T::from_f64(v)).collect(),
            )?,
            graph,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn rows3<T: Real>(v: &[[f64; 3]]) -> Tensor<T> {
    Tensor::matrix(v.len(), 3, v.iter().flatten().map(|&x| T::from_f64(x)).collect()).expect("non-empty")
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    /// Tape leaves of the parameters, by slot.
    pub params: Vec<Var>,
    pub transform: Var,
    /// Output of each edge-conv block.
    pub dynamic: Vec<Var>,
    pub bottleneck: Var,
    pub logits: Var,
}

/// Logits and per-block dynamic features.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub logits: Tensor<T>,
    pub dynamic: Vec<Tensor<T>>,
}

impl<T: Real> SegModel<T> {
    /// Fresh model: weights uniform in ±sqrt(1/fan_in), zero biases, and a
    /// zero transform regressor output so the STN starts at identity.
    pub fn new(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut model = SegModel {
            config,
            names: Vec::new(),
            params: Vec::new(),
        };
        for (name, shape, init) in model.spec() {
            let len = shape.iter().product();
            let data = match init {
                Init::Uniform(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..len).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect()
                }
                Init::Zero => vec![T::zero(); len],
            };
            model.names.push(name);
            model.params.push(Tensor::new(shape, data)?.with_grad());
        }
        Ok(model)
    }

    /// Rebuilds a model from named tensors, checking them against `config`.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let spec = Self::spec_for(&config);
        if spec.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                spec.len(),
                params.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, shape, _), (got_name, t)) in spec.into_iter().zip(params) {
            if name != got_name || shape != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {got_name} {:?} does not match {name} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Shape(format!("parameter {name} has non-finite values")));
            }
            names.push(name);
            tensors.push(t.with_grad());
        }
        Ok(SegModel {
            config,
            names,
            params: tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(Tensor::len).collect()
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> SegModel<U> {
        SegModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn spec(&self) -> Vec<(String, Vec<usize>, Init)> {
        Self::spec_for(&self.config)
    }

    fn spec_for(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<_>, name: String, fan_in: usize, width: usize| {
            out.push((format!("{name}.weight"), vec![fan_in, width], Init::Uniform(fan_in)));
            out.push((format!("{name}.bias"), vec![1, width], Init::Zero));
        };
        dense(&mut out, "stn.hidden".into(), 3, c.stn_width);
        out.push(("stn.out.weight".into(), vec![c.stn_width, 9], Init::Zero));
        out.push(("stn.out.bias".into(), vec![1, 9], Init::Zero));
        let mut f = c.point_features();
        for (l, &w) in c.edge_widths.iter().enumerate() {
            out.push((format!("edge{l}.omega"), vec![f, w], Init::Uniform(2 * f)));
            out.push((format!("edge{l}.mu"), vec![f, w], Init::Uniform(2 * f)));
            out.push((format!("edge{l}.bias"), vec![1, w], Init::Zero));
            f = w;
        }
        let mut f = 12;
        for (l, &w) in c.extract_widths.iter().enumerate() {
            dense(&mut out, format!("extract.mlp{l}"), f, w);
            f = w;
        }
        for l in 0..c.graph_layers {
            out.push((format!("extract.graph{l}.k"), vec![f, f], Init::Uniform(f)));
        }
        for (l, &w) in c.head_widths.iter().enumerate() {
            dense(&mut out, format!("extract.head{l}"), f, w);
            f = w;
        }
        let mut f = c.concat_width();
        for (l, &w) in c.seg_widths.iter().chain([&c.num_classes]).enumerate() {
            dense(&mut out, format!("seg.fc{l}"), f, w);
            f = w;
        }
        out
    }

    fn layout(&self) -> Layout {
        let c = &self.config;
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            next - 1
        };
        Layout {
            stn: [take(), take(), take(), take()],
            edges: c.edge_widths.iter().map(|_| [take(), take(), take()]).collect(),
            extract: c.extract_widths.iter().map(|_| [take(), take()]).collect(),
            graph: (0..c.graph_layers).map(|_| take()).collect(),
            head: c.head_widths.iter().map(|_| [take(), take()]).collect(),
            seg: (0..=c.seg_widths.len()).map(|_| [take(), take()]).collect(),
        }
    }

    fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().enumerate().map(|(i, p)| tape.param(p.clone(), i)).collect()
    }

    fn check_input(&self, input: &NetInput<T>) -> Result<()> {
        let n = input.len();
        if n < self.config.knn_k + 1 {
            return Err(Error::TooFewPoints {
                required: self.config.knn_k + 1,
                actual: n,
            });
        }
        for (what, t, w) in [
            ("points", &input.points, 3),
            ("normals", &input.normals, 3),
            ("covariance", &input.covariance, 9),
        ] {
            if t.rows() != n || t.cols() != w {
                return Err(Error::Shape(format!("{what} must be {n}×{w}, got {:?}", t.shape())));
            }
        }
        if input.graph.len() != n {
            return Err(Error::LengthMismatch {
                what: "graph nodes vs points",
                left: input.graph.len(),
                right: n,
            });
        }
        Ok(())
    }

    /// Records the full network on a fresh tape.
    pub fn forward_pass(&self, input: &NetInput<T>) -> Result<ForwardPass<T>> {
        self.check_input(input)?;
        let layout = self.layout();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let points = tape.constant(input.points.clone());
        let (moved, transform) = self.stn(&mut tape, &p, &layout, points);
        let mut x = if self.config.use_normals {
            let normals = tape.constant(input.normals.clone());
            tape.concat(&[moved, normals])
        } else {
            moved
        };
        let mut dynamic = Vec::new();
        for e in &layout.edges {
            let graph = feature_graph(tape.value(x), self.config.knn_k)?;
            x = self.edge_conv(&mut tape, [p[e[0]], p[e[1]], p[e[2]]], x, &graph);
            dynamic.push(x);
        }
        let bottleneck = self.extract(&mut tape, &p, &layout, input);
        let logits = self.segment(&mut tape, &p, &layout, bottleneck, &dynamic)?;
        debug_assert!(tape.value(logits).is_finite(), "non-finite logits");
        Ok(ForwardPass {
            tape,
            params: p,
            transform,
            dynamic,
            bottleneck,
            logits,
        })
    }

    pub fn forward(&self, input: &NetInput<T>) -> Result<Forward<T>> {
        let pass = self.forward_pass(input)?;
        Ok(Forward {
            logits: pass.tape.value(pass.logits).clone(),
            dynamic: pass.dynamic.iter().map(|&d| pass.tape.value(d).clone()).collect(),
        })
    }

    /// Mean cross-entropy against `targets` and its gradient for every
    /// parameter slot.
    pub fn loss_and_grads(&self, input: &NetInput<T>, targets: &[usize]) -> Result<(T, Vec<Vec<T>>)> {
        check_targets(targets, input.len(), self.config.num_classes)?;
        let mut pass = self.forward_pass(input)?;
        let loss = pass.tape.cross_entropy(pass.logits, targets);
        let grads = pass.tape.backward(loss).params(&self.param_sizes());
        Ok((pass.tape.value(loss).data()[0], grads))
    }

    /// `points · (I + R)` where the residual `R` is regressed from the cloud
    /// by a shared layer, a max-pool and a zero-initialized output layer.
    pub fn stn_forward(&self, points: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if points.cols() != 3 || points.shape().len() != 2 {
            return Err(Error::Shape(format!("points must be N×3, got {:?}", points.shape())));
        }
        let layout = self.layout();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let x = tape.constant(points.clone());
        let (out, t) = self.stn(&mut tape, &p, &layout, x);
        Ok((tape.value(out).clone(), tape.value(t).clone()))
    }

    fn stn(&self, tape: &mut Tape<T>, p: &[Var], layout: &Layout, points: Var) -> (Var, Var) {
        let [w1, b1, w2, b2] = layout.stn.map(|i| p[i]);
        let h = tape.matmul(points, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let g = tape.global_max(h);
        let r = tape.matmul(g, w2);
        let r = tape.add(r, b2);
        let r = tape.reshape(r, 3, 3);
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = T::one();
        }
        let eye = tape.constant(eye);
        let transform = tape.add(eye, r);
        (tape.matmul(points, transform), transform)
    }

    /// One edge-conv block, `max_j leaky(x_i·ω + (x_i − x_j)·µ + b)`. The
    /// affine map splits into a centre term `x_i·(ω + µ) + b` and a neighbour
    /// term `x_j·µ`, so no per-edge matrix is ever built; see
    /// [`Tape::edge_max`].
    fn edge_conv(&self, tape: &mut Tape<T>, [omega, mu, bias]: [Var; 3], x: Var, graph: &Neighbors) -> Var {
        let w = tape.add(omega, mu);
        let a = tape.matmul(x, w);
        let a = tape.add_row(a, bias);
        let q = tape.matmul(x, mu);
        tape.edge_max(a, q, graph, T::from_f64(self.config.leaky_slope))
    }

    /// Edge-conv block `l` applied to `x` over `graph`, outside a forward pass.
    pub fn edge_conv_layer(&self, l: usize, x: &Tensor<T>, graph: &Neighbors) -> Result<Tensor<T>> {
        let layout = self.layout();
        let e = *layout
            .edges
            .get(l)
            .ok_or_else(|| Error::InvalidConfig(format!("no edge-conv block {l}")))?;
        let fan_in = self.params[e[0]].rows();
        if x.cols() != fan_in || graph.len() != x.rows() {
            return Err(Error::Shape(format!(
                "block {l} takes N×{fan_in} features over an N-node graph, got {:?} and {} nodes",
                x.shape(),
                graph.len()
            )));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.edge_conv(&mut tape, [p[e[0]], p[e[1]], p[e[2]]], xv, graph);
        Ok(tape.value(out).clone())
    }

    fn extract(&self, tape: &mut Tape<T>, p: &[Var], layout: &Layout, input: &NetInput<T>) -> Var {
        let xyz = tape.constant(input.points.clone());
        let cov = tape.constant(input.covariance.clone());
        let mut h = tape.concat(&[cov, xyz]);
        for &[w, b] in &layout.extract {
            h = dense(tape, h, p[w], p[b]);
            h = tape.relu(h);
        }
        for &k in &layout.graph {
            let m = tape.neighbor_max(h, &input.graph);
            let m = tape.matmul(m, p[k]);
            h = tape.relu(m);
        }
        let last = layout.head.len() - 1;
        for (l, &[w, b]) in layout.head.iter().enumerate() {
            h = dense(tape, h, p[w], p[b]);
            if l < last {
                h = tape.relu(h);
            }
        }
        tape.global_max(h)
    }

    /// The `1 × bottleneck` global descriptor.
    pub fn graph_extract_bottleneck(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        if input.len() < 4 {
            return Err(Error::TooFewPoints {
                required: 4,
                actual: input.len(),
            });
        }
        let layout = self.layout();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let b = self.extract(&mut tape, &p, &layout, input);
        Ok(tape.value(b).clone())
    }

    /// Per-point segmenter over `[bottleneck, d1, d2, ...]`. The first layer
    /// splits its weight rows so the bottleneck term is computed once and
    /// added to every row instead of materializing the replicated matrix.
    fn segment(&self, tape: &mut Tape<T>, p: &[Var], layout: &Layout, bottleneck: Var, dynamic: &[Var]) -> Result<Var> {
        let bw = self.config.bottleneck_width();
        let widths: Vec<usize> = dynamic.iter().map(|&d| tape.value(d).cols()).collect();
        if tape.value(bottleneck).cols() != bw
            || tape.value(bottleneck).rows() != 1
            || widths != self.config.edge_widths
        {
            return Err(Error::Shape(format!(
                "segmenter expects a 1×{bw} bottleneck and features of widths {:?}, got {:?} and {widths:?}",
                self.config.edge_widths,
                tape.value(bottleneck).shape()
            )));
        }
        let n = tape.value(dynamic[0]).rows();
        if dynamic.iter().any(|&d| tape.value(d).rows() != n) {
            return Err(Error::Shape("dynamic features disagree on the point count".into()));
        }
        let [w0, b0] = layout.seg[0];
        let total = self.config.concat_width();
        let wb = tape.slice_rows(p[w0], 0, bw);
        let wd = tape.slice_rows(p[w0], bw, total);
        let global = tape.matmul(bottleneck, wb);
        let global = tape.add(global, p[b0]);
        let local = tape.concat(dynamic);
        let local = tape.matmul(local, wd);
        let mut h = tape.add_row(local, global);
        for &[w, b] in &layout.seg[1..] {
            h = tape.relu(h);
            h = dense(tape, h, p[w], p[b]);
        }
        Ok(h)
    }

    pub fn segmenter_forward(&self, bottleneck: &Tensor<T>, dynamic: &[Tensor<T>]) -> Result<Tensor<T>> {
        if dynamic.is_empty() {
            return Err(Error::Shape("segmenter needs dynamic features".into()));
        }
        let layout = self.layout();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let b = tape.constant(bottleneck.clone());
        let d: Vec<Var> = dynamic.iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.segment(&mut tape, &p, &layout, b, &d)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(usize),
    Zero,
}

fn dense<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let h = tape.matmul(x, w);
    tape.add_row(h, b)
}

pub(crate) fn check_targets(targets: &[usize], n: usize, classes: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            what: "targets vs points",
            left: targets.len(),
            right: n,
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidLabels(format!(
            "target label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Convenience: logits and dynamic features for a whole cloud.
pub fn forward<T: Real>(model: &SegModel<T>, cloud: &PointCloud) -> Result<Forward<T>> {
    let input = NetInput::from_cloud(cloud, model.config().knn_k)?;
    model.forward(&input)
}
