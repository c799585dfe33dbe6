//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the nodes in reverse and accumulates gradients into the parents. Max-type
//! reductions remember the index they picked so the backward pass routes the
//! gradient to exactly that entry.

use super::graph::Neighbors;
use super::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<usize> },
    MatMul(usize, usize),
    Add(usize, usize),
    /// `a + 1·rowᵀ`: adds a `1 × c` row to every row of `a`.
    AddRow(usize, usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Concat(Vec<usize>),
    SliceRows(usize, usize),
    Reshape(usize),
    RepeatRows(usize),
    /// `leaky(a[i] − p[j*])` with `j*` the neighbour minimizing `p`.
    EdgeMax { a: usize, p: usize, slope: T, arg: Vec<u32> },
    /// Channel-wise max over a node and its neighbours.
    NeighborMax { x: usize, arg: Vec<u32> },
    /// Channel-wise max over all rows.
    GlobalMax { x: usize, arg: Vec<u32> },
    /// Mean softmax cross-entropy; `probs` are cached softmax values.
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of every registered parameter, by parameter index. Parameters
    /// the output does not depend on get zeros.
    pub fn params(&self, sizes: &[usize]) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = sizes.iter().map(|&s| vec![T::zero(); s]).collect();
        for &(node, param) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (o, v) in out[param].iter_mut().zip(g) {
                    *o += *v;
                }
            }
        }
        out
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].needs_grad)
    }

    fn shape(&self, v: usize) -> (usize, usize) {
        let t = &self.nodes[v].value;
        (t.rows(), t.cols())
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Trainable leaf tied to parameter slot `index`.
    pub fn param(&mut self, value: Tensor<T>, index: usize) -> Var {
        self.push(value, Op::Leaf { param: Some(index) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a.0);
        let (k2, n) = self.shape(b.0);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.nodes[a.0].value.data(),
            false,
            self.nodes[b.0].value.data(),
            false,
            T::zero(),
            &mut out,
        );
        let needs = self.needs(&[a.0, b.0]);
        self.push(matrix(m, n, out), Op::MatMul(a.0, b.0), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a.0), self.shape(b.0), "add shapes");
        let (m, n) = self.shape(a.0);
        let out: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let needs = self.needs(&[a.0, b.0]);
        self.push(matrix(m, n, out), Op::Add(a.0, b.0), needs)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a.0);
        assert_eq!(self.shape(row.0), (1, n), "add_row shapes");
        let r = self.nodes[row.0].value.data();
        let mut out = self.nodes[a.0].value.data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, v) in chunk.iter_mut().zip(r) {
                *o += *v;
            }
        }
        let needs = self.needs(&[a.0, row.0]);
        self.push(matrix(m, n, out), Op::AddRow(a.0, row.0), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a.0);
        let out = self.nodes[a.0].value.data().iter().map(|&x| x.max(T::zero())).collect();
        let needs = self.needs(&[a.0]);
        self.push(matrix(m, n, out), Op::Relu(a.0), needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let (m, n) = self.shape(a.0);
        let out = self.nodes[a.0].value.data().iter().map(|&x| leaky(x, slope)).collect();
        let needs = self.needs(&[a.0]);
        self.push(matrix(m, n, out), Op::LeakyRelu(a.0, slope), needs)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0].0).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = self.shape(p.0);
                assert_eq!(r, m, "concat row counts");
                c
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&ids);
        self.push(matrix(m, n, out), Op::Concat(ids), needs)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.shape(a.0);
        assert!(start < end && end <= m, "slice_rows range");
        let out = self.nodes[a.0].value.data()[start * n..end * n].to_vec();
        let needs = self.needs(&[a.0]);
        self.push(matrix(end - start, n, out), Op::SliceRows(a.0, start), needs)
    }

    /// Same values viewed as `rows × cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let data = self.nodes[a.0].value.data().to_vec();
        assert_eq!(data.len(), rows * cols, "reshape size");
        let needs = self.needs(&[a.0]);
        self.push(matrix(rows, cols, data), Op::Reshape(a.0), needs)
    }

    /// Stacks a `1 × c` row `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let (m, n) = self.shape(a.0);
        assert_eq!(m, 1, "repeat_rows takes a single row");
        let out = self.nodes[a.0].value.data().repeat(times);
        let needs = self.needs(&[a.0]);
        self.push(matrix(times, n, out), Op::RepeatRows(a.0), needs)
    }

    /// Fused edge convolution reduction: for every node `i` and channel `c`,
    /// `max_j leaky(a[i,c] − p[j,c])` over the neighbours `j` of `i`. Since
    /// leaky ReLU is increasing, the maximizing neighbour is the one with the
    /// smallest `p[j,c]`; ties go to the earliest neighbour in the list.
    pub fn edge_max(&mut self, a: Var, p: Var, graph: &Neighbors, slope: T) -> Var {
        let (m, n) = self.shape(a.0);
        assert_eq!(self.shape(p.0), (m, n), "edge_max shapes");
        assert_eq!(graph.len(), m, "edge_max graph size");
        let av = self.nodes[a.0].value.data();
        let pv = self.nodes[p.0].value.data();
        let mut out = vec![T::zero(); m * n];
        let mut arg = vec![0u32; m * n];
        let mut best = vec![T::zero(); n];
        for i in 0..m {
            let nbrs = graph.of(i);
            let first = nbrs[0] as usize;
            best.copy_from_slice(&pv[first * n..(first + 1) * n]);
            let arg_i = &mut arg[i * n..(i + 1) * n];
            arg_i.fill(first as u32);
            for &j in &nbrs[1..] {
                let row = &pv[j as usize * n..(j as usize + 1) * n];
                for c in 0..n {
                    if row[c] < best[c] {
                        best[c] = row[c];
                        arg_i[c] = j;
                    }
                }
            }
            for c in 0..n {
                out[i * n + c] = leaky(av[i * n + c] - best[c], slope);
            }
        }
        let needs = self.needs(&[a.0, p.0]);
        self.push(
            matrix(m, n, out),
            Op::EdgeMax {
                a: a.0,
                p: p.0,
                slope,
                arg,
            },
            needs,
        )
    }

    /// Channel-wise max over each node and its neighbours, the node itself
    /// first so it wins ties.
    pub fn neighbor_max(&mut self, x: Var, graph: &Neighbors) -> Var {
        let (m, n) = self.shape(x.0);
        assert_eq!(graph.len(), m, "neighbor_max graph size");
        let xv = self.nodes[x.0].value.data();
        let mut out = xv.to_vec();
        let mut arg: Vec<u32> = (0..m).flat_map(|i| std::iter::repeat_n(i as u32, n)).collect();
        for i in 0..m {
            for &j in graph.of(i) {
                let row = &xv[j as usize * n..(j as usize + 1) * n];
                for c in 0..n {
                    if row[c] > out[i * n + c] {
                        out[i * n + c] = row[c];
                        arg[i * n + c] = j;
                    }
                }
            }
        }
        let needs = self.needs(&[x.0]);
        self.push(matrix(m, n, out), Op::NeighborMax { x: x.0, arg }, needs)
    }

    /// Channel-wise max over all rows; ties go to the lowest row.
    pub fn global_max(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x.0);
        let xv = self.nodes[x.0].value.data();
        let mut out = xv[..n].to_vec();
        let mut arg = vec![0u32; n];
        for i in 1..m {
            for c in 0..n {
                if xv[i * n + c] > out[c] {
                    out[c] = xv[i * n + c];
                    arg[c] = i as u32;
                }
            }
        }
        let needs = self.needs(&[x.0]);
        self.push(matrix(1, n, out), Op::GlobalMax { x: x.0, arg }, needs)
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (m, n) = self.shape(logits.0);
        assert_eq!(targets.len(), m, "cross_entropy target count");
        let (loss, probs) = softmax_cross_entropy(self.nodes[logits.0].value.data(), n, targets);
        let needs = self.needs(&[logits.0]);
        self.push(
            matrix(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        )
    }

    /// Gradients of the scalar `output` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, output: Var) -> Grads<T> {
        assert_eq!(self.nodes[output.0].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);
        let mut params = Vec::new();
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if let Op::Leaf { param: Some(p) } = node.op {
                params.push((id, p));
            }
            grads[id] = Some(g);
        }
        Grads { grads, params }
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (m, n) = self.shape(id);
        let acc = |target: usize, grads: &mut [Option<Vec<T>>], f: &mut dyn FnMut(&mut [T])| {
            if self.nodes[target].needs_grad {
                let len = self.nodes[target].value.len();
                let slot = grads[target].get_or_insert_with(|| vec![T::zero(); len]);
                f(slot);
            }
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let k = self.shape(*a).1;
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                // dA = G·Bᵀ, dB = Aᵀ·G.
                acc(*a, grads, &mut |s| T::gemm(m, n, k, T::one(), g, false, bv, true, T::one(), s));
                acc(*b, grads, &mut |s| T::gemm(k, m, n, T::one(), av, true, g, false, T::one(), s));
            }
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    acc(t, grads, &mut |s| add_into(s, g));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, grads, &mut |s| add_into(s, g));
                acc(*row, grads, &mut |s| {
                    for chunk in g.chunks(n) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                acc(*a, grads, &mut |s| {
                    for ((o, gv), xv) in s.iter_mut().zip(g).zip(x) {
                        if *xv > T::zero() {
                            *o += *gv;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.nodes[*a].value.data();
                acc(*a, grads, &mut |s| {
                    for ((o, gv), xv) in s.iter_mut().zip(g).zip(x) {
                        *o += *gv * leaky_slope(*xv, *slope);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, grads, &mut |s| {
                        for i in 0..m {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * n + offset..i * n + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                acc(*a, grads, &mut |s| add_into(&mut s[start * n..(start + m) * n], g));
            }
            Op::Reshape(a) => {
                acc(*a, grads, &mut |s| add_into(s, g));
            }
            Op::RepeatRows(a) => {
                acc(*a, grads, &mut |s| {
                    for chunk in g.chunks(n) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::EdgeMax { a, p, slope, arg } => {
                let av = self.nodes[*a].value.data();
                let pv = self.nodes[*p].value.data();
                // d out / d a = leaky'(z); d out / d p[j*] = −leaky'(z).
                let local: Vec<T> = (0..m * n)
                    .map(|e| {
                        let c = e % n;
                        let j = arg[e] as usize;
                        g[e] * leaky_slope(av[e] - pv[j * n + c], *slope)
                    })
                    .collect();
                acc(*a, grads, &mut |s| add_into(s, &local));
                acc(*p, grads, &mut |s| {
                    for (e, l) in local.iter().enumerate() {
                        s[arg[e] as usize * n + e % n] -= *l;
                    }
                });
            }
            Op::NeighborMax { x, arg } => {
                acc(*x, grads, &mut |s| {
                    for (e, gv) in g.iter().enumerate() {
                        s[arg[e] as usize * n + e % n] += *gv;
                    }
                });
            }
            Op::GlobalMax { x, arg } => {
                acc(*x, grads, &mut |s| {
                    for (c, gv) in g.iter().enumerate() {
                        s[arg[c] as usize * n + c] += *gv;
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let w = self.shape(*logits).1;
                let scale = g[0] / T::from_f64(targets.len() as f64);
                acc(*logits, grads, &mut |s| {
                    for (i, &t) in targets.iter().enumerate() {
                        for c in 0..w {
                            let hot = if c == t { T::one() } else { T::zero() };
                            s[i * w + c] += (probs[i * w + c] - hot) * scale;
                        }
                    }
                });
            }
        }
    }
}

fn matrix<T: Real>(m: usize, n: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::matrix(m, n, data).expect("non-empty operands")
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

pub(crate) fn leaky<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * slope
    }
}

fn leaky_slope<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Mean cross-entropy over rows of `logits` (width `n`), with the row-wise
/// softmax probabilities. Uses the max-shifted log-sum-exp.
pub(crate) fn softmax_cross_entropy<T: Real>(logits: &[T], n: usize, targets: &[usize]) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (p, &v) in probs[i * n..(i + 1) * n].iter_mut().zip(row) {
            *p = (v - max).exp();
            z += *p;
        }
        for p in &mut probs[i * n..(i + 1) * n] {
            *p = *p / z;
        }
        total += (z.ln() + max - row[t]).as_f64();
    }
    (T::from_f64(total / targets.len() as f64), probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::matrix(rows, cols, (0..rows * cols).map(f).collect()).unwrap()
    }

    /// Central differences of `loss(params)` against the tape gradients.
    fn check(params: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let run = |ps: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| tape.param(p.clone(), i)).collect();
            let out = build(&mut tape, &vars);
            (tape, out)
        };
        let (tape, out) = run(&params);
        let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
        let grads = tape.backward(out).params(&sizes);
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for e in 0..p.len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[e] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[e] -= h;
                let (tp, op) = run(&plus);
                let (tm, om) = run(&minus);
                let fd = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * h);
                let an = grads[pi][e];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{e}]: fd {fd} vs tape {an}"
                );
            }
        }
    }

    #[test]
    fn matmul_bias_relu_ce() {
        let x = t(4, 3, |i| (i as f64 * 0.7).sin());
        let w = t(3, 5, |i| (i as f64 * 1.3).cos() * 0.8);
        let b = t(1, 5, |i| 0.1 * i as f64 - 0.2);
        let w2 = t(5, 3, |i| (i as f64 * 0.4).sin());
        check(vec![x, w, b, w2], |tape, v| {
            let h = tape.matmul(v[0], v[1]);
            let h = tape.add_row(h, v[2]);
            let h = tape.relu(h);
            let h = tape.matmul(h, v[3]);
            tape.cross_entropy(h, &[0, 2, 1, 2])
        });
    }

    #[test]
    fn structural_ops() {
        let a = t(3, 2, |i| (i as f64 * 0.9).sin());
        let b = t(3, 2, |i| (i as f64 * 0.3).cos());
        let r = t(1, 4, |i| i as f64 * 0.25 - 0.3);
        let w = t(4, 2, |i| (i as f64 * 1.7).sin());
        check(vec![a, b, r, w], |tape, v| {
            let s = tape.add(v[0], v[1]);
            let c = tape.concat(&[s, v[1]]);
            let top = tape.slice_rows(c, 0, 2);
            let rep = tape.repeat_rows(v[2], 2);
            let rep = tape.reshape(rep, 4, 2);
            let rep = tape.reshape(rep, 2, 4);
            let z = tape.add(top, rep);
            let z = tape.leaky_relu(z, 0.2);
            let z = tape.matmul(z, v[3]);
            tape.cross_entropy(z, &[1, 0])
        });
    }

    #[test]
    fn max_ops() {
        let graph = Neighbors::from_lists(&[vec![1, 2], vec![2, 0], vec![0, 1]]);
        let a = t(3, 2, |i| (i as f64 * 0.9).sin());
        let p = t(3, 2, |i| (i as f64 * 2.1).cos());
        let w = t(2, 3, |i| (i as f64 * 0.6).sin() + 0.1);
        check(vec![a, p, w], |tape, v| {
            let e = tape.edge_max(v[0], v[1], &graph, 0.2);
            let nm = tape.neighbor_max(e, &graph);
            let g = tape.global_max(nm);
            let rep = tape.repeat_rows(g, 3);
            let z = tape.add(rep, e);
            let z = tape.matmul(z, v[2]);
            tape.cross_entropy(z, &[2, 0, 1])
        });
    }

    #[test]
    fn edge_max_tie_goes_to_first_neighbour() {
        let graph = Neighbors::from_lists(&[vec![2, 1], vec![0, 2], vec![1, 0]]);
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(3, 1, |_| 0.0));
        let p = tape.param(t(3, 1, |_| 1.0), 0);
        let e = tape.edge_max(a, p, &graph, 0.5);
        let s = tape.global_max(e);
        let g = tape.backward(s).params(&[3]);
        // Node 0 wins the global max (lowest row); its first neighbour is 2.
        assert_eq!(g[0], vec![0.0, 0.0, -0.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, probs) = softmax_cross_entropy(&[0.0f64; 8], 4, &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!(probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }
}
