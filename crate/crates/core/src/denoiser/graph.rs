//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every intermediate value of a forward computation as
//! a node with an explicit operation tag; [`Graph::backward`] replays the
//! tape in reverse, accumulating vector-Jacobian products into a
//! [`GradientBundle`] keyed by `(layer, weight-or-bias)`. Models are bound
//! to a graph once, either as trainable (their parameters become leaf nodes
//! whose adjoints are collected) or frozen (parameters are constants, but
//! gradients still flow *through* their computation to earlier nodes, which
//! is what lets an inversion traced through a frozen reference model remain
//! differentiable in the trainable one).
//!
//! The traced forward pass mirrors [`DenoiserModel::eps_predict`] operation
//! for operation, so traced and plain evaluations agree bitwise; tests rely
//! on this to cross-check the tape against an independent forward path.
//!
//! A graph may be used for exactly one backward pass; further calls return
//! [`Error::GraphConsumed`].

use serde::{Deserialize, Serialize};

use crate::denoiser::model::{sinusoidal_embedding, Activation, DenoiserModel, ModelArch};
use crate::error::{Error, Result};
use crate::numerics::scalar::{sigmoid, softplus};
use crate::numerics::Vector;

pub type NodeId = usize;

/// Which half of a layer a parameter leaf refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param {
        tag: usize,
        layer: usize,
        kind: ParamKind,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    /// `y = W x`, `W` row-major with the given shape.
    Matvec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// `y = ca * a + cb * b`, elementwise.
    Affine {
        a: NodeId,
        ca: f64,
        b: NodeId,
        cb: f64,
    },
    Scale {
        a: NodeId,
        k: f64,
    },
    Act {
        f: Activation,
        a: NodeId,
    },
    /// Scalar `y = ||a - b||^2`.
    SqDist {
        a: NodeId,
        b: NodeId,
    },
    /// Scalar `y = sum_i c_i * v_i + bias` over scalar inputs.
    ScalarComb { terms: Vec<(NodeId, f64)> },
    /// Scalar `y = softplus(-u) = -ln sigmoid(u)`.
    SoftplusNeg {
        u: NodeId,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Handle returned by [`Graph::bind`]; identifies one model's leaves.
pub struct BoundModel {
    tag: usize,
    trainable: bool,
    arch: ModelArch,
    shapes: Vec<(usize, usize)>,
    /// `(weight node, bias node)` per layer.
    layers: Vec<(NodeId, NodeId)>,
    null_condition: NodeId,
}

impl BoundModel {
    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn null_condition(&self) -> NodeId {
        self.null_condition
    }
}

/// A one-shot computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    next_tag: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node {id} is not scalar");
        v[0]
    }

    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        self.push(values.to_vec(), Op::Constant)
    }

    pub fn constant_vector(&mut self, v: &Vector) -> NodeId {
        self.constant(v.as_slice())
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![v], Op::Constant)
    }

    /// Registers a model's parameters on the tape. Trainable parameters
    /// become gradient leaves; frozen ones are constants.
    pub fn bind(&mut self, model: &DenoiserModel, trainable: bool) -> BoundModel {
        let tag = self.next_tag;
        self.next_tag += 1;
        let mut layers = Vec::with_capacity(model.layers().len());
        for (i, layer) in model.layers().iter().enumerate() {
            let w = if trainable {
                self.push(
                    layer.w.clone(),
                    Op::Param {
                        tag,
                        layer: i,
                        kind: ParamKind::Weight,
                    },
                )
            } else {
                self.push(layer.w.clone(), Op::Constant)
            };
            let b = if trainable {
                self.push(
                    layer.b.clone(),
                    Op::Param {
                        tag,
                        layer: i,
                        kind: ParamKind::Bias,
                    },
                )
            } else {
                self.push(layer.b.clone(), Op::Constant)
            };
            layers.push((w, b));
        }
        let null_condition = self.constant(model.null_condition().as_slice());
        BoundModel {
            tag,
            trainable,
            arch: model.arch().clone(),
            shapes: model.arch().layer_shapes(),
            layers,
            null_condition,
        }
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
        }
        self.push(value, Op::Concat { parts: parts.to_vec() })
    }

    pub fn matvec(&mut self, w: NodeId, rows: usize, cols: usize, x: NodeId) -> NodeId {
        assert_eq!(self.nodes[w].value.len(), rows * cols, "matvec W shape");
        assert_eq!(self.nodes[x].value.len(), cols, "matvec x shape");
        let mut y = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.nodes[w].value[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(&self.nodes[x].value) {
                acc += wv * xv;
            }
            y.push(acc);
        }
        self.push(y, Op::Matvec { w, x, rows, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.len(), self.nodes[b].value.len(), "add shape");
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add { a, b })
    }

    pub fn affine(&mut self, a: NodeId, ca: f64, b: NodeId, cb: f64) -> NodeId {
        assert_eq!(
            self.nodes[a].value.len(),
            self.nodes[b].value.len(),
            "affine shape"
        );
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        self.push(value, Op::Affine { a, ca, b, cb })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.nodes[a].value.iter().map(|x| k * x).collect();
        self.push(value, Op::Scale { a, k })
    }

    pub fn activation(&mut self, f: Activation, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.iter().map(|&x| f.apply(x)).collect();
        self.push(value, Op::Act { f, a })
    }

    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a].value.len(),
            self.nodes[b].value.len(),
            "sq_dist shape"
        );
        let mut acc = 0.0;
        for (x, y) in self.nodes[a].value.iter().zip(&self.nodes[b].value) {
            let d = x - y;
            acc += d * d;
        }
        self.push(vec![acc], Op::SqDist { a, b })
    }

    pub fn scalar_comb(&mut self, terms: &[(NodeId, f64)], bias: f64) -> NodeId {
        let mut acc = bias;
        for &(id, c) in terms {
            assert_eq!(self.nodes[id].value.len(), 1, "scalar_comb input not scalar");
            acc += c * self.nodes[id].value[0];
        }
        self.push(
            vec![acc],
            Op::ScalarComb {
                terms: terms.to_vec(),
            },
        )
    }

    /// `softplus(-u)`, i.e. `-ln sigmoid(u)`.
    pub fn softplus_neg(&mut self, u: NodeId) -> NodeId {
        assert_eq!(self.nodes[u].value.len(), 1, "softplus_neg input not scalar");
        let value = softplus(-self.nodes[u].value[0]);
        self.push(vec![value], Op::SoftplusNeg { u })
    }

    /// Traced twin of [`DenoiserModel::eps_predict`]; bitwise-identical
    /// values by construction.
    pub fn eps_predict(&mut self, m: &BoundModel, x: NodeId, t: usize, cond: NodeId) -> NodeId {
        assert_eq!(self.nodes[x].value.len(), m.arch.data_dim, "eps x shape");
        assert_eq!(self.nodes[cond].value.len(), m.arch.cond_dim, "eps cond shape");
        let temb = self.constant(&sinusoidal_embedding(t, m.arch.t_embed_dim));
        let mut h = self.concat(&[x, cond, temb]);
        let last = m.layers.len() - 1;
        for (i, &(w, b)) in m.layers.iter().enumerate() {
            let (rows, cols) = m.shapes[i];
            let mv = self.matvec(w, rows, cols, h);
            h = self.add(mv, b);
            if i < last {
                h = self.activation(m.arch.activation, h);
            }
        }
        h
    }

    /// Traced twin of [`DenoiserModel::eps_predict_guided`], including the
    /// exact `w = 1` short-circuit.
    pub fn eps_predict_guided(
        &mut self,
        m: &BoundModel,
        x: NodeId,
        t: usize,
        cond: NodeId,
        w: f64,
    ) -> NodeId {
        if w == 1.0 {
            return self.eps_predict(m, x, t, cond);
        }
        let null = m.null_condition;
        let eps_u = self.eps_predict(m, x, t, null);
        let eps_c = self.eps_predict(m, x, t, cond);
        self.affine(eps_u, 1.0 - w, eps_c, w)
    }

    /// Reverse pass from scalar `loss`, collecting gradients for `model`.
    /// Consumes the graph; a second call fails with [`Error::GraphConsumed`].
    pub fn backward(&mut self, loss: NodeId, model: &BoundModel) -> Result<GradientBundle> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        if !model.trainable {
            return Err(Error::InvalidArgument(
                "backward requested for a model bound as frozen".to_string(),
            ));
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::InvalidArgument(
                "backward needs a scalar loss node".to_string(),
            ));
        }
        if !self.nodes[loss].value[0].is_finite() {
            return Err(Error::NonFinite(format!(
                "loss = {}",
                self.nodes[loss].value[0]
            )));
        }

        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            match &self.nodes[id].op {
                Op::Constant | Op::Param { .. } => {}
                Op::Concat { parts } => {
                    let dy = std::mem::take(&mut adj[id]);
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        for j in 0..len {
                            adj[p][j] += dy[off + j];
                        }
                        off += len;
                    }
                    adj[id] = dy;
                }
                Op::Matvec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    let dy = std::mem::take(&mut adj[id]);
                    for r in 0..rows {
                        let g = dy[r];
                        if g != 0.0 {
                            for c in 0..cols {
                                adj[w][r * cols + c] += g * self.nodes[x].value[c];
                            }
                        }
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += self.nodes[w].value[r * cols + c] * dy[r];
                        }
                        adj[x][c] += acc;
                    }
                    adj[id] = dy;
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let dy = std::mem::take(&mut adj[id]);
                    for j in 0..dy.len() {
                        adj[a][j] += dy[j];
                        adj[b][j] += dy[j];
                    }
                    adj[id] = dy;
                }
                Op::Affine { a, ca, b, cb } => {
                    let (a, ca, b, cb) = (*a, *ca, *b, *cb);
                    let dy = std::mem::take(&mut adj[id]);
                    for j in 0..dy.len() {
                        adj[a][j] += ca * dy[j];
                        adj[b][j] += cb * dy[j];
                    }
                    adj[id] = dy;
                }
                Op::Scale { a, k } => {
                    let (a, k) = (*a, *k);
                    let dy = std::mem::take(&mut adj[id]);
                    for j in 0..dy.len() {
                        adj[a][j] += k * dy[j];
                    }
                    adj[id] = dy;
                }
                Op::Act { f, a } => {
                    let (f, a) = (*f, *a);
                    let dy = std::mem::take(&mut adj[id]);
                    for j in 0..dy.len() {
                        adj[a][j] += f.derivative(self.nodes[a].value[j]) * dy[j];
                    }
                    adj[id] = dy;
                }
                Op::SqDist { a, b } => {
                    let (a, b) = (*a, *b);
                    let dy = std::mem::take(&mut adj[id]);
                    let g = dy[0];
                    for j in 0..self.nodes[a].value.len() {
                        let d = 2.0 * (self.nodes[a].value[j] - self.nodes[b].value[j]) * g;
                        adj[a][j] += d;
                        adj[b][j] -= d;
                    }
                    adj[id] = dy;
                }
                Op::ScalarComb { terms } => {
                    let terms = terms.clone();
                    let g = adj[id][0];
                    for (src, c) in terms {
                        adj[src][0] += c * g;
                    }
                }
                Op::SoftplusNeg { u } => {
                    let u = *u;
                    let g = adj[id][0];
                    // d/du softplus(-u) = -sigmoid(-u)
                    adj[u][0] += -sigmoid(-self.nodes[u].value[0]) * g;
                }
            }
        }

        let mut bundle = GradientBundle::zeros(&model.arch);
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param { tag, layer, kind } = node.op {
                if tag == model.tag {
                    match kind {
                        ParamKind::Weight => bundle.layers[layer].dw.copy_from_slice(&adj[id]),
                        ParamKind::Bias => bundle.layers[layer].db.copy_from_slice(&adj[id]),
                    }
                }
            }
        }
        Ok(bundle)
    }
}

/// Per-layer gradients in the same layout as [`DenoiserModel`] parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(arch: &ModelArch) -> Self {
        GradientBundle {
            layers: arch
                .layer_shapes()
                .iter()
                .map(|&(rows, cols)| LayerGrad {
                    dw: vec![0.0; rows * cols],
                    db: vec![0.0; rows],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::DimMismatch {
                expected: self.layers.len(),
                got: other.layers.len(),
                context: "gradient bundle layers".to_string(),
            });
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            if mine.dw.len() != theirs.dw.len() || mine.db.len() != theirs.db.len() {
                return Err(Error::DimMismatch {
                    expected: mine.dw.len(),
                    got: theirs.dw.len(),
                    context: "gradient bundle layer shape".to_string(),
                });
            }
            for (a, b) in mine.dw.iter_mut().zip(&theirs.dw) {
                *a += b;
            }
            for (a, b) in mine.db.iter_mut().zip(&theirs.db) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for layer in self.layers.iter_mut() {
            for v in layer.dw.iter_mut().chain(layer.db.iter_mut()) {
                *v *= k;
            }
        }
    }

    /// Flat view matching [`DenoiserModel::params_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.dw);
            out.extend_from_slice(&layer.db);
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for layer in &self.layers {
            for v in layer.dw.iter().chain(layer.db.iter()) {
                acc += v * v;
            }
        }
        libm::sqrt(acc)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.dw.iter().chain(layer.db.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{what}: gradient of layer {i}")));
            }
        }
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.dw.iter().chain(l.db.iter()).all(|&v| v == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn tiny_arch(activation: Activation) -> ModelArch {
        ModelArch {
            data_dim: 2,
            cond_dim: 2,
            hidden_dim: 6,
            depth: 3,
            t_embed_dim: 4,
            activation,
        }
    }

    #[test]
    fn traced_forward_matches_plain_bitwise() {
        for activation in [Activation::Tanh, Activation::Silu] {
            let model = DenoiserModel::init(tiny_arch(activation), &SeededRng::new(8)).unwrap();
            let x = Vector::from_vec(vec![0.4, -1.2]);
            let c = Vector::from_vec(vec![2.0, 0.5]);
            for t in [0usize, 1, 25] {
                let plain = model.eps_predict(&x, t, &c).unwrap();
                let mut g = Graph::new();
                let bound = g.bind(&model, true);
                let xn = g.constant_vector(&x);
                let cn = g.constant_vector(&c);
                let en = g.eps_predict(&bound, xn, t, cn);
                for i in 0..2 {
                    assert_eq!(plain[i].to_bits(), g.value(en)[i].to_bits());
                }
            }
            for w in [0.0, 1.0, 2.5] {
                let plain = model.eps_predict_guided(&x, 5, &c, w).unwrap();
                let mut g = Graph::new();
                let bound = g.bind(&model, true);
                let xn = g.constant_vector(&x);
                let cn = g.constant_vector(&c);
                let en = g.eps_predict_guided(&bound, xn, 5, cn, w);
                for i in 0..2 {
                    assert_eq!(plain[i].to_bits(), g.value(en)[i].to_bits());
                }
            }
        }
    }

    /// Central finite difference of `f` at `params` in coordinate `i`.
    fn central_diff(
        model: &DenoiserModel,
        i: usize,
        h: f64,
        f: &dyn Fn(&DenoiserModel) -> f64,
    ) -> f64 {
        let base = model.params_flat();
        let mut plus = model.clone();
        let mut p = base.clone();
        p[i] += h;
        plus.set_params_flat(&p).unwrap();
        let mut minus = model.clone();
        let mut m = base.clone();
        m[i] -= h;
        minus.set_params_flat(&m).unwrap();
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for activation in [Activation::Tanh, Activation::Silu] {
            let model = DenoiserModel::init(tiny_arch(activation), &SeededRng::new(21)).unwrap();
            let x = Vector::from_vec(vec![0.7, -0.3]);
            let c = Vector::from_vec(vec![-1.0, 1.5]);
            let target = Vector::from_vec(vec![0.2, 0.9]);
            let t = 11;

            let mut g = Graph::new();
            let bound = g.bind(&model, true);
            let xn = g.constant_vector(&x);
            let cn = g.constant_vector(&c);
            let en = g.eps_predict(&bound, xn, t, cn);
            let tn = g.constant_vector(&target);
            let loss = g.sq_dist(tn, en);
            let grads = g.backward(loss, &bound).unwrap().to_flat();

            let f = |m: &DenoiserModel| {
                let e = m.eps_predict(&x, t, &c).unwrap();
                target.dist_sq(&e).unwrap()
            };
            let n = model.param_count();
            for i in (0..n).step_by(7) {
                let fd = central_diff(&model, i, 1e-5, &f);
                let denom = fd.abs().max(grads[i].abs()).max(1e-8);
                assert!(
                    (fd - grads[i]).abs() / denom < 1e-5,
                    "param {i}: analytic {} vs fd {fd}",
                    grads[i]
                );
            }
        }
    }

    #[test]
    fn gradients_flow_through_frozen_models() {
        // loss = || target - eps_ref(eps_theta(x)) ||^2: the frozen model sits
        // on top of the trainable one, so its VJP must pass through.
        let model = DenoiserModel::init(tiny_arch(Activation::Silu), &SeededRng::new(3)).unwrap();
        let frozen = DenoiserModel::init(tiny_arch(Activation::Silu), &SeededRng::new(4)).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.8]);
        let c = Vector::from_vec(vec![1.0, -1.0]);
        let target = Vector::from_vec(vec![-0.4, 0.25]);

        let mut g = Graph::new();
        let btrain = g.bind(&model, true);
        let bref = g.bind(&frozen, false);
        let xn = g.constant_vector(&x);
        let cn = g.constant_vector(&c);
        let inner = g.eps_predict(&btrain, xn, 9, cn);
        let outer = g.eps_predict(&bref, inner, 4, cn);
        let tn = g.constant_vector(&target);
        let loss = g.sq_dist(tn, outer);
        let grads = g.backward(loss, &btrain).unwrap();
        assert!(!grads.is_all_zero());

        let f = |m: &DenoiserModel| {
            let e = m.eps_predict(&x, 9, &c).unwrap();
            let o = frozen.eps_predict(&e, 4, &c).unwrap();
            target.dist_sq(&o).unwrap()
        };
        let flat = grads.to_flat();
        for i in (0..model.param_count()).step_by(11) {
            let fd = central_diff(&model, i, 1e-5, &f);
            let denom = fd.abs().max(flat[i].abs()).max(1e-8);
            assert!(
                (fd - flat[i]).abs() / denom < 1e-5,
                "param {i}: analytic {} vs fd {fd}",
                flat[i]
            );
        }
    }

    #[test]
    fn graph_is_single_use() {
        let model = DenoiserModel::init(tiny_arch(Activation::Tanh), &SeededRng::new(0)).unwrap();
        let mut g = Graph::new();
        let bound = g.bind(&model, true);
        let x = g.constant(&[0.0, 0.0]);
        let c = g.constant(&[0.0, 0.0]);
        let e = g.eps_predict(&bound, x, 1, c);
        let t = g.constant(&[0.0, 0.0]);
        let loss = g.sq_dist(t, e);
        assert!(g.backward(loss, &bound).is_ok());
        assert!(matches!(
            g.backward(loss, &bound),
            Err(Error::GraphConsumed)
        ));
    }

    #[test]
    fn frozen_bind_rejects_backward() {
        let model = DenoiserModel::init(tiny_arch(Activation::Tanh), &SeededRng::new(0)).unwrap();
        let mut g = Graph::new();
        let bound = g.bind(&model, false);
        let x = g.constant(&[0.0, 0.0]);
        let c = g.constant(&[0.0, 0.0]);
        let e = g.eps_predict(&bound, x, 1, c);
        let t = g.constant(&[0.0, 0.0]);
        let loss = g.sq_dist(t, e);
        assert!(g.backward(loss, &bound).is_err());
    }

    #[test]
    fn scalar_ops_differentiate_correctly() {
        // loss = softplus(-(3 * s1 - 2 * s2 + 1)) with s1 = ||a - b||^2,
        // checked against a hand-derived gradient in the scalar chain.
        let mut g = Graph::new();
        let a = g.constant(&[1.0, 2.0]);
        let b = g.constant(&[0.5, -0.5]);
        let s1 = g.sq_dist(a, b); // 0.25 + 6.25 = 6.5
        let s2 = g.scalar(2.0);
        let u = g.scalar_comb(&[(s1, 3.0), (s2, -2.0)], 1.0); // 19.5 - 4 + 1 = 16.5
        let loss = g.softplus_neg(u);
        assert!((g.scalar_value(s1) - 6.5).abs() < 1e-15);
        assert!((g.scalar_value(u) - 16.5).abs() < 1e-15);
        assert!((g.scalar_value(loss) - softplus(-16.5)).abs() < 1e-15);
    }
}
