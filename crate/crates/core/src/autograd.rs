//! A small reverse-mode differentiation tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are borrowed,
//! never copied; gradients for them are collected by [`Graph::backward`].
//! Only the operations the encoders and the losses need are provided.

use crate::tensor::{dot, norm, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Param(usize),
    Input,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    Gelu(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Gather(NodeId, Vec<usize>),
    Cosine(NodeId, NodeId),
    Pick(NodeId, usize, usize),
    MseTarget(NodeId, Vec<f64>),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: Vec<&'p Tensor>,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a parameter by its position in the graph's parameter list.
    /// `None` when the parameter did not influence the output.
    pub fn param(&self, index: usize) -> Option<&Tensor> {
        self.params.get(index).and_then(|g| g.as_ref())
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: Vec<&'p Tensor>) -> Self {
        let n = params.len();
        Graph {
            params,
            param_nodes: vec![None; n],
            nodes: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(i), _) => self.params[*i],
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node for parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, v.cols()), "add_row bias shape");
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scaled(s);
        self.push(Op::Scale(a, s), v)
    }

    /// Row-wise layer normalization with learned `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut normalized = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = normalized.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            out,
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        self.push(Op::Gelu(a), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let v = Tensor::from_vec(rows, cols, data).expect("concat_rows");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    /// Joins `1 × 1` nodes into a `1 × n` row.
    pub fn concat_cols(&mut self, scalars: &[NodeId]) -> NodeId {
        let data = scalars.iter().map(|&s| self.value(s).item()).collect();
        self.push(Op::ConcatCols(scalars.to_vec()), Tensor::row_vector(data))
    }

    /// Selects rows of `table` by index (embedding lookup, slicing).
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(indices.len(), t.cols(), data).expect("gather");
        self.push(Op::Gather(table, indices.to_vec()), v)
    }

    /// Cosine similarity of two `1 × d` rows; `None` when either has zero norm.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Option<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, nb) = (norm(av.data()), norm(bv.data()));
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        let s = dot(av.data(), bv.data()) / (na * nb);
        Some(self.push(Op::Cosine(a, b), Tensor::scalar(s)))
    }

    pub fn pick(&mut self, a: NodeId, row: usize, col: usize) -> NodeId {
        let v = self.value(a).get(row, col);
        self.push(Op::Pick(a, row, col), Tensor::scalar(v))
    }

    /// `(1/n) Σ (aᵢ − targetᵢ)²` for a `1 × n` row.
    pub fn mse_target(&mut self, a: NodeId, target: Vec<f64>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.len(), target.len(), "mse_target length");
        let n = target.len() as f64;
        let v = av
            .data()
            .iter()
            .zip(&target)
            .map(|(q, g)| (q - g) * (q - g))
            .sum::<f64>()
            / n;
        self.push(Op::MseTarget(a, target), Tensor::scalar(v))
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(_) | Op::Input => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        let dy = g.row(r);
                        let xh = normalized.row(r);
                        let dxh: Vec<f64> = dy.iter().zip(gv.data()).map(|(d, w)| d * w).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / cols as f64;
                        let mean_dxh_xh = dot(&dxh, xh) / cols as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                        for (c, o) in dgain.row_mut(0).iter_mut().enumerate() {
                            *o += dy[c] * xh[c];
                        }
                    }
                    accumulate(&mut grads, *bias, column_sums(&g));
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dy = g.row(r);
                        let inner = dot(yr, dy);
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (dy[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut dx = g.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        *d *= gelu_derivative(xv);
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let cols = g.cols();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(
                            &mut grads,
                            p,
                            Tensor::from_vec(rows, cols, slice).expect("concat slice"),
                        );
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    for (&p, &d) in parts.iter().zip(g.data()) {
                        accumulate(&mut grads, p, Tensor::scalar(d));
                    }
                }
                Op::Gather(table, indices) => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, d) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Cosine(a, b) => {
                    let d = g.item();
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (na, nb) = (norm(av.data()), norm(bv.data()));
                    let s = node.value.as_ref().expect("cosine value").item();
                    let da: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| d * (y / (na * nb) - s * x / (na * na)))
                        .collect();
                    let db: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| d * (x / (na * nb) - s * y / (nb * nb)))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::row_vector(da));
                    accumulate(&mut grads, *b, Tensor::row_vector(db));
                }
                Op::Pick(a, r, c) => {
                    let av = self.value(*a);
                    let mut d = Tensor::zeros(av.rows(), av.cols());
                    d.row_mut(*r)[*c] = g.item();
                    accumulate(&mut grads, *a, d);
                }
                Op::MseTarget(a, target) => {
                    let av = self.value(*a);
                    let scale = 2.0 * g.item() / target.len() as f64;
                    let d = av
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(q, t)| scale * (q - t))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::row_vector(d));
                }
            }
            grads[idx] = Some(g);
        }

        let params = self
            .param_nodes
            .iter()
            .map(|id| id.and_then(|id| grads[id.0].clone()))
            .collect();
        Gradients {
            nodes: grads,
            params,
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Numerically stable softmax (max-subtraction).
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Central differences over every parameter entry of a small graph.
    fn check(params: &mut [Tensor], build: impl Fn(&mut Graph) -> NodeId) {
        let analytic: Vec<Option<Tensor>> = {
            let mut g = Graph::new(params.iter().collect());
            let out = build(&mut g);
            g.backward(out).into_params()
        };
        let h = 1e-5;
        for p in 0..params.len() {
            for i in 0..params[p].len() {
                let orig = params[p].data()[i];
                params[p].data_mut()[i] = orig + h;
                let up = {
                    let mut g = Graph::new(params.iter().collect());
                    let out = build(&mut g);
                    g.value(out).item()
                };
                params[p].data_mut()[i] = orig - h;
                let down = {
                    let mut g = Graph::new(params.iter().collect());
                    let out = build(&mut g);
                    g.value(out).item()
                };
                params[p].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[p].as_ref().map_or(0.0, |t| t.data()[i]);
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "param {p}[{i}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![
            random(4, 3, &mut rng),
            random(3, 3, &mut rng),
            random(1, 3, &mut rng),
            random(1, 3, &mut rng),
            random(6, 3, &mut rng),
        ];
        check(&mut params, |g| {
            let x = g.param(0);
            let w = g.param(1);
            let gain = g.param(2);
            let bias = g.param(3);
            let table = g.param(4);
            let extra = g.gather(table, &[5, 1, 5, 0]);
            let x = g.add(x, extra);
            let h = g.layer_norm(x, gain, bias);
            let q = g.matmul(h, w);
            let kt = g.transpose(h);
            let s = g.matmul(q, kt);
            let s = g.scale(s, 0.5);
            let a = g.softmax_rows(s);
            let o = g.matmul(a, h);
            let o = g.gelu(o);
            let o = g.add_row(o, bias);
            let r0 = g.gather(o, &[0]);
            let r1 = g.gather(o, &[3]);
            let both = g.concat_rows(&[r0, r1]);
            let c0 = g.gather(both, &[0]);
            let c1 = g.gather(both, &[1]);
            let cos = g.cosine(c0, c1).unwrap();
            let p = g.pick(o, 2, 1);
            let row = g.concat_cols(&[cos, p]);
            let sm = g.softmax_rows(row);
            g.mse_target(sm, vec![1.0, 0.25])
        });
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let z = Tensor::zeros(1, 3);
        let o = Tensor::filled(1, 3, 1.0);
        let mut g = Graph::new(vec![&z, &o]);
        let (a, b) = (g.param(0), g.param(1));
        assert!(g.cosine(a, b).is_none());
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let mut v = vec![1000.0, 1001.0, 999.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
