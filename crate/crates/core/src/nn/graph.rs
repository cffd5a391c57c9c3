//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and whatever the backward pass needs. [`Graph::backward`] walks the tape
//! in reverse, accumulating gradients into every node that depends on a
//! parameter or a tracked variable.

use crate::error::{Error, Result};

use super::tensor::{matmul_into, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Named parameter tensors plus a generation counter bumped on every mutation.
#[derive(Debug, Clone)]
pub struct ParamStore<F = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    generation: u64,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), generation: 0 }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.generation += 1;
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        self.generation += 1;
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F = f64> {
    params: Vec<Option<Tensor<F>>>,
    nodes: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of a parameter; `None` if the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of any recorded node.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }
}

#[derive(Debug)]
enum Op<F> {
    Input,
    Variable,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Gelu { x: usize, tanh: Vec<F> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<F>, rstd: Vec<F> },
    Embedding { table: usize, ids: Vec<usize> },
    Rope { x: usize, cos: Vec<F>, sin: Vec<F>, head_dim: usize },
    Attention(Box<AttentionCache<F>>),
    SelectRows { x: usize, rows: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<F> },
    Sum(usize),
}

/// Forward state kept by a fused attention node.
#[derive(Debug)]
pub(crate) struct AttentionCache<F> {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
    /// Only the last `n_queries` positions of each sequence issue queries.
    pub n_queries: usize,
    /// `[batch, head, query, key]`, masked entries zero.
    pub scores: Vec<F>,
    pub probs: Vec<F>,
}

impl<F> AttentionCache<F> {
    pub fn first_query(&self) -> usize {
        self.seq - self.n_queries
    }

    /// Offset of the score row of `(batch, head, local query)`.
    pub fn row_offset(&self, b: usize, h: usize, local: usize) -> usize {
        ((b * self.heads + h) * self.n_queries + local) * self.seq
    }

    pub fn visible_keys(&self, position: usize) -> usize {
        if self.causal {
            position + 1
        } else {
            self.seq
        }
    }
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug)]
pub struct Graph<F = f64> {
    nodes: Vec<Node<F>>,
    params_generation: Option<u64>,
    num_params: usize,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params_generation: None, num_params: 0 }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Input, false)
    }

    /// Free leaf that receives a gradient (used by gradient checks).
    pub fn variable(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Variable, true)
    }

    /// Copies a parameter into the graph and ties the graph to the store's
    /// current generation.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        match self.params_generation {
            None => self.params_generation = Some(store.generation()),
            Some(g) => debug_assert_eq!(g, store.generation(), "store mutated while recording"),
        }
        self.num_params = self.num_params.max(store.len());
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if bv.shape().len() != 2 {
            return Err(Error::Shape(format!("matmul rhs must be 2-D, got {:?}", bv.shape())));
        }
        let (m, k) = av.matrix_dims();
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_into(av.data(), false, bv.data(), false, m, k, n, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = n;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), needs))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let mut value = self.nodes[a.0].value.clone();
        value.add_assign(&self.nodes[b.0].value);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::Add(a.0, b.0), needs))
    }

    /// Adds a length-`n` vector to every row of an `[.., n]` tensor.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, n) = self.nodes[a.0].value.matrix_dims();
        if self.nodes[bias.0].value.len() != n {
            return Err(Error::Shape(format!(
                "bias of length {} for rows of length {n}",
                self.nodes[bias.0].value.len()
            )));
        }
        let mut value = self.nodes[a.0].value.clone();
        let b = self.nodes[bias.0].value.data();
        for row in value.data_mut().chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        let needs = self.needs(&[a.0, bias.0]);
        Ok(self.push(value, Op::AddBias(a.0, bias.0), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let mut value = self.nodes[a.0].value.clone();
        value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()).for_each(|(x, &y)| *x = *x * y);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::Mul(a.0, b.0), needs))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = F::from_f64(c);
        let mut value = self.nodes[a.0].value.clone();
        value.data_mut().iter_mut().for_each(|x| *x = *x * c);
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Scale(a.0, c), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let c = F::from_f64(GELU_C);
        let k = F::from_f64(GELU_A);
        let half = F::from_f64(0.5);
        let mut value = self.nodes[a.0].value.clone();
        let mut tanh = Vec::with_capacity(value.len());
        value.data_mut().iter_mut().for_each(|x| {
            let t = (c * (*x + k * *x * *x * *x)).tanh();
            tanh.push(t);
            *x = half * *x * (F::one() + t);
        });
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Gelu { x: a.0, tanh }, needs)
    }

    /// Normalises each row over the last axis, then applies `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (rows, n) = xv.matrix_dims();
        if self.nodes[gamma.0].value.len() != n || self.nodes[beta.0].value.len() != n {
            return Err(Error::Shape("layer norm affine parameters have wrong length".into()));
        }
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let eps = F::from_f64(LAYER_NORM_EPS);
        let inv_n = F::from_f64(1.0 / n as f64);
        let mut xhat = vec![F::zero(); rows * n];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * n];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<F>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(&[x.0, gamma.0, beta.0]);
        Ok(self.push(value, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd }, needs))
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = &self.nodes[table.0].value;
        if tv.shape().len() != 2 {
            return Err(Error::Shape("embedding table must be 2-D".into()));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!("token {bad} out of range for vocabulary {vocab}")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let needs = self.needs(&[table.0]);
        Ok(self.push(value, Op::Embedding { table: table.0, ids: ids.to_vec() }, needs))
    }

    /// Rotates consecutive pairs inside every head of a `[batch*seq, heads*head_dim]`
    /// tensor by `position · freqs[pair]`, with position = row mod seq.
    pub fn rope(&mut self, x: NodeId, seq: usize, head_dim: usize, freqs: &[f64]) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (rows, width) = xv.matrix_dims();
        if !head_dim.is_multiple_of(2) || width % head_dim != 0 || freqs.len() != head_dim / 2 || rows % seq != 0 {
            return Err(Error::Shape(format!(
                "rope: width {width}, head_dim {head_dim}, {} freqs, {rows} rows, seq {seq}",
                freqs.len()
            )));
        }
        let pairs = head_dim / 2;
        let mut cos = vec![F::zero(); seq * pairs];
        let mut sin = vec![F::zero(); seq * pairs];
        for pos in 0..seq {
            for (i, &f) in freqs.iter().enumerate() {
                let angle = pos as f64 * f;
                cos[pos * pairs + i] = F::from_f64(angle.cos());
                sin[pos * pairs + i] = F::from_f64(angle.sin());
            }
        }
        let mut out = xv.data().to_vec();
        rotate_rows(&mut out, width, seq, head_dim, &cos, &sin, false);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let needs = self.needs(&[x.0]);
        Ok(self.push(value, Op::Rope { x: x.0, cos, sin, head_dim }, needs))
    }

    /// Multi-head scaled dot-product attention on `[batch*seq, heads*d_k]`
    /// projections, scores scaled by `1/√d_k`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        causal: bool,
    ) -> Result<NodeId> {
        self.attention_tail(q, k, v, batch, seq, heads, causal, seq)
    }

    /// Attention in which only the last `n_queries` positions of each
    /// sequence issue queries: `q` is `[batch*n_queries, width]` while `k` and
    /// `v` cover all `batch*seq` positions. The output has the shape of `q`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention_tail(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        causal: bool,
        n_queries: usize,
    ) -> Result<NodeId> {
        self.same_shape(k, v, "attention k/v")?;
        let (rows, width) = self.nodes[k.0].value.matrix_dims();
        let (q_rows, q_width) = self.nodes[q.0].value.matrix_dims();
        if rows != batch * seq
            || heads == 0
            || width % heads != 0
            || n_queries == 0
            || n_queries > seq
            || q_rows != batch * n_queries
            || q_width != width
        {
            return Err(Error::Shape(format!(
                "attention: q [{q_rows}, {q_width}], k/v [{rows}, {width}], batch {batch}, seq {seq}, \
                 heads {heads}, {n_queries} queries"
            )));
        }
        let dk = width / heads;
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());
        let mut cache = AttentionCache {
            q: q.0,
            k: k.0,
            v: v.0,
            batch,
            seq,
            heads,
            causal,
            n_queries,
            scores: vec![F::zero(); batch * heads * n_queries * seq],
            probs: vec![F::zero(); batch * heads * n_queries * seq],
        };
        let (qd, kd, vd) = (self.nodes[q.0].value.data(), self.nodes[k.0].value.data(), self.nodes[v.0].value.data());
        let first = cache.first_query();
        let mut out = vec![F::zero(); q_rows * width];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dk;
                for local in 0..n_queries {
                    let pos = first + local;
                    let qi = &qd[(b * n_queries + local) * width + off..][..dk];
                    let keys = cache.visible_keys(pos);
                    let base = cache.row_offset(b, h, local);
                    let mut max = F::neg_infinity();
                    for j in 0..keys {
                        let kj = &kd[(b * seq + j) * width + off..][..dk];
                        let s = dot(qi, kj) * scale;
                        cache.scores[base + j] = s;
                        max = max.max(s);
                    }
                    let mut total = F::zero();
                    for j in 0..keys {
                        let e = (cache.scores[base + j] - max).exp();
                        cache.probs[base + j] = e;
                        total += e;
                    }
                    let o = &mut out[(b * n_queries + local) * width + off..][..dk];
                    for j in 0..keys {
                        let p = cache.probs[base + j] / total;
                        cache.probs[base + j] = p;
                        let vj = &vd[(b * seq + j) * width + off..][..dk];
                        o.iter_mut().zip(vj).for_each(|(a, &x)| *a += p * x);
                    }
                }
            }
        }
        let value = Tensor::new(self.nodes[q.0].value.shape().to_vec(), out)?;
        let needs = self.needs(&[q.0, k.0, v.0]);
        Ok(self.push(value, Op::Attention(Box::new(cache)), needs))
    }

    pub(crate) fn attention_cache(&self, id: NodeId) -> Option<&AttentionCache<F>> {
        match &self.nodes[id.0].op {
            Op::Attention(c) => Some(c),
            _ => None,
        }
    }

    /// Picks rows of a tensor viewed as `[rows, last]`, producing `[rows.len(), last]`.
    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (n, d) = xv.matrix_dims();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Shape(format!("row {bad} out of range for {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&xv.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        let needs = self.needs(&[x.0]);
        Ok(self.push(value, Op::SelectRows { x: x.0, rows: rows.to_vec() }, needs))
    }

    /// Mean cross-entropy of `[n, classes]` logits against integer targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = &self.nodes[logits.0].value;
        let (n, c) = lv.matrix_dims();
        if targets.len() != n {
            return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(format!("target {bad} out of range for {c} classes")));
        }
        let mut probs = vec![F::zero(); n * c];
        let mut loss = F::zero();
        for r in 0..n {
            let row = &lv.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[r * c + j] = e;
                total += e;
            }
            for j in 0..c {
                probs[r * c + j] = probs[r * c + j] / total;
            }
            loss += total.ln() + max - row[targets[r]];
        }
        let value = Tensor::scalar(loss / F::from_f64(n as f64));
        let needs = self.needs(&[logits.0]);
        Ok(self.push(value, Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs }, needs))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0].value.data().iter().copied().sum::<F>();
        let needs = self.needs(&[x.0]);
        self.push(Tensor::scalar(total), Op::Sum(x.0), needs)
    }

    /// Reverse pass from a scalar node, seeded with `d loss = 1`.
    pub fn backward(&self, loss: NodeId, store: &ParamStore<F>) -> Result<Gradients<F>> {
        self.backward_with_seed(loss, F::one(), store)
    }

    /// Reverse pass with an explicit upstream scalar.
    pub fn backward_with_seed(&self, loss: NodeId, seed: F, store: &ParamStore<F>) -> Result<Gradients<F>> {
        if let Some(g) = self.params_generation {
            if g != store.generation() {
                return Err(Error::StaleGraph);
            }
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape().to_vec(), vec![seed])?);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backward_node(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        let mut params: Vec<Option<Tensor<F>>> = (0..store.len().max(self.num_params)).map(|_| None).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &grads[idx] {
                    match &mut params[pid.0] {
                        Some(acc) => acc.add_assign(g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn backward_node(&self, idx: usize, up: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let needs = |i: usize| self.nodes[i].needs_grad;
        match &node.op {
            Op::Input | Op::Variable | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k) = av.matrix_dims();
                let n = bv.shape()[1];
                if needs(*a) {
                    let mut da = vec![F::zero(); m * k];
                    matmul_into(up.data(), false, bv.data(), true, m, n, k, &mut da, false);
                    accumulate(grads, *a, av.shape(), da);
                }
                if needs(*b) {
                    let mut db = vec![F::zero(); k * n];
                    matmul_into(av.data(), true, up.data(), false, k, m, n, &mut db, false);
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Add(a, b) => {
                for &i in [a, b] {
                    if needs(i) {
                        accumulate(grads, i, up.shape(), up.data().to_vec());
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if needs(*a) {
                    accumulate(grads, *a, up.shape(), up.data().to_vec());
                }
                if needs(*bias) {
                    let bv = &self.nodes[*bias].value;
                    let n = bv.len();
                    let mut db = vec![F::zero(); n];
                    for row in up.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    accumulate(grads, *bias, bv.shape(), db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if needs(*a) {
                    let d = up.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                    accumulate(grads, *a, av.shape(), d);
                }
                if needs(*b) {
                    let d = up.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                    accumulate(grads, *b, bv.shape(), d);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let d = up.data().iter().map(|&g| g * *c).collect();
                    accumulate(grads, *a, up.shape(), d);
                }
            }
            Op::Gelu { x: a, tanh } => {
                if needs(*a) {
                    let c = F::from_f64(GELU_C);
                    let half = F::from_f64(0.5);
                    let three_k = F::from_f64(3.0 * GELU_A);
                    let xv = &self.nodes[*a].value;
                    let d = up
                        .data()
                        .iter()
                        .zip(xv.data())
                        .zip(tanh)
                        .map(|((&g, &x), &t)| {
                            let dt = (F::one() - t * t) * c * (F::one() + three_k * x * x);
                            g * (half * (F::one() + t) + half * x * dt)
                        })
                        .collect();
                    accumulate(grads, *a, xv.shape(), d);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = &self.nodes[*gamma].value;
                let n = gv.len();
                let rows = rstd.len();
                if needs(*gamma) || needs(*beta) {
                    let mut dg = vec![F::zero(); n];
                    let mut db = vec![F::zero(); n];
                    for r in 0..rows {
                        for j in 0..n {
                            let g = up.data()[r * n + j];
                            dg[j] += g * xhat[r * n + j];
                            db[j] += g;
                        }
                    }
                    if needs(*gamma) {
                        accumulate(grads, *gamma, gv.shape(), dg);
                    }
                    if needs(*beta) {
                        accumulate(grads, *beta, self.nodes[*beta].value.shape(), db);
                    }
                }
                if needs(*x) {
                    let inv_n = F::from_f64(1.0 / n as f64);
                    let mut dx = vec![F::zero(); rows * n];
                    for r in 0..rows {
                        let mut mean_d = F::zero();
                        let mut mean_dx = F::zero();
                        for j in 0..n {
                            let dh = up.data()[r * n + j] * gv.data()[j];
                            mean_d += dh;
                            mean_dx += dh * xhat[r * n + j];
                        }
                        mean_d = mean_d * inv_n;
                        mean_dx = mean_dx * inv_n;
                        for j in 0..n {
                            let dh = up.data()[r * n + j] * gv.data()[j];
                            dx[r * n + j] = rstd[r] * (dh - mean_d - xhat[r * n + j] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, self.nodes[*x].value.shape(), dx);
                }
            }
            Op::Embedding { table, ids } => {
                if needs(*table) {
                    let tv = &self.nodes[*table].value;
                    let d = tv.shape()[1];
                    let mut dt = vec![F::zero(); tv.len()];
                    for (r, &i) in ids.iter().enumerate() {
                        dt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&up.data()[r * d..(r + 1) * d])
                            .for_each(|(a, &g)| *a += g);
                    }
                    accumulate(grads, *table, tv.shape(), dt);
                }
            }
            Op::Rope { x, cos, sin, head_dim } => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    let (_, width) = xv.matrix_dims();
                    let seq = cos.len() / (head_dim / 2);
                    let mut d = up.data().to_vec();
                    rotate_rows(&mut d, width, seq, *head_dim, cos, sin, true);
                    accumulate(grads, *x, xv.shape(), d);
                }
            }
            Op::Attention(c) => self.attention_backward(c, up, grads),
            Op::SelectRows { x, rows } => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    let (_, d) = xv.matrix_dims();
                    let mut dx = vec![F::zero(); xv.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        dx[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&up.data()[k * d..(k + 1) * d])
                            .for_each(|(a, &g)| *a += g);
                    }
                    accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if needs(*logits) {
                    let lv = &self.nodes[*logits].value;
                    let (n, c) = lv.matrix_dims();
                    let scale = up.data()[0] / F::from_f64(n as f64);
                    let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * c + t] = d[r * c + t] - scale;
                    }
                    accumulate(grads, *logits, lv.shape(), d);
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let xv = &self.nodes[*x].value;
                    accumulate(grads, *x, xv.shape(), vec![up.data()[0]; xv.len()]);
                }
            }
        }
    }

    fn attention_backward(&self, c: &AttentionCache<F>, up: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let (rows, width) = self.nodes[c.k].value.matrix_dims();
        let q_rows = c.batch * c.n_queries;
        let dk = width / c.heads;
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());
        let (qd, kd, vd) = (self.nodes[c.q].value.data(), self.nodes[c.k].value.data(), self.nodes[c.v].value.data());
        let mut dq = vec![F::zero(); q_rows * width];
        let mut dk_acc = vec![F::zero(); rows * width];
        let mut dv = vec![F::zero(); rows * width];
        let seq = c.seq;
        let first = c.first_query();
        let mut dp = vec![F::zero(); seq];
        for b in 0..c.batch {
            for h in 0..c.heads {
                let off = h * dk;
                for local in 0..c.n_queries {
                    let keys = c.visible_keys(first + local);
                    let base = c.row_offset(b, h, local);
                    let row_i = (b * c.n_queries + local) * width + off;
                    let go = &up.data()[row_i..row_i + dk];
                    let mut weighted = F::zero();
                    for j in 0..keys {
                        let row_j = (b * seq + j) * width + off;
                        let p = c.probs[base + j];
                        dp[j] = dot(go, &vd[row_j..row_j + dk]);
                        weighted += p * dp[j];
                        dv[row_j..row_j + dk].iter_mut().zip(go).for_each(|(a, &g)| *a += p * g);
                    }
                    for j in 0..keys {
                        let row_j = (b * seq + j) * width + off;
                        let ds = c.probs[base + j] * (dp[j] - weighted) * scale;
                        for t in 0..dk {
                            dq[row_i + t] += ds * kd[row_j + t];
                            dk_acc[row_j + t] += ds * qd[row_i + t];
                        }
                    }
                }
            }
        }
        if self.nodes[c.q].needs_grad {
            accumulate(grads, c.q, self.nodes[c.q].value.shape(), dq);
        }
        if self.nodes[c.k].needs_grad {
            accumulate(grads, c.k, self.nodes[c.k].value.shape(), dk_acc);
        }
        if self.nodes[c.v].needs_grad {
            accumulate(grads, c.v, self.nodes[c.v].value.shape(), dv);
        }
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], idx: usize, shape: &[usize], data: Vec<F>) {
    match &mut grads[idx] {
        Some(g) => g.data_mut().iter_mut().zip(&data).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient matches value shape")),
    }
}

/// Rotates each `(2i, 2i+1)` pair within every head; `inverse` applies the transpose.
fn rotate_rows<F: Scalar>(
    data: &mut [F],
    width: usize,
    seq: usize,
    head_dim: usize,
    cos: &[F],
    sin: &[F],
    inverse: bool,
) {
    let pairs = head_dim / 2;
    for (r, row) in data.chunks_mut(width).enumerate() {
        let pos = r % seq;
        for head in row.chunks_mut(head_dim) {
            for i in 0..pairs {
                let (c, s) = (cos[pos * pairs + i], sin[pos * pairs + i]);
                let s = if inverse { -s } else { s };
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * c - b * s;
                head[2 * i + 1] = a * s + b * c;
            }
        }
    }
}
