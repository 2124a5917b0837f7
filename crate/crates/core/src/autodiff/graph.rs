use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{AutodiffError, Gradients, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Stack(Vec<NodeId>),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LogSigmoid(NodeId),
    Softmax(NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    RowMax(NodeId, Vec<usize>),
    ReduceMax(NodeId, usize),
    MaxOver(Vec<NodeId>, Vec<usize>),
    MeanOver(Vec<NodeId>),
    SumOver(Vec<NodeId>),
    Embedding(NodeId, usize),
    Dropout(NodeId, Vec<f64>),
    CrossEntropy(NodeId, usize, Vec<f64>),
    Pick(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Stack(_) => "stack",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::RowMax(..) => "row_max",
            Op::ReduceMax(..) => "reduce_max",
            Op::MaxOver(..) => "max_over",
            Op::MeanOver(_) => "mean_over",
            Op::SumOver(_) => "sum_over",
            Op::Embedding(..) => "embedding",
            Op::Dropout(..) => "dropout",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Pick(..) => "pick",
        }
    }
}

struct Node {
    op: Op,
    // `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Dropout configuration carried by a training graph.
struct DropoutState {
    rate: f64,
    rng: ChaCha8Rng,
}

/// A single-use tape of primitive operations over a borrowed [`ParamStore`].
///
/// Nodes are recorded in creation order, which is a topological order, so
/// the reverse pass walks the tape backwards. Every forward op checks its
/// output for NaN/Inf.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    dropout: Option<DropoutState>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            dropout: None,
        }
    }

    /// A training graph: [`Graph::dropout`] masks with `rate`, drawn from a
    /// generator seeded by `seed`.
    pub fn training(params: &'p ParamStore, rate: f64, seed: u64) -> Self {
        let mut g = Graph::new(params);
        if rate > 0.0 {
            g.dropout = Some(DropoutState {
                rate,
                rng: ChaCha8Rng::seed_from_u64(seed),
            });
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64, AutodiffError> {
        self.value(id).item()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op.name()));
        }
        let requires_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => self.inputs_of(&op).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Slice(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::LogSigmoid(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::RowMax(a, _)
            | Op::ReduceMax(a, _)
            | Op::Embedding(a, _)
            | Op::Dropout(a, _)
            | Op::CrossEntropy(a, _, _)
            | Op::Pick(a, _) => vec![*a],
            Op::Concat(xs) | Op::Stack(xs) | Op::MaxOver(xs, _) | Op::MeanOver(xs) | Op::SumOver(xs) => {
                xs.clone()
            }
        }
    }

    // ---------------------------------------------------------------- leaves

    /// A constant leaf. Gradients never flow into inputs.
    pub fn input(&mut self, t: Tensor) -> Result<NodeId, AutodiffError> {
        self.push(Op::Input, t)
    }

    pub fn input_vector(&mut self, v: Vec<f64>) -> Result<NodeId, AutodiffError> {
        self.input(Tensor::vector(v))
    }

    pub fn constant(&mut self, v: f64) -> Result<NodeId, AutodiffError> {
        self.input(Tensor::scalar(v))
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Copies the current value of `id` into a constant leaf; used to cut
    /// gradient flow (block boundaries, baseline inputs).
    pub fn detach(&mut self, id: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(id).clone();
        self.input(v)
    }

    // ------------------------------------------------------------ primitives

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(AutodiffError::mismatch("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = ad[i * k..(i + 1) * k].iter().zip(bd).map(|(x, y)| x * y).sum();
            }
        }
        for i in (0..m).filter(|_| n > 1) {
            let arow = &ad[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &x) in arow.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let t = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), t)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 2 {
            return Err(AutodiffError::Shape(format!("transpose needs a matrix, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let d = av.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push(Op::Transpose(a), t)
    }

    fn zip_same(&self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::mismatch(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), t)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, |x| x * c);
        self.push(Op::Scale(a, c), t)
    }

    /// Adds the constant `c` to every element.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, |x| x + c);
        self.push(Op::Offset(a), t)
    }

    /// Concatenates vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::Empty("concat"));
        }
        let mut data = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if v.rank() > 1 {
                return Err(AutodiffError::Shape(format!("concat takes vectors, got {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        self.push(Op::Concat(xs.to_vec()), Tensor::vector(data))
    }

    /// `a[start..start + len]` of a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        if v.rank() != 1 || start + len > v.len() {
            return Err(AutodiffError::Shape(format!(
                "slice [{start}, {}) out of range for shape {:?}",
                start + len,
                v.shape()
            )));
        }
        let t = Tensor::vector(v.data()[start..start + len].to_vec());
        self.push(Op::Slice(a, start), t)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = xs.first().ok_or(AutodiffError::Empty("stack"))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(width * xs.len());
        for &x in xs {
            let v = self.value(x);
            if v.rank() != 1 || v.len() != width {
                return Err(AutodiffError::mismatch("stack", self.value(*first).shape(), v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![xs.len(), width], data)?;
        self.push(Op::Stack(xs.to_vec()), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), t)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, |x| x.max(0.0));
        self.push(Op::Relu(a), t)
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.map(a, log_sigmoid);
        self.push(Op::LogSigmoid(a), t)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        if v.rank() != 1 || v.is_empty() {
            return Err(AutodiffError::Shape(format!("softmax needs a nonempty vector, got {:?}", v.shape())));
        }
        let t = Tensor::vector(softmax(v.data()));
        self.push(Op::Softmax(a), t)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || av.shape() != bv.shape() {
            return Err(AutodiffError::mismatch("dot", av.shape(), bv.shape()));
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(s))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Per-row maximum of a matrix. Ties resolve to the lowest column.
    pub fn row_max(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        let s = v.shape();
        if s.len() != 2 || s[1] == 0 {
            return Err(AutodiffError::Shape(format!("row_max needs a matrix with columns, got {s:?}")));
        }
        let mut arg = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(s[0]);
        for r in 0..s[0] {
            let (i, m) = argmax(v.row(r));
            arg.push(i);
            out.push(m);
        }
        self.push(Op::RowMax(a, arg), Tensor::vector(out))
    }

    /// Maximum element of a vector. Ties resolve to the lowest index.
    pub fn reduce_max(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(AutodiffError::Empty("reduce_max"));
        }
        let (i, m) = argmax(v.data());
        self.push(Op::ReduceMax(a, i), Tensor::scalar(m))
    }

    /// Elementwise maximum over a set of same-shape tensors.
    pub fn max_over(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = *xs.first().ok_or(AutodiffError::Empty("max_over"))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = self.value(first).data().to_vec();
        let mut src = vec![0usize; out.len()];
        for (k, &x) in xs.iter().enumerate().skip(1) {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(AutodiffError::mismatch("max_over", &shape, v.shape()));
            }
            for (j, &y) in v.data().iter().enumerate() {
                if y > out[j] {
                    out[j] = y;
                    src[j] = k;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(Op::MaxOver(xs.to_vec(), src), t)
    }

    fn reduce_set(&self, name: &'static str, xs: &[NodeId], scale: f64) -> Result<Tensor, AutodiffError> {
        let first = *xs.first().ok_or(AutodiffError::Empty(name))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(AutodiffError::mismatch(name, &shape, v.shape()));
            }
            for (o, y) in out.iter_mut().zip(v.data()) {
                *o += y;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        Tensor::new(shape, out)
    }

    /// Elementwise mean over a set of same-shape tensors.
    pub fn mean_over(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let t = self.reduce_set("mean_over", xs, 1.0 / xs.len().max(1) as f64)?;
        self.push(Op::MeanOver(xs.to_vec()), t)
    }

    /// Elementwise sum over a set of same-shape tensors.
    pub fn sum_over(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let t = self.reduce_set("sum_over", xs, 1.0)?;
        self.push(Op::SumOver(xs.to_vec()), t)
    }

    /// Row `index` of an embedding table.
    pub fn embedding(&mut self, table: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(table);
        if v.rank() != 2 || index >= v.shape()[0] {
            return Err(AutodiffError::Shape(format!(
                "embedding row {index} out of range for table {:?}",
                v.shape()
            )));
        }
        let t = Tensor::vector(v.row(index).to_vec());
        self.push(Op::Embedding(table, index), t)
    }

    /// Inverted dropout on training graphs; the identity otherwise.
    pub fn dropout(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let n = self.value(a).len();
        let mask = match self.dropout.as_mut() {
            None => return Ok(a),
            Some(d) => dropout_mask(n, d.rate, &mut d.rng),
        };
        self.apply_mask(a, mask)
    }

    /// Multiplies `a` elementwise by a precomputed mask.
    pub fn apply_mask(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        if mask.len() != v.len() {
            return Err(AutodiffError::Shape(format!(
                "dropout mask of length {} for shape {:?}",
                mask.len(),
                v.shape()
            )));
        }
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Dropout(a, mask), t)
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(logits);
        if v.rank() != 1 || target >= v.len() {
            return Err(AutodiffError::Shape(format!(
                "cross_entropy target {target} for logits {:?}",
                v.shape()
            )));
        }
        let lse = log_sum_exp(v.data());
        let loss = lse - v.data()[target];
        let probs = softmax(v.data());
        self.push(Op::CrossEntropy(logits, target, probs), Tensor::scalar(loss))
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let v = self.value(a);
        if index >= v.len() {
            return Err(AutodiffError::Shape(format!("pick {index} from shape {:?}", v.shape())));
        }
        let x = v.data()[index];
        self.push(Op::Pick(a, index), Tensor::scalar(x))
    }

    // -------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            slots: vec![None; self.params.len()],
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let shape = self.params.value(*p).shape().to_vec();
                    out.slots[p.0] = Some(Tensor::new(shape, g)?);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                    if self.needs(*a) && n == 1 {
                        let bd = bv.data();
                        let ga = slot(&mut grads, *a, m * k);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (o, &y) in ga[r * k..(r + 1) * k].iter_mut().zip(bd) {
                                *o += gr * y;
                            }
                        }
                    } else if self.needs(*a) {
                        let bd = bv.data();
                        let ga = slot(&mut grads, *a, m * k);
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if self.needs(*b) && n == 1 {
                        let ad = av.data();
                        let gb = slot(&mut grads, *b, k);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb.iter_mut().zip(&ad[r * k..(r + 1) * k]) {
                                *o += gr * x;
                            }
                        }
                    } else if self.needs(*b) {
                        let ad = av.data();
                        let gb = slot(&mut grads, *b, k * n);
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = ad[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let s = self.value(*a).shape();
                    let (m, n) = (s[0], s[1]);
                    let ga = slot(&mut grads, *a, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g, 1.0);
                    self.acc(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g, 1.0);
                    self.acc(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        let ga = slot(&mut grads, *a, g.len());
                        for j in 0..g.len() {
                            ga[j] += g[j] * bv[j];
                        }
                    }
                    if self.needs(*b) {
                        let gb = slot(&mut grads, *b, g.len());
                        for j in 0..g.len() {
                            gb[j] += g[j] * av[j];
                        }
                    }
                }
                Op::Scale(a, c) => self.acc(&mut grads, *a, &g, *c),
                Op::Offset(a) => self.acc(&mut grads, *a, &g, 1.0),
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        self.acc(&mut grads, x, &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    if self.needs(*a) {
                        let n = self.value(*a).len();
                        let ga = slot(&mut grads, *a, n);
                        for (j, x) in g.iter().enumerate() {
                            ga[start + j] += x;
                        }
                    }
                }
                Op::Stack(xs) => {
                    let w = g.len() / xs.len();
                    for (r, &x) in xs.iter().enumerate() {
                        self.acc(&mut grads, x, &g[r * w..(r + 1) * w], 1.0);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("value").data();
                    let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("value").data();
                    let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data();
                    // d/dx log sigmoid(x) = sigmoid(-x)
                    let d: Vec<f64> = g.iter().zip(x).map(|(g, &x)| g * sigmoid(-x)).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().expect("value").data();
                    let gy: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - gy)).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let bv = self.value(*b).data().to_vec();
                    let av = self.value(*a).data().to_vec();
                    self.acc(&mut grads, *a, &bv, s);
                    self.acc(&mut grads, *b, &av, s);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    if self.needs(*a) {
                        let ga = slot(&mut grads, *a, n);
                        ga.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::RowMax(a, arg) => {
                    if self.needs(*a) {
                        let s = self.value(*a).shape();
                        let (m, n) = (s[0], s[1]);
                        let ga = slot(&mut grads, *a, m * n);
                        for (r, &c) in arg.iter().enumerate() {
                            ga[r * n + c] += g[r];
                        }
                    }
                }
                Op::ReduceMax(a, i) => {
                    if self.needs(*a) {
                        let n = self.value(*a).len();
                        slot(&mut grads, *a, n)[*i] += g[0];
                    }
                }
                Op::MaxOver(xs, src) => {
                    for (k, &x) in xs.iter().enumerate() {
                        if !self.needs(x) {
                            continue;
                        }
                        let gx = slot(&mut grads, x, g.len());
                        for (j, &s) in src.iter().enumerate() {
                            if s == k {
                                gx[j] += g[j];
                            }
                        }
                    }
                }
                Op::MeanOver(xs) => {
                    let c = 1.0 / xs.len() as f64;
                    for &x in xs {
                        self.acc(&mut grads, x, &g, c);
                    }
                }
                Op::SumOver(xs) => {
                    for &x in xs {
                        self.acc(&mut grads, x, &g, 1.0);
                    }
                }
                Op::Embedding(table, row) => {
                    if self.needs(*table) {
                        let s = self.value(*table).shape();
                        let (rows, cols) = (s[0], s[1]);
                        let gt = slot(&mut grads, *table, rows * cols);
                        for (o, x) in gt[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                }
                Op::Dropout(a, mask) => {
                    let d: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::CrossEntropy(a, target, probs) => {
                    let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    d[*target] -= g[0];
                    self.acc(&mut grads, *a, &d, 1.0);
                }
                Op::Pick(a, i) => {
                    if self.needs(*a) {
                        let n = self.value(*a).len();
                        slot(&mut grads, *a, n)[*i] += g[0];
                    }
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64], c: f64) {
        if !self.needs(id) {
            return;
        }
        let dst = slot(grads, id, g.len());
        for (d, x) in dst.iter_mut().zip(g) {
            *d += c * x;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; n])
}

/// Index and value of the maximum; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Inverted-dropout mask: kept entries scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
