use crate::error::{AutodiffError, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Zero-padding scheme of a 1-D convolution. Both keep the sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvPadding {
    /// `(k−1)·d` zeros on the left; output frame `l` sees inputs `≤ l` only.
    Causal,
    /// `(k−1)/2·d` zeros on each side; requires an odd kernel.
    Same,
}

enum Op<T> {
    Constant,
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Broadcast(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Operation record of one forward computation.
///
/// Nodes are appended in execution order, which is a topological order, so
/// backward simply walks the node list from the end.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    grad_enabled: bool,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A graph that records no gradient information; `backward` is rejected.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant, false)
    }

    /// Input whose gradient is kept after backward (see [`Graph::grad`]).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Binds a parameter into the graph. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let t = params.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, t.requires_grad());
        self.params.push((id, v));
        v
    }

    /// Copy of `x`'s value that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Constant, false)
    }

    pub fn value(&self, x: Var) -> &[T] {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        &self.nodes[x.0].shape
    }

    pub fn tensor(&self, x: Var) -> Tensor<T> {
        let n = &self.nodes[x.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape matches value")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, x: Var) -> T {
        self.nodes[x.0].value[0]
    }

    /// Gradient left on a leaf or parameter node by the last backward pass.
    pub fn grad(&self, x: Var) -> Option<&[T]> {
        self.nodes[x.0].grad.as_deref()
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::shapes(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x).iter().map(|x| *x * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, v, Op::Scale(x, factor), rg)
    }

    /// 2-D matrix product `[m×k]·[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let v = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], v, Op::MatMul(a, b), rg))
    }

    /// Expands size-1 axes of `x` to `shape`. Ranks must agree.
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        let ok = sx.len() == shape.len() && sx.iter().zip(shape).all(|(a, b)| a == b || *a == 1);
        if !ok {
            return Err(AutodiffError::shapes("broadcast", sx, shape));
        }
        let map = kernels::broadcast_index(sx, shape);
        let src = self.value(x);
        let v = map.iter().map(|&i| src[i]).collect();
        let rg = self.needs(&[x]);
        Ok(self.push(shape.to_vec(), v, Op::Broadcast(x), rg))
    }

    /// Mean over one axis, keeping it with size 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(AutodiffError::invalid(
                "mean_axis",
                format!("axis {axis} out of range for shape {sx:?}"),
            ));
        }
        let (outer, n, inner) = kernels::split_axis(&sx, axis);
        if n == 0 {
            return Err(AutodiffError::invalid("mean_axis", "empty axis"));
        }
        let src = self.value(x);
        let inv = T::one() / T::lit(n as f64);
        let mut v = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let row = &src[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (d, s) in v[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += *s;
                }
            }
        }
        v.iter_mut().for_each(|d| *d *= inv);
        let mut shape = sx;
        shape[axis] = 1;
        let rg = self.needs(&[x]);
        Ok(self.push(shape, v, Op::MeanAxis { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Vec::new(), vec![s], Op::SumAll(x), rg)
    }

    /// Mean of all entries as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(AutodiffError::invalid("mean", "empty tensor"));
        }
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Vec::new(), vec![s / T::lit(n as f64)], Op::MeanAll(x), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::invalid("concat", "axis out of range"));
        }
        let mut total = 0;
        for x in xs {
            let s = self.shape(*x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(a, (p, q))| a == axis || p == q);
            if !compatible {
                return Err(AutodiffError::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut v = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for x in xs {
                let n = self.shape(*x)[axis];
                v.extend_from_slice(&self.value(*x)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.needs(xs);
        Ok(self.push(shape, v, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start > end || end > sx[axis] {
            return Err(AutodiffError::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} invalid for shape {sx:?}"),
            ));
        }
        let (outer, n, inner) = kernels::split_axis(&sx, axis);
        let src = self.value(x);
        let mut v = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            v.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = sx;
        shape[axis] = end - start;
        let rg = self.needs(&[x]);
        Ok(self.push(shape, v, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if sx.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(AutodiffError::shapes("reshape", sx, shape));
        }
        let v = self.value(x).to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x).iter().map(|v| f(*v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, v, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// 1-D convolution of `x: [L × c_in]` with `w: [c_out × c_in × k]` and optional `b: [c_out]`.
    ///
    /// Tap `t` of a causal kernel reads frame `l − (k−1−t)·d`, so the last tap is
    /// the current frame. A `Same` kernel is centred on the current frame.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize, padding: ConvPadding) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(AutodiffError::shapes("conv1d", sx, sw));
        }
        if sw[2] == 0 || dilation == 0 {
            return Err(AutodiffError::invalid(
                "conv1d",
                "kernel size and dilation must be at least 1",
            ));
        }
        if padding == ConvPadding::Same && sw[2] % 2 == 0 {
            return Err(AutodiffError::invalid(
                "conv1d",
                format!("same padding needs an odd kernel, got {}", sw[2]),
            ));
        }
        let geom = ConvGeom {
            len: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            kernel: sw[2],
            dilation,
            causal: padding == ConvPadding::Causal,
        };
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(AutodiffError::shapes("conv1d bias", self.shape(b), &[geom.c_out]));
            }
        }
        let v = kernels::conv1d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.needs(&inputs);
        Ok(self.push(vec![geom.len, geom.c_out], v, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Normalises each row of `x: [L × F]` over its `F` entries, then applies `gain` and `bias` (`[F]`).
    ///
    /// Uses the biased (divide-by-F) variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(AutodiffError::invalid(
                "layer_norm",
                format!("expected 2-D input, got {sx:?}"),
            ));
        }
        let f = sx[1];
        for p in [gain, bias] {
            if self.shape(p) != [f] {
                return Err(AutodiffError::shapes("layer_norm", &sx, self.shape(p)));
            }
        }
        let src = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let inv_f = T::one() / T::lit(f as f64);
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(sx[0]);
        for (l, row) in src.chunks_exact(f).enumerate() {
            let mean = row.iter().copied().sum::<T>() * inv_f;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_f;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for k in 0..f {
                let h = (row[k] - mean) * is;
                xhat[l * f + k] = h;
                out[l * f + k] = gv[k] * h + bv[k];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            sx,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, consuming the graph.
    ///
    /// Afterwards every leaf and parameter node that requires a gradient holds
    /// `∂loss/∂node` (zeros when it does not influence the loss).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        if !self.grad_enabled {
            return Err(AutodiffError::GradDisabled);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Constant | Op::Leaf | Op::Param => {
                    grads[i] = Some(gout);
                }
                _ => self.backward_node(i, &gout, &mut grads),
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf | Op::Param) {
                node.grad = Some(grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]));
            }
        }
        Ok(())
    }

    /// Gradients of every bound parameter after [`Graph::backward`].
    pub fn param_grads(&self) -> Gradients<T> {
        let entries = self
            .params
            .iter()
            .filter_map(|(id, v)| self.nodes[v.0].grad.clone().map(|g| (*id, g)))
            .collect();
        Gradients { entries }
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| g.iter_mut().zip(gout).for_each(|(g, d)| *g -= *d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * vb[k];
                    }
                });
                self.acc(grads, *b, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * va[k];
                    }
                });
            }
            Op::Scale(x, f) => {
                self.acc(grads, *x, |g| g.iter_mut().zip(gout).for_each(|(g, d)| *g += *d * *f));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |g| kernels::matmul_grad_lhs(gout, vb, g, m, k, n));
                self.acc(grads, *b, |g| kernels::matmul_grad_rhs(va, gout, g, m, k, n));
            }
            Op::Broadcast(x) => {
                let map = kernels::broadcast_index(self.shape(*x), &node.shape);
                self.acc(grads, *x, |g| {
                    for (o, &src) in map.iter().enumerate() {
                        g[src] += gout[o];
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = kernels::split_axis(self.shape(*x), *axis);
                let inv = T::one() / T::lit(n as f64);
                self.acc(grads, *x, |g| {
                    for o in 0..outer {
                        let src = &gout[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            let dst = &mut g[(o * n + a) * inner..(o * n + a + 1) * inner];
                            kernels::axpy(inv, src, dst);
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                self.acc(grads, *x, |g| g.iter_mut().for_each(|v| *v += gout[0]));
            }
            Op::MeanAll(x) => {
                let d = gout[0] / T::lit(self.value(*x).len() as f64);
                self.acc(grads, *x, |g| g.iter_mut().for_each(|v| *v += d));
            }
            Op::Concat { xs, axis } => {
                let total = node.shape[*axis];
                let (outer, _, inner) = kernels::split_axis(&node.shape, *axis);
                let mut offset = 0;
                for x in xs {
                    let n = self.shape(*x)[*axis];
                    self.acc(grads, *x, |g| {
                        for o in 0..outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            add_into(&mut g[o * n * inner..(o + 1) * n * inner], src);
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = kernels::split_axis(self.shape(*x), *axis);
                let m = node.shape[*axis];
                self.acc(grads, *x, |g| {
                    for o in 0..outer {
                        let dst = &mut g[(o * n + start) * inner..(o * n + start + m) * inner];
                        add_into(dst, &gout[o * m * inner..(o + 1) * m * inner]);
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |g| add_into(g, gout)),
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |g| {
                    for k in 0..g.len() {
                        if vx[k] > T::zero() {
                            g[k] += gout[k];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                self.acc(grads, *x, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * y[k] * (T::one() - y[k]);
                    }
                });
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let two = T::lit(2.0);
                self.acc(grads, *x, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * two * vx[k];
                    }
                });
            }
            Op::Conv1d { x, w, b, geom } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let mut dx = self.take_if_needed(*x, grads);
                let mut dw = self.take_if_needed(*w, grads);
                let mut db = b.and_then(|b| self.take_if_needed(b, grads));
                kernels::conv1d_backward(
                    vx,
                    vw,
                    gout,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, *x, dx);
                restore(grads, *w, dw);
                if let Some(b) = b {
                    restore(grads, *b, db);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let f = node.shape[1];
                let gv = self.value(*gain);
                self.acc(grads, *bias, |g| {
                    for row in gout.chunks_exact(f) {
                        add_into(g, row);
                    }
                });
                self.acc(grads, *gain, |g| {
                    for (row, h) in gout.chunks_exact(f).zip(xhat.chunks_exact(f)) {
                        for k in 0..f {
                            g[k] += row[k] * h[k];
                        }
                    }
                });
                let inv_f = T::one() / T::lit(f as f64);
                self.acc(grads, *x, |g| {
                    let mut dh = vec![T::zero(); f];
                    for l in 0..inv_std.len() {
                        let row = &gout[l * f..(l + 1) * f];
                        let h = &xhat[l * f..(l + 1) * f];
                        for k in 0..f {
                            dh[k] = row[k] * gv[k];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_f;
                        let mean_dh_h = kernels::dot(&dh, h) * inv_f;
                        let dst = &mut g[l * f..(l + 1) * f];
                        for k in 0..f {
                            dst[k] += inv_std[l] * (dh[k] - mean_dh - h[k] * mean_dh_h);
                        }
                    }
                });
            }
        }
    }

    /// Runs `f` on the gradient buffer of `x` if `x` needs one.
    fn acc(&self, grads: &mut [Option<Vec<T>>], x: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let len = self.nodes[x.0].value.len();
        let g = grads[x.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(g);
    }

    fn take_if_needed(&self, x: Var, grads: &mut [Option<Vec<T>>]) -> Option<Vec<T>> {
        if !self.nodes[x.0].requires_grad {
            return None;
        }
        let len = self.nodes[x.0].value.len();
        Some(grads[x.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], x: Var, g: Option<Vec<T>>) {
    if g.is_some() {
        grads[x.0] = g;
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
