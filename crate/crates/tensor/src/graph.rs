use crate::kernels::{self, check_conv, check_conv_transpose2};
use crate::{Real, Result, Shape, Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, pad: usize },
    ConvTranspose2 { x: Var, w: Var, b: Option<Var> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Leaf that collects gradients.
    requires_grad: bool,
    /// Some ancestor (or the node itself) requires grad.
    tracks: bool,
    grad: Option<Tensor<T>>,
}

/// Operation tape. Build one per forward pass; parameters enter as leaves
/// through [`Graph::param`].
///
/// Gradients accumulate: calling [`Graph::backward`] twice on the same loss
/// without [`Graph::zero_grad`] doubles every leaf gradient exactly.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: &[Var]) -> Var {
        let tracks = parents.iter().any(|p| self.nodes[p.0].tracks);
        self.nodes.push(Node { value, op, requires_grad: false, tracks, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is collected for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, tracks: true, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a `param` leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        check_conv(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), pad)?;
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), pad)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, pad }, &parents))
    }

    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        check_conv_transpose2(self.shape(x), self.shape(w), b.map(|b| self.shape(b)))?;
        let out = kernels::conv_transpose2_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::ConvTranspose2 { x, w, b }, &parents))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2_forward(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape(op, format!("{:?} vs {:?}", sa.0, sb.0)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.batch() != s0.batch() || s.height() != s0.height() || s.width() != s0.width() {
                return Err(TensorError::shape("concat", format!("{:?} vs {:?}", s.0, s0.0)));
            }
            channels += s.channels();
        }
        let out_shape = s0.with_channels(channels);
        let plane = s0.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.batch() {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape().channels() * plane;
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.channels() || len == 0 {
            return Err(TensorError::shape(
                "slice_channels",
                format!("{start}..{} of {} channels", start + len, s.channels()),
            ));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.batch() * len * plane);
        let src = self.value(x).data();
        for n in 0..s.batch() {
            let base = (n * s.channels() + start) * plane;
            data.extend_from_slice(&src[base..base + len * plane]);
        }
        let out = Tensor::from_vec(s.with_channels(len), data)?;
        Ok(self.push(out, Op::SliceChannels { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / T::from_f64(t.numel() as f64));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = T::from_f64(p.numel() as f64);
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let out = Tensor::scalar(total / n);
        Ok(self.push(out, Op::Mse { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar node. Leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(TensorError::NotScalar { numel });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracks {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            if self.nodes[i].requires_grad {
                grads[i] = Some(g);
            }
        }
        for (i, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = g else { continue };
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => node.grad = Some(Tensor::from_vec(node.value.shape(), g)?),
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.tracks {
            return None;
        }
        let n = node.value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: impl Iterator<Item = T>) {
        if let Some(s) = self.slot(grads, v) {
            s.iter_mut().zip(contrib).for_each(|(a, b)| *a += b);
        }
    }

    fn take_slot(&self, grads: &mut [Option<Vec<T>>], v: Option<Var>) -> Option<Vec<T>> {
        let v = v?;
        self.slot(grads, v)?;
        grads[v.0].take()
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, pad } => {
                let mut dx = self.take_slot(grads, Some(*x));
                let mut dw = self.take_slot(grads, Some(*w));
                let mut db = self.take_slot(grads, *b);
                kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    *pad,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, Some(*x), dx);
                restore(grads, Some(*w), dw);
                restore(grads, *b, db);
            }
            Op::ConvTranspose2 { x, w, b } => {
                let mut dx = self.take_slot(grads, Some(*x));
                let mut dw = self.take_slot(grads, Some(*w));
                let mut db = self.take_slot(grads, *b);
                kernels::conv_transpose2_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, Some(*x), dx);
                restore(grads, Some(*w), dw);
                restore(grads, *b, db);
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(s) = self.slot(grads, *x) {
                    for (o, &src) in argmax.iter().enumerate() {
                        s[src] += g[o];
                    }
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, g.iter().copied());
                self.add_into(grads, *b, g.iter().copied());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.add_into(grads, *a, g.iter().zip(vb).map(|(&g, &y)| g * y));
                self.add_into(grads, *b, g.iter().zip(va).map(|(&g, &x)| g * x));
            }
            Op::Scale(x, f) => {
                let f = T::from_f64(*f);
                self.add_into(grads, *x, g.iter().map(|&g| g * f));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.add_into(grads, *x, g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)));
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.add_into(grads, *x, g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.add_into(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }),
                );
            }
            Op::Concat(parts) => {
                let s = node.value.shape();
                let plane = s.plane();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).channels();
                    if let Some(slot) = self.slot(grads, p) {
                        let per = pc * plane;
                        for n in 0..s.batch() {
                            let src = &g[(n * s.channels() + offset) * plane..][..per];
                            slot[n * per..(n + 1) * per].iter_mut().zip(src).for_each(|(a, b)| *a += *b);
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceChannels { x, start } => {
                let out_c = node.value.shape().channels();
                let xs = self.shape(*x);
                let plane = xs.plane();
                if let Some(slot) = self.slot(grads, *x) {
                    for n in 0..xs.batch() {
                        let dst = &mut slot[(n * xs.channels() + start) * plane..][..out_c * plane];
                        let src = &g[n * out_c * plane..(n + 1) * out_c * plane];
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.add_into(grads, *x, std::iter::repeat(g[0]).take(n));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let v = g[0] / T::from_f64(n as f64);
                self.add_into(grads, *x, std::iter::repeat(v).take(n));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let k = g[0] * T::from_f64(2.0 / p.len() as f64);
                self.add_into(grads, *pred, p.iter().zip(t).map(|(&a, &b)| k * (a - b)));
                self.add_into(grads, *target, p.iter().zip(t).map(|(&a, &b)| k * (b - a)));
            }
        }
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], v: Option<Var>, g: Option<Vec<T>>) {
    if let (Some(v), Some(g)) = (v, g) {
        grads[v.0] = Some(g);
    }
}
