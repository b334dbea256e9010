//! Named parameter sets and the ConvLSTM cell shared by the models.

use rand::Rng;
use radiomotion_tensor::checkpoint::Checkpoint;
use radiomotion_tensor::{Graph, Real, Shape, Tensor, Var};

use crate::{Error, Result};

/// Gate order inside fused ConvLSTM weights.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Ordered, named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { entries: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.entries.push((name.into(), t));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every tensor on the tape, trainable or constant.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    pub fn to_checkpoint(&self, meta: impl IntoIterator<Item = (String, String)>) -> Checkpoint {
        Checkpoint { meta: meta.into_iter().collect(), tensors: self.cast::<f32>().entries }
    }

    /// Loads tensors by name, requiring the same names and shapes as `self`.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (name, t) in &mut self.entries {
            let src = ckpt.get(name).ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks tensor {name:?}")))?;
            if src.shape() != t.shape() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor {name:?} has shape {:?}, model expects {:?}",
                    src.shape().0,
                    t.shape().0
                )));
            }
            *t = src.cast();
        }
        if ckpt.tensors.len() != self.entries.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds {} tensors, model has {}",
                ckpt.tensors.len(),
                self.entries.len()
            )));
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(1/fan_in)`.
pub fn uniform_init<T: Real>(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel()).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}

/// Shape of a ConvLSTM cell: fused weight `(4*hidden, in+hidden, k, k)`
/// and bias `(1, 4*hidden, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub in_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
}

impl CellSpec {
    pub fn weight_shape(&self) -> Shape {
        Shape::new(4 * self.hidden, self.in_channels + self.hidden, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, 4 * self.hidden, 1, 1)
    }

    /// Uniform weights and biases, forget-gate bias +1.
    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> (Tensor<T>, Tensor<T>) {
        let fan_in = (self.in_channels + self.hidden) * self.kernel * self.kernel;
        let w = uniform_init(self.weight_shape(), fan_in, rng);
        let mut b: Tensor<T> = uniform_init(self.bias_shape(), fan_in, rng);
        for c in self.hidden..2 * self.hidden {
            b.data_mut()[c] = T::one();
        }
        (w, b)
    }

    /// Input-to-state kernel `W_x<gate>` of shape `(hidden, in, k, k)`.
    pub fn w_x<T: Real>(&self, w: &Tensor<T>, gate: usize) -> Tensor<T> {
        self.kernel_part(w, gate, 0, self.in_channels)
    }

    /// State-to-state kernel `W_h<gate>` of shape `(hidden, hidden, k, k)`.
    pub fn w_h<T: Real>(&self, w: &Tensor<T>, gate: usize) -> Tensor<T> {
        self.kernel_part(w, gate, self.in_channels, self.hidden)
    }

    pub fn b<T: Real>(&self, b: &Tensor<T>, gate: usize) -> Tensor<T> {
        let data = b.data()[gate * self.hidden..(gate + 1) * self.hidden].to_vec();
        Tensor::from_vec(Shape::new(1, self.hidden, 1, 1), data).expect("sized")
    }

    fn kernel_part<T: Real>(&self, w: &Tensor<T>, gate: usize, from: usize, count: usize) -> Tensor<T> {
        let [_, cin, k, _] = w.shape().0;
        let kk = k * k;
        let mut data = Vec::with_capacity(self.hidden * count * kk);
        for o in gate * self.hidden..(gate + 1) * self.hidden {
            let row = &w.data()[o * cin * kk..(o + 1) * cin * kk];
            data.extend_from_slice(&row[from * kk..(from + count) * kk]);
        }
        Tensor::from_vec(Shape::new(self.hidden, count, k, k), data).expect("sized")
    }

    /// Builds fused tensors from the eight separate kernels and four biases.
    pub fn fuse<T: Real>(&self, wx: &[Tensor<T>; 4], wh: &[Tensor<T>; 4], b: &[Tensor<T>; 4]) -> Result<(Tensor<T>, Tensor<T>)> {
        let k = self.kernel;
        let kk = k * k;
        let cin = self.in_channels + self.hidden;
        let mut w = vec![T::zero(); 4 * self.hidden * cin * kk];
        let mut bias = Vec::with_capacity(4 * self.hidden);
        for g in 0..4 {
            if wx[g].shape() != Shape::new(self.hidden, self.in_channels, k, k)
                || wh[g].shape() != Shape::new(self.hidden, self.hidden, k, k)
                || b[g].numel() != self.hidden
            {
                return Err(Error::InvalidInput(format!("gate {} kernels do not match {self:?}", GATES[g])));
            }
            for o in 0..self.hidden {
                let dst = &mut w[(g * self.hidden + o) * cin * kk..(g * self.hidden + o + 1) * cin * kk];
                dst[..self.in_channels * kk].copy_from_slice(&wx[g].data()[o * self.in_channels * kk..(o + 1) * self.in_channels * kk]);
                dst[self.in_channels * kk..].copy_from_slice(&wh[g].data()[o * self.hidden * kk..(o + 1) * self.hidden * kk]);
            }
            bias.extend_from_slice(b[g].data());
        }
        Ok((Tensor::from_vec(self.weight_shape(), w)?, Tensor::from_vec(self.bias_shape(), bias)?))
    }
}

/// Hidden and cell state of one ConvLSTM level.
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub h: Var,
    pub c: Var,
}

/// Zero state for a batch of `(batch, hidden, h, w)`.
pub fn zero_state<T: Real>(g: &mut Graph<T>, shape: Shape) -> State {
    State { h: g.input(Tensor::zeros(shape)), c: g.input(Tensor::zeros(shape)) }
}

/// Gate activations `[i, f, o, g]` of a fused ConvLSTM update.
pub fn convlstm_gates<T: Real>(g: &mut Graph<T>, spec: &CellSpec, w: Var, b: Var, x: Var, state: State) -> Result<[Var; 4]> {
    let xs = g.shape(x);
    let hs = g.shape(state.h);
    if xs.channels() != spec.in_channels || hs.channels() != spec.hidden || xs.height() != hs.height() || xs.width() != hs.width() {
        return Err(Error::InvalidInput(format!("convlstm input {:?} / state {:?} do not match {spec:?}", xs.0, hs.0)));
    }
    let xh = g.concat(&[x, state.h])?;
    let z = g.conv2d(xh, w, Some(b), spec.kernel / 2)?;
    let n = spec.hidden;
    let zi = g.slice_channels(z, 0, n)?;
    let zf = g.slice_channels(z, n, n)?;
    let zo = g.slice_channels(z, 2 * n, n)?;
    let zg = g.slice_channels(z, 3 * n, n)?;
    Ok([g.sigmoid(zi), g.sigmoid(zf), g.sigmoid(zo), g.tanh(zg)])
}

/// One ConvLSTM update with a fused gate convolution:
/// `[i f o g] = W * [x, H] + b`, `C' = f.C + i.g`, `H' = o.tanh(C')`.
pub fn convlstm_step<T: Real>(g: &mut Graph<T>, spec: &CellSpec, w: Var, b: Var, x: Var, state: State) -> Result<State> {
    let [i, f, o, cand] = convlstm_gates(g, spec, w, b, x, state)?;
    combine(g, i, f, o, cand, state.c)
}

/// The same update computed as four independent gate passes with the
/// separate `W_x*`, `W_h*` kernels.
pub fn convlstm_step_unfused<T: Real>(
    g: &mut Graph<T>,
    spec: &CellSpec,
    w: &Tensor<T>,
    b: &Tensor<T>,
    x: Var,
    state: State,
) -> Result<State> {
    let pad = spec.kernel / 2;
    let mut pre = Vec::with_capacity(4);
    for gate in 0..4 {
        let wx = g.input(spec.w_x(w, gate));
        let wh = g.input(spec.w_h(w, gate));
        let bg = g.input(spec.b(b, gate));
        let a = g.conv2d(x, wx, Some(bg), pad)?;
        let c = g.conv2d(state.h, wh, None, pad)?;
        pre.push(g.add(a, c)?);
    }
    let (i, f, o, cand) = (g.sigmoid(pre[0]), g.sigmoid(pre[1]), g.sigmoid(pre[2]), g.tanh(pre[3]));
    combine(g, i, f, o, cand, state.c)
}

fn combine<T: Real>(g: &mut Graph<T>, i: Var, f: Var, o: Var, cand: Var, c: Var) -> Result<State> {
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok(State { h: h_next, c: c_next })
}
