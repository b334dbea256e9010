//! RadioLSTM: two-level ConvLSTM encoder, autoregressive two-level decoder
//! with a skip connection from the first encoder level, and a 1x1 sigmoid
//! head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radiomotion_tensor::checkpoint::Checkpoint;
use radiomotion_tensor::{Graph, Real, Shape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, SequencePair};
use crate::nn::{convlstm_step, uniform_init, zero_state, CellSpec, ParamSet, State};
use crate::optim::{fit, EpochRecord, History, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    /// Hidden channels of encoder/decoder level 1.
    pub hidden1: usize,
    /// Hidden channels of encoder/decoder level 2.
    pub hidden2: usize,
    pub kernel: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig { hidden1: 16, hidden2: 32, kernel: 3 }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("invalid forecaster shape {self:?}")));
        }
        Ok(())
    }

    pub fn enc1(&self) -> CellSpec {
        CellSpec { in_channels: 1, hidden: self.hidden1, kernel: self.kernel }
    }

    pub fn enc2(&self) -> CellSpec {
        CellSpec { in_channels: self.hidden1, hidden: self.hidden2, kernel: self.kernel }
    }

    /// Decoder level 2 reads its own previous hidden state.
    pub fn dec2(&self) -> CellSpec {
        CellSpec { in_channels: self.hidden2, hidden: self.hidden2, kernel: self.kernel }
    }

    /// Decoder level 1 reads the upsampled level-2 output concatenated with
    /// the final level-1 encoder hidden state.
    pub fn dec1(&self) -> CellSpec {
        CellSpec { in_channels: 2 * self.hidden1, hidden: self.hidden1, kernel: self.kernel }
    }
}

// Parameter order in the set.
const ENC1: usize = 0;
const ENC2: usize = 2;
const DEC2: usize = 4;
const DEC1: usize = 6;
const UP_W: usize = 8;
const UP_B: usize = 9;
const HEAD_W: usize = 10;
const HEAD_B: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct RadioLstm<T> {
    pub config: ForecasterConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> RadioLstm<T> {
    /// Randomly initialized model.
    pub fn new(config: ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        for (name, spec) in [("enc1", config.enc1()), ("enc2", config.enc2()), ("dec2", config.dec2()), ("dec1", config.dec1())] {
            let (w, b) = spec.init(&mut rng);
            params.push(format!("{name}.w"), w);
            params.push(format!("{name}.b"), b);
        }
        let (h1, h2) = (config.hidden1, config.hidden2);
        params.push("up.w", uniform_init(Shape::new(h2, h1, 2, 2), h2 * 4, &mut rng));
        params.push("up.b", uniform_init(Shape::new(1, h1, 1, 1), h2 * 4, &mut rng));
        params.push("head.w", uniform_init(Shape::new(1, h1, 1, 1), h1, &mut rng));
        params.push("head.b", uniform_init(Shape::new(1, 1, 1, 1), h1, &mut rng));
        Ok(RadioLstm { config, params })
    }

    pub fn cast<U: Real>(&self) -> RadioLstm<U> {
        RadioLstm { config: self.config, params: self.params.cast() }
    }

    pub fn to_checkpoint(&self, extra: &[(&str, String)]) -> Checkpoint {
        let mut meta = vec![
            ("model".to_string(), "radiolstm".to_string()),
            ("hidden1".to_string(), self.config.hidden1.to_string()),
            ("hidden2".to_string(), self.config.hidden2.to_string()),
            ("kernel".to_string(), self.config.kernel.to_string()),
        ];
        meta.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        self.params.to_checkpoint(meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("model").map(String::as_str) != Some("radiolstm") {
            return Err(Error::InvalidInput("checkpoint is not a radiolstm model".into()));
        }
        let field = |k: &str| -> Result<usize> {
            ckpt.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint meta lacks {k}")))
        };
        let config = ForecasterConfig { hidden1: field("hidden1")?, hidden2: field("hidden2")?, kernel: field("kernel")? };
        let mut model = RadioLstm::new(config, 0)?;
        model.params.load_from(ckpt)?;
        Ok(model)
    }
}

/// Recurrent states after the context: level 1 at full, level 2 at half
/// resolution.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub level1: State,
    pub level2: State,
}

/// Runs both encoder levels over the context frames, each `(B, 1, H, W)`.
pub fn encode<T: Real>(g: &mut Graph<T>, cfg: &ForecasterConfig, vars: &[Var], context: &[Var]) -> Result<Encoded> {
    let first = *context.first().ok_or(Error::Empty("context"))?;
    let s = g.shape(first);
    if s.height() % 2 != 0 || s.width() % 2 != 0 {
        return Err(Error::InvalidInput(format!("frame {}x{} must have even sides", s.height(), s.width())));
    }
    let mut level1 = zero_state(g, Shape::new(s.batch(), cfg.hidden1, s.height(), s.width()));
    let mut level2 = zero_state(g, Shape::new(s.batch(), cfg.hidden2, s.height() / 2, s.width() / 2));
    for &x in context {
        level1 = convlstm_step(g, &cfg.enc1(), vars[ENC1], vars[ENC1 + 1], x, level1)?;
        let pooled = g.max_pool2(level1.h)?;
        level2 = convlstm_step(g, &cfg.enc2(), vars[ENC2], vars[ENC2 + 1], pooled, level2)?;
    }
    Ok(Encoded { level1, level2 })
}

/// Decoder recurrent state; `skip` is the final level-1 encoder hidden state.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub level1: State,
    pub level2: State,
    pub skip: Var,
}

impl From<Encoded> for DecoderState {
    fn from(e: Encoded) -> Self {
        DecoderState { level1: e.level1, level2: e.level2, skip: e.level1.h }
    }
}

/// One autoregressive decoder step, producing a frame in (0, 1).
pub fn decode_step<T: Real>(g: &mut Graph<T>, cfg: &ForecasterConfig, vars: &[Var], state: &mut DecoderState) -> Result<Var> {
    state.level2 = convlstm_step(g, &cfg.dec2(), vars[DEC2], vars[DEC2 + 1], state.level2.h, state.level2)?;
    let up = g.conv_transpose2(state.level2.h, vars[UP_W], Some(vars[UP_B]))?;
    let joined = g.concat(&[up, state.skip])?;
    state.level1 = convlstm_step(g, &cfg.dec1(), vars[DEC1], vars[DEC1 + 1], joined, state.level1)?;
    let logits = g.conv2d(state.level1.h, vars[HEAD_W], Some(vars[HEAD_B]), 0)?;
    Ok(g.sigmoid(logits))
}

/// `tp` predicted frames from the encoder states.
pub fn forecast<T: Real>(g: &mut Graph<T>, cfg: &ForecasterConfig, vars: &[Var], states: Encoded, tp: usize) -> Result<Vec<Var>> {
    let mut state = DecoderState::from(states);
    (0..tp).map(|_| decode_step(g, cfg, vars, &mut state)).collect()
}

/// Mean squared error over all predicted frames and pixels.
pub fn sequence_mse<T: Real>(g: &mut Graph<T>, pred: &[Var], target: &[Var]) -> Result<Var> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!("{} predicted vs {} target frames", pred.len(), target.len())));
    }
    let mut total: Option<Var> = None;
    for (&p, &t) in pred.iter().zip(target) {
        let l = g.mse(p, t)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(g.scale(total.expect("non-empty"), 1.0 / pred.len() as f64))
}

/// Mean over `Tp x N^2` of squared error between frame sequences.
pub fn mse_loss(pred: &[Frame], target: &[Frame]) -> Result<f64> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::InvalidInput("prediction and target shapes differ".into()));
    }
    let n: usize = pred.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Empty("frames"));
    }
    let total: f64 = pred.iter().zip(target).flat_map(|(a, b)| a.iter().zip(b)).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum();
    Ok(total / n as f64)
}

/// Stacks frame `t` of every sequence into a `(B, 1, N, N)` tensor.
pub fn stack_frames<T: Real>(frames: &[&Frame], size: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(frames.len() * size * size);
    for f in frames {
        if f.len() != size * size {
            return Err(Error::InvalidInput(format!("frame of {} values, expected {}", f.len(), size * size)));
        }
        data.extend(f.iter().map(|&v| T::from_f64(v as f64)));
    }
    Ok(Tensor::from_vec(Shape::new(frames.len(), 1, size, size), data)?)
}

/// Splits a `(B, 1, N, N)` tensor back into frames.
pub fn unstack_frames<T: Real>(t: &Tensor<T>) -> Vec<Frame> {
    let per = t.shape().plane() * t.shape().channels();
    t.data().chunks(per).map(|c| c.iter().map(|v| v.as_f64() as f32).collect()).collect()
}

fn check_batch(batch: &[&SequencePair]) -> Result<(usize, usize, usize)> {
    let first = batch.first().ok_or(Error::Empty("batch"))?;
    let dims = (first.size, first.context.len(), first.target.len());
    if batch.iter().any(|p| (p.size, p.context.len(), p.target.len()) != dims) {
        return Err(Error::InvalidInput("pairs in a batch differ in size or length".into()));
    }
    Ok(dims)
}

impl RadioLstm<f32> {
    /// Training loss of a batch of pairs on tape `g`.
    pub fn batch_loss(&self, g: &mut Graph<f32>, vars: &[Var], batch: &[&SequencePair]) -> Result<Var> {
        let (size, tc, tp) = check_batch(batch)?;
        let context = (0..tc)
            .map(|t| Ok(g.input(stack_frames(&batch.iter().map(|p| &p.context[t]).collect::<Vec<_>>(), size)?)))
            .collect::<Result<Vec<_>>>()?;
        let target = (0..tp)
            .map(|t| Ok(g.input(stack_frames(&batch.iter().map(|p| &p.target[t]).collect::<Vec<_>>(), size)?)))
            .collect::<Result<Vec<_>>>()?;
        let enc = encode(g, &self.config, vars, &context)?;
        let pred = forecast(g, &self.config, vars, enc, tp)?;
        sequence_mse(g, &pred, &target)
    }

    /// Predicts `tp` frames for each context in the batch.
    pub fn predict(&self, contexts: &[&[Frame]], size: usize, tp: usize) -> Result<Vec<Vec<Frame>>> {
        let tc = contexts.first().ok_or(Error::Empty("batch"))?.len();
        if tc == 0 {
            return Err(Error::Empty("context"));
        }
        if contexts.iter().any(|c| c.len() != tc) {
            return Err(Error::InvalidInput("contexts differ in length".into()));
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let inputs = (0..tc)
            .map(|t| Ok(g.input(stack_frames(&contexts.iter().map(|c| &c[t]).collect::<Vec<_>>(), size)?)))
            .collect::<Result<Vec<_>>>()?;
        let enc = encode(&mut g, &self.config, &vars, &inputs)?;
        let frames = forecast(&mut g, &self.config, &vars, enc, tp)?;
        let mut out = vec![Vec::with_capacity(tp); contexts.len()];
        for f in frames {
            for (b, frame) in unstack_frames(g.value(f)).into_iter().enumerate() {
                out[b].push(frame);
            }
        }
        Ok(out)
    }

    pub fn train(
        &mut self,
        train: &[SequencePair],
        val: &[SequencePair],
        cfg: &TrainConfig,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<History> {
        let shape = self.config;
        let probe = RadioLstm { config: shape, params: ParamSet::<f32>::default() };
        fit(&mut self.params, train, val, cfg, |g, vars, batch| probe.batch_loss(g, vars, batch), on_epoch)
    }
}
