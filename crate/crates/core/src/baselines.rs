//! Reference predictors: last-frame repeat and a memoryless next-frame
//! convolutional network rolled out autoregressively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radiomotion_tensor::checkpoint::Checkpoint;
use radiomotion_tensor::{Graph, Shape, Tensor, Var};

use crate::dataset::{Frame, SequenceKey};
use crate::forecaster::{stack_frames, unstack_frames, RadioLstm};
use crate::nn::{uniform_init, ParamSet};
use crate::optim::{fit, EpochRecord, History, TrainConfig};
use crate::{Error, Result};

/// Anything that maps context frames to `tp` future frames.
pub trait Predictor {
    fn name(&self) -> &str;
    /// Predictions for a batch of contexts of equal length.
    fn predict_batch(&self, contexts: &[&[Frame]], size: usize, tp: usize) -> Result<Vec<Vec<Frame>>>;
}

/// `tp` copies of the last context frame.
pub fn last_frame_repeat(context: &[Frame], tp: usize) -> Result<Vec<Frame>> {
    let last = context.last().ok_or(Error::Empty("context"))?;
    Ok(vec![last.clone(); tp])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LastFrameRepeat;

impl Predictor for LastFrameRepeat {
    fn name(&self) -> &str {
        "last_frame_repeat"
    }

    fn predict_batch(&self, contexts: &[&[Frame]], _size: usize, tp: usize) -> Result<Vec<Vec<Frame>>> {
        contexts.iter().map(|c| last_frame_repeat(c, tp)).collect()
    }
}

impl Predictor for RadioLstm<f32> {
    fn name(&self) -> &str {
        "radiolstm"
    }

    fn predict_batch(&self, contexts: &[&[Frame]], size: usize, tp: usize) -> Result<Vec<Vec<Frame>>> {
        self.predict(contexts, size, tp)
    }
}

/// Clamp used when taking the logit of an input frame.
pub const LOGIT_EPS: f64 = 1e-6;

fn logit(v: f64) -> f64 {
    let p = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

/// One consecutive-frame training example.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub size: usize,
    pub input: Frame,
    pub target: Frame,
}

/// Every `(t, t+1)` pair of each sequence.
pub fn consecutive_pairs(sequences: &[(SequenceKey, Vec<Frame>)], size: usize) -> Vec<FramePair> {
    sequences
        .iter()
        .flat_map(|(_, frames)| frames.windows(2).map(|w| FramePair { size, input: w[0].clone(), target: w[1].clone() }))
        .collect()
}

/// Three 3x3 convolutions (ReLU between) predicting a correction to the
/// input frame's logit: `y = sigmoid(logit(x) + net(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NextFramePredictor {
    pub channels: usize,
    pub params: ParamSet<f32>,
    trained: bool,
}

impl NextFramePredictor {
    /// Random hidden layers and a zero output layer, so training starts
    /// from the identity rollout. Not usable until trained.
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("next-frame predictor needs at least one channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        params.push("conv1.w", uniform_init(Shape::new(channels, 1, 3, 3), 9, &mut rng));
        params.push("conv1.b", uniform_init(Shape::new(1, channels, 1, 1), 9, &mut rng));
        params.push("conv2.w", uniform_init(Shape::new(channels, channels, 3, 3), 9 * channels, &mut rng));
        params.push("conv2.b", uniform_init(Shape::new(1, channels, 1, 1), 9 * channels, &mut rng));
        params.push("conv3.w", Tensor::zeros(Shape::new(1, channels, 3, 3)));
        params.push("conv3.b", Tensor::zeros(Shape::new(1, 1, 1, 1)));
        Ok(NextFramePredictor { channels, params, trained: false })
    }

    /// Degenerate configuration whose rollout repeats the seed frame.
    pub fn identity(channels: usize) -> Result<Self> {
        let mut m = Self::new(channels, 0)?;
        m.trained = true;
        Ok(m)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn forward(&self, g: &mut Graph<f32>, vars: &[Var], inputs: &[&Frame], size: usize) -> Result<Var> {
        let x = g.input(stack_frames(inputs, size)?);
        let base: Tensor<f32> = g.value(x).map(|v| logit(v as f64) as f32);
        let base = g.input(base);
        let h = g.conv2d(x, vars[0], Some(vars[1]), 1)?;
        let h = g.relu(h);
        let h = g.conv2d(h, vars[2], Some(vars[3]), 1)?;
        let h = g.relu(h);
        let delta = g.conv2d(h, vars[4], Some(vars[5]), 1)?;
        let z = g.add(base, delta)?;
        Ok(g.sigmoid(z))
    }

    pub fn batch_loss(&self, g: &mut Graph<f32>, vars: &[Var], batch: &[&FramePair]) -> Result<Var> {
        let size = batch.first().ok_or(Error::Empty("batch"))?.size;
        let inputs: Vec<&Frame> = batch.iter().map(|p| &p.input).collect();
        let targets: Vec<&Frame> = batch.iter().map(|p| &p.target).collect();
        let y = self.forward(g, vars, &inputs, size)?;
        let t = g.input(stack_frames(&targets, size)?);
        Ok(g.mse(y, t)?)
    }

    pub fn train(&mut self, train: &[FramePair], val: &[FramePair], cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<History> {
        let shape = NextFramePredictor { channels: self.channels, params: ParamSet::default(), trained: false };
        let history = fit(&mut self.params, train, val, cfg, |g, vars, batch| shape.batch_loss(g, vars, batch), on_epoch)?;
        self.trained = true;
        Ok(history)
    }

    /// One step for each frame of the batch.
    pub fn step(&self, frames: &[&Frame], size: usize) -> Result<Vec<Frame>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let y = self.forward(&mut g, &vars, frames, size)?;
        Ok(unstack_frames(g.value(y)))
    }

    /// Seeds on `seed` frames and rolls forward `tp` steps.
    pub fn rollout(&self, seeds: &[&Frame], size: usize, tp: usize) -> Result<Vec<Vec<Frame>>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let mut out: Vec<Vec<Frame>> = vec![Vec::with_capacity(tp); seeds.len()];
        let mut current: Vec<Frame> = seeds.iter().map(|f| (*f).clone()).collect();
        for _ in 0..tp {
            let next = self.step(&current.iter().collect::<Vec<_>>(), size)?;
            for (o, f) in out.iter_mut().zip(&next) {
                o.push(f.clone());
            }
            current = next;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, extra: &[(&str, String)]) -> Result<Checkpoint> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let mut meta = vec![("model".to_string(), "nextframe".to_string()), ("channels".to_string(), self.channels.to_string())];
        meta.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        Ok(self.params.to_checkpoint(meta))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("model").map(String::as_str) != Some("nextframe") {
            return Err(Error::InvalidInput("checkpoint is not a nextframe model".into()));
        }
        let channels = ckpt
            .meta
            .get("channels")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidInput("checkpoint meta lacks channels".into()))?;
        let mut m = Self::new(channels, 0)?;
        m.params.load_from(ckpt)?;
        m.trained = true;
        Ok(m)
    }
}

impl Predictor for NextFramePredictor {
    fn name(&self) -> &str {
        "nextframe"
    }

    fn predict_batch(&self, contexts: &[&[Frame]], size: usize, tp: usize) -> Result<Vec<Vec<Frame>>> {
        let seeds = contexts.iter().map(|c| c.last().ok_or(Error::Empty("context"))).collect::<Result<Vec<_>>>()?;
        self.rollout(&seeds, size, tp)
    }
}
