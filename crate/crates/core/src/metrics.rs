//! Evaluation metrics, partial autocorrelation and the context-length
//! ablation harness.

use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;

use crate::baselines::Predictor;
use crate::dataset::{Frame, SequencePair, SplitFrames, SplitTag};
use crate::forecaster::{ForecasterConfig, RadioLstm};
use crate::optim::{EpochRecord, History, TrainConfig};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("grids differ in length ({a} vs {b})")));
    }
    if a == 0 {
        return Err(Error::Empty("grid"));
    }
    Ok(())
}

fn sq_err<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> f64 {
    pred.iter().zip(gt).map(|(&p, &g)| (g.into() - p.into()).powi(2)).sum()
}

pub fn mse<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    Ok(sq_err(pred, gt) / gt.len() as f64)
}

/// Squared error normalized by the ground-truth energy.
pub fn nmse<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    let energy: f64 = gt.iter().map(|&g| g.into().powi(2)).sum();
    if energy == 0.0 {
        return Err(Error::InvalidInput("nmse undefined for an all-zero ground truth".into()));
    }
    Ok(sq_err(pred, gt) / energy)
}

pub fn rmse<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> Result<f64> {
    Ok(mse(pred, gt)?.sqrt())
}

/// Peak signal-to-noise ratio for unit dynamic range, capped for identical inputs.
pub fn psnr<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 { PSNR_CAP_DB } else { (-10.0 * m.log10()).min(PSNR_CAP_DB) })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" Gaussian filtering of a square grid.
fn filter_valid(img: &[f64], size: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out = size + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; size * out];
    for r in 0..size {
        for c in 0..out {
            rows[r * out + c] = (0..SSIM_WINDOW).map(|j| k[j] * img[r * size + c + j]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for r in 0..out {
        for c in 0..out {
            res[r * out + c] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(r + i) * out + c]).sum();
        }
    }
    res
}

/// Mean local SSIM with an 11x11 Gaussian window over valid positions.
pub fn ssim<T: Copy + Into<f64>>(pred: &[T], gt: &[T], size: usize) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    if pred.len() != size * size {
        return Err(Error::InvalidInput(format!("grid of {} values is not {size}x{size}", pred.len())));
    }
    if size < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("{size}x{size} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_kernel();
    let x: Vec<f64> = pred.iter().map(|&v| v.into()).collect();
    let y: Vec<f64> = gt.iter().map(|&v| v.into()).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&x, size, &k);
    let my = filter_valid(&y, size, &k);
    let mxx = filter_valid(&prod(&x, &x), size, &k);
    let myy = filter_valid(&prod(&y, &y), size, &k);
    let mxy = filter_valid(&prod(&x, &y), size, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Partial autocorrelations for lags `1..=max_lag` (Durbin-Levinson on the
/// biased sample autocovariances).
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag == 0 || n <= max_lag + 1 {
        return Err(Error::InvalidInput(format!("series of length {n} too short for {max_lag} lags")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let acov = |k: usize| (0..n - k).map(|t| (series[t] - mean) * (series[t + k] - mean)).sum::<f64>() / n as f64;
    let c0 = acov(0);
    if c0 <= 0.0 || series.iter().all(|&v| v == series[0]) {
        return Err(Error::ZeroVariance);
    }
    let r: Vec<f64> = (0..=max_lag).map(|k| acov(k) / c0).collect();
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = r[k] - (1..k).map(|j| phi[j - 1] * r[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * r[j]).sum::<f64>();
        // A perfectly predictable series leaves nothing to explain.
        let pkk = if den.abs() < 1e-12 { 0.0 } else { num / den };
        let mut next: Vec<f64> = (1..k).map(|j| phi[j - 1] - pkk * phi[k - j - 1]).collect();
        next.push(pkk);
        phi = next;
        out.push(pkk);
    }
    Ok(out)
}

/// PACF averaged over per-pixel series, taking every `stride`-th pixel of
/// every sequence. Constant pixels are skipped.
pub fn pacf_over_sequences(sequences: &[&[Frame]], max_lag: usize, stride: usize) -> Result<Vec<f64>> {
    let stride = stride.max(1);
    let mut sum = vec![0.0; max_lag];
    let mut count = 0usize;
    for frames in sequences {
        let Some(first) = frames.first() else { continue };
        for px in (0..first.len()).step_by(stride) {
            let series: Vec<f64> = frames.iter().map(|f| f[px] as f64).collect();
            match pacf(&series, max_lag) {
                Ok(p) => {
                    for (s, v) in sum.iter_mut().zip(p) {
                        *s += v;
                    }
                    count += 1;
                }
                Err(Error::ZeroVariance) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if count == 0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameMetrics {
    pub nmse: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

impl FrameMetrics {
    pub fn compute(pred: &Frame, gt: &Frame, size: usize) -> Result<Self> {
        Ok(FrameMetrics { nmse: nmse(pred, gt)?, rmse: rmse(pred, gt)?, ssim: ssim(pred, gt, size)?, psnr_db: psnr(pred, gt)? })
    }

    fn mean(items: impl Iterator<Item = FrameMetrics>) -> FrameMetrics {
        let mut acc = FrameMetrics::default();
        let mut n = 0usize;
        for m in items {
            acc.nmse += m.nmse;
            acc.rmse += m.rmse;
            acc.ssim += m.ssim;
            acc.psnr_db += m.psnr_db;
            n += 1;
        }
        let n = n.max(1) as f64;
        FrameMetrics { nmse: acc.nmse / n, rmse: acc.rmse / n, ssim: acc.ssim / n, psnr_db: acc.psnr_db / n }
    }
}

/// Aggregate and per-frame-index metrics of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub model: String,
    pub split: SplitTag,
    pub tc: usize,
    pub pairs: usize,
    pub aggregate: FrameMetrics,
    pub per_frame: Vec<FrameMetrics>,
}

pub const RESULTS_HEADER: &str = "model,split,tc,frame_index,nmse,rmse,ssim,psnr_db";

impl MetricsRecord {
    /// CSV rows: frame index 0 is the aggregate, 1..=Tp the per-frame means.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let rows = std::iter::once(&self.aggregate).chain(&self.per_frame);
        for (i, m) in rows.enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{},{},{}", self.model, self.split, self.tc, i, m.nmse, m.rmse, m.ssim, m.psnr_db);
        }
        out
    }
}

pub fn results_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in records {
        out.push_str(&r.csv_rows());
    }
    out
}

const EVAL_CHUNK: usize = 8;

/// Runs `model` on every pair and averages each metric per frame index and
/// overall. Pairs are processed in parallel; reduction order is fixed.
pub fn evaluate(model: &(dyn Predictor + Sync), pairs: &[SequencePair], split: SplitTag) -> Result<MetricsRecord> {
    let first = pairs.first().ok_or(Error::Empty("split"))?;
    let (tc, tp, size) = (first.context.len(), first.target.len(), first.size);
    if pairs.iter().any(|p| p.context.len() != tc || p.target.len() != tp || p.size != size) {
        return Err(Error::InvalidInput("pairs differ in Tc, Tp or grid size".into()));
    }
    let per_pair: Vec<Vec<FrameMetrics>> = pairs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<Vec<FrameMetrics>>> {
            let contexts: Vec<&[Frame]> = chunk.iter().map(|p| p.context.as_slice()).collect();
            let preds = model.predict_batch(&contexts, size, tp)?;
            chunk
                .iter()
                .zip(&preds)
                .map(|(pair, pred)| {
                    if pred.len() != tp {
                        return Err(Error::InvalidInput(format!("model produced {} frames, expected {tp}", pred.len())));
                    }
                    pred.iter().zip(&pair.target).map(|(p, g)| FrameMetrics::compute(p, g, size)).collect()
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let per_frame: Vec<FrameMetrics> = (0..tp).map(|j| FrameMetrics::mean(per_pair.iter().map(|m| m[j]))).collect();
    Ok(MetricsRecord {
        model: model.name().to_string(),
        split,
        tc,
        pairs: pairs.len(),
        aggregate: FrameMetrics::mean(per_frame.iter().copied()),
        per_frame,
    })
}

/// Stable digest of the target frames of a pair list.
pub fn target_digest(pairs: &[SequencePair]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in pairs {
        p.key.hash(&mut h);
        for f in &p.target {
            for v in f {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Result of one context length in the ablation.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub tc: usize,
    pub history: History,
    /// One record per test split.
    pub records: Vec<MetricsRecord>,
    pub target_digest: u64,
}

impl AblationRun {
    /// NMSE pooled over all test pairs.
    pub fn pooled_nmse(&self) -> f64 {
        let n: usize = self.records.iter().map(|r| r.pairs).sum();
        self.records.iter().map(|r| r.aggregate.nmse * r.pairs as f64).sum::<f64>() / n.max(1) as f64
    }
}

/// Trains one forecaster per context length on aligned pairs and evaluates
/// each on both test splits. All runs see the same targets.
pub fn ablate_context(
    data: &SplitFrames,
    tc_list: &[usize],
    tp: usize,
    model_cfg: &ForecasterConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<Vec<AblationRun>> {
    if tc_list.is_empty() {
        return Err(Error::Empty("context length list"));
    }
    let frames = data.sequences(SplitTag::Train)?[0].1.len();
    for &tc in tc_list {
        if tc == 0 || tc + tp > frames {
            return Err(Error::InvalidInput(format!("Tc={tc} with Tp={tp} does not fit {frames} frames")));
        }
    }
    let mut runs = Vec::with_capacity(tc_list.len());
    for &tc in tc_list {
        let train = data.pairs(SplitTag::Train, tc, tp)?;
        let val = data.pairs(SplitTag::Val, tc, tp)?;
        let mut model = RadioLstm::<f32>::new(*model_cfg, train_cfg.seed)?;
        let history = model.train(&train, &val, train_cfg, |e| on_epoch(tc, e))?;
        let mut records = Vec::new();
        let mut digest = DefaultHasher::new();
        for split in [SplitTag::Test1, SplitTag::Test2] {
            let pairs = data.pairs(split, tc, tp)?;
            digest.write_u64(target_digest(&pairs));
            records.push(evaluate(&model, &pairs, split)?);
        }
        runs.push(AblationRun { tc, history, records, target_digest: digest.finish() });
    }
    Ok(runs)
}

/// Line chart of one metric against frame index, one line per record.
pub fn per_frame_svg(records: &[MetricsRecord], metric: &str, pick: impl Fn(&FrameMetrics) -> f64) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let tp = records.iter().map(|r| r.per_frame.len()).max().unwrap_or(0);
    let values = records.iter().flat_map(|r| r.per_frame.iter().map(&pick));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let x = |i: usize| PAD + (W - 2.0 * PAD) * if tp > 1 { i as f64 / (tp - 1) as f64 } else { 0.5 };
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - PAD, W - PAD, H - PAD);
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted frame</text>", W / 2.0, H - 12.0);
    let _ = writeln!(s, "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{metric}</text>", H / 2.0, H / 2.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.4e}</text>", PAD - 4.0, PAD + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.4e}</text>", PAD - 4.0, H - PAD);
    for i in 0..tp {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", x(i), H - PAD + 14.0, i + 1);
    }
    for (n, r) in records.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let pts: Vec<String> = r.per_frame.iter().enumerate().map(|(i, m)| format!("{:.2},{:.2}", x(i), y(pick(m)))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{} {} Tc={}</text>", PAD + 6.0, PAD + 14.0 * n as f64, r.model, r.split, r.tc);
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of PACF values by lag.
pub fn pacf_svg(values: &[f64]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let mid = H / 2.0;
    let bw = (W - 2.0 * PAD) / values.len().max(1) as f64;
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{mid}\" x2=\"{}\" y2=\"{mid}\" stroke=\"black\"/>", W - PAD);
    for (i, v) in values.iter().enumerate() {
        let h = v.clamp(-1.0, 1.0) * (mid - PAD);
        let x = PAD + bw * i as f64 + bw * 0.15;
        let (top, height) = if h >= 0.0 { (mid - h, h) } else { (mid, -h) };
        let _ = writeln!(s, "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{height:.2}\" fill=\"#1f77b4\"/>", bw * 0.7);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", x + bw * 0.35, H - PAD + 14.0, i + 1);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">lag</text>", W / 2.0, H - 8.0);
    s.push_str("</svg>\n");
    s
}
