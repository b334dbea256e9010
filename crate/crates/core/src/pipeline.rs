//! End-to-end orchestration: generate, train, evaluate, ablate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use radiomotion_tensor::checkpoint::Checkpoint;

use crate::baselines::{consecutive_pairs, LastFrameRepeat, NextFramePredictor, Predictor};
use crate::dataset::{
    export_sequence, index_csv, parse_index_csv, split_dataset, ClipRange, SequenceKey, SequenceRecord, SplitConfig, SplitFrames,
    SplitTag, FRAMES_PER_SEQUENCE,
};
use crate::env::{export_environment, generate_environment, Cell, CellCoding, CellKind, EnvParams, EnvironmentGrid};
use crate::forecaster::{ForecasterConfig, RadioLstm};
use crate::metrics::{ablate_context, evaluate, pacf_over_sequences, pacf_svg, per_frame_svg, results_csv, AblationRun, MetricsRecord};
use crate::optim::{EpochRecord, History, TrainConfig};
use crate::raster::write_png;
use crate::solver::{rasterize_vehicles, Geometry, RadioMap, RadioParams, SceneRef};
use crate::trajectory::{seed_vehicles, simulate_trajectory, trajectory_csv, VehicleParams};
use crate::{Error, Result};

/// Environment variable bounding the generation worker pool.
pub const THREADS_ENV: &str = "RADIOMOTION_THREADS";
/// Layout retries before an environment seed is declared unusable.
const ENV_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_envs: usize,
    pub n_trajs: usize,
    pub n_tx: usize,
    pub frames: usize,
    pub held_out_env_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_envs: 20, n_trajs: 5, n_tx: 3, frames: FRAMES_PER_SEQUENCE, held_out_env_fraction: 0.2 }
    }
}

impl DatasetConfig {
    pub fn split_config(&self) -> SplitConfig {
        SplitConfig { n_envs: self.n_envs, n_trajs: self.n_trajs, n_tx: self.n_tx, held_out_env_fraction: self.held_out_env_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub count: usize,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        VehicleConfig { count: 12, speed: p.speed, length: p.length, width: p.width }
    }
}

impl VehicleConfig {
    pub fn params(&self) -> VehicleParams {
        VehicleParams { speed: self.speed, length: self.length, width: self.width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub tc: usize,
    pub tp: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig { tc: 10, tp: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NextFrameConfig {
    pub channels: usize,
}

impl Default for NextFrameConfig {
    fn default() -> Self {
        NextFrameConfig { channels: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Trained models to evaluate; last-frame repeat is always included.
    pub models: Vec<ModelKind>,
    pub pacf_max_lag: usize,
    /// Every n-th pixel contributes a PACF series.
    pub pacf_stride: usize,
    pub svg: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { models: vec![ModelKind::RadioLstm, ModelKind::NextFrame], pacf_max_lag: 10, pacf_stride: 7, svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub tc_list: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { tc_list: vec![2, 4, 6, 8, 10] }
    }
}

/// Everything one pipeline run depends on. A bare file yields the
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub dataset: DatasetConfig,
    pub environment: EnvParams,
    pub vehicles: VehicleConfig,
    pub radio: RadioParams,
    pub clip: ClipRange,
    pub horizon: HorizonConfig,
    pub model: ForecasterConfig,
    pub train: TrainConfig,
    pub nextframe: NextFrameConfig,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_root: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            environment: EnvParams::default(),
            vehicles: VehicleConfig::default(),
            radio: RadioParams::default(),
            clip: ClipRange::default(),
            horizon: HorizonConfig::default(),
            model: ForecasterConfig::default(),
            train: TrainConfig::default(),
            nextframe: NextFrameConfig::default(),
            evaluation: EvaluationConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_envs == 0 || d.n_trajs == 0 || d.n_tx == 0 || self.vehicles.count == 0 {
            return Err(Error::Config("environment, trajectory, transmitter and vehicle counts must be positive".into()));
        }
        if d.frames != FRAMES_PER_SEQUENCE {
            return Err(Error::Config(format!("sequences have {FRAMES_PER_SEQUENCE} frames, got {}", d.frames)));
        }
        if d.n_trajs < 3 {
            return Err(Error::Config("at least 3 trajectories per environment are needed for train/val/test1".into()));
        }
        if !(0.0..1.0).contains(&d.held_out_env_fraction) {
            return Err(Error::Config("held_out_env_fraction must lie in [0, 1)".into()));
        }
        if !(self.clip.min_db < self.clip.max_db) {
            return Err(Error::Config("clip min_db must be below max_db".into()));
        }
        let h = &self.horizon;
        if h.tc == 0 || h.tp == 0 || h.tc + h.tp > d.frames {
            return Err(Error::Config(format!("Tc={} and Tp={} must be positive with Tc + Tp <= {}", h.tc, h.tp, d.frames)));
        }
        if let Some(&tc) = self.ablation.tc_list.iter().find(|&&tc| tc == 0 || tc + h.tp > d.frames) {
            return Err(Error::Config(format!("ablation Tc={tc} does not fit {} frames with Tp={}", d.frames, h.tp)));
        }
        if self.vehicles.speed < 0.0 || !(self.vehicles.length > 0.0) || !(self.vehicles.width > 0.0) {
            return Err(Error::Config("vehicle speed must be non-negative and dimensions positive".into()));
        }
        if self.environment.size % 2 != 0 {
            return Err(Error::Config("grid size must be even for the two-level model".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.nextframe.channels == 0 {
            return Err(Error::Config("nextframe channels must be positive".into()));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_root.join("dataset")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_root.join("runs")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_root.join("results")
    }

    /// Training settings with the seed tied to the pipeline seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, &[Stream::Train as u64, self.train.seed]), ..self.train.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "radiolstm")]
    RadioLstm,
    #[serde(rename = "nextframe")]
    NextFrame,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RadioLstm => "radiolstm",
            ModelKind::NextFrame => "nextframe",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radiolstm" => Ok(ModelKind::RadioLstm),
            "nextframe" => Ok(ModelKind::NextFrame),
            other => Err(Error::Config(format!("unknown model {other:?} (expected radiolstm or nextframe)"))),
        }
    }
}

#[repr(u64)]
enum Stream {
    Environment = 1,
    Transmitters = 2,
    Vehicles = 3,
    Train = 4,
    Model = 5,
}

/// Independent seed for one stream of randomness (splitmix64 mixing).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn write_file(path: &Path, contents: &[u8], force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Exists(path.to_path_buf()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Procedural environment for `env_id`, retrying fresh layout seeds when a
/// draw is unusable.
pub fn environment_for(cfg: &PipelineConfig, env_id: usize) -> Result<EnvironmentGrid> {
    let params = EnvParams { size: cfg.environment.size, ..cfg.environment.clone() };
    let mut last = None;
    for attempt in 0..ENV_ATTEMPTS {
        let seed = derive_seed(cfg.seed, &[Stream::Environment as u64, env_id as u64, attempt]);
        match generate_environment(seed, &params) {
            Ok(mut env) => {
                if env.cells().any(|c| env.kind(c) == CellKind::Ground) {
                    env.env_id = env_id;
                    return Ok(env);
                }
                last = Some(Error::Generation("layout has no ground cell for a transmitter".into()));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Generation(format!("env {env_id}: {}", last.map_or_else(String::new, |e| e.to_string()))))
}

/// Distinct transmitter cells on open ground, shared by every trajectory
/// of the environment. Vehicles never leave the road, so these cells stay
/// free in every frame.
pub fn place_transmitters(cfg: &PipelineConfig, env: &EnvironmentGrid) -> Result<Vec<Cell>> {
    let mut ground: Vec<Cell> = env.cells().filter(|&c| env.kind(c) == CellKind::Ground).collect();
    if ground.len() < cfg.dataset.n_tx {
        return Err(Error::Generation(format!(
            "env {} has {} ground cells for {} transmitters",
            env.env_id,
            ground.len(),
            cfg.dataset.n_tx
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[Stream::Transmitters as u64, env.env_id as u64]));
    ground.shuffle(&mut rng);
    ground.truncate(cfg.dataset.n_tx);
    Ok(ground)
}

/// Radio-map sequences of every transmitter for one (env, traj) rollout.
pub fn simulate_scenario(
    cfg: &PipelineConfig,
    env: &EnvironmentGrid,
    txs: &[Cell],
    traj_id: usize,
) -> Result<(Vec<SequenceRecord>, String, Option<String>)> {
    let split = cfg.dataset.split_config();
    let seed = derive_seed(cfg.seed, &[Stream::Vehicles as u64, env.env_id as u64, traj_id as u64]);
    let seeded = seed_vehicles(env, cfg.vehicles.count, seed, &cfg.vehicles.params());
    let mut traj = simulate_trajectory(env, &seeded.vehicles, cfg.dataset.frames);
    traj.traj_id = traj_id;
    let mut frames: Vec<Vec<RadioMap>> = vec![Vec::with_capacity(cfg.dataset.frames); txs.len()];
    for (f, vehicles) in traj.frames.iter().enumerate() {
        let geometry = Geometry::new(env, &rasterize_vehicles(vehicles, env)).map_err(|e| Error::Scenario {
            env: env.env_id,
            traj: traj_id,
            tx: 0,
            source: Box::new(e),
        })?;
        for (tx_id, &tx) in txs.iter().enumerate() {
            let values_db = geometry.radio_map(tx, &cfg.radio).map_err(|e| Error::Scenario {
                env: env.env_id,
                traj: traj_id,
                tx: tx_id,
                source: Box::new(e),
            })?;
            let scene_ref = SceneRef { env_id: env.env_id, traj_id, tx_id, frame_index: f };
            frames[tx_id].push(RadioMap { size: env.size, values_db, scene_ref });
        }
    }
    let records = frames
        .into_iter()
        .enumerate()
        .map(|(tx_id, frames)| SequenceRecord { key: SequenceKey::new(env.env_id, traj_id, tx_id), frames, split_tag: split.tag(env.env_id, traj_id) })
        .collect();
    let warning = seeded.warning.map(|w| format!("env {} traj {traj_id}: {w}", env.env_id));
    Ok((records, trajectory_csv(&traj), warning))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub sequences: usize,
    pub files: usize,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    seed_rule: &'static str,
    transmitters: Vec<TxEntry>,
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct TxEntry {
    env_id: usize,
    cells: Vec<[usize; 2]>,
}

/// Builds the full dataset tree under `<output_root>/dataset`: raw and png
/// frames, environment rasters, trajectories, `index.csv` and
/// `manifest.toml`.
pub fn generate(cfg: &PipelineConfig, force: bool) -> Result<GenerateReport> {
    cfg.validate()?;
    let start = Instant::now();
    let root = cfg.dataset_dir();
    let index_path = root.join("index.csv");
    if !force && index_path.exists() {
        return Err(Error::Exists(index_path));
    }
    let pool = thread_pool()?;
    let envs: Vec<(EnvironmentGrid, Vec<Cell>)> = pool.install(|| {
        (0..cfg.dataset.n_envs)
            .into_par_iter()
            .map(|e| {
                let env = environment_for(cfg, e)?;
                let txs = place_transmitters(cfg, &env)?;
                Ok((env, txs))
            })
            .collect::<Result<_>>()
    })?;
    for (env, _) in &envs {
        let path = root.join("environments").join(format!("env_{:03}.png", env.env_id));
        if !force && path.exists() {
            return Err(Error::Exists(path));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_png(&path, &export_environment(env, &CellCoding::default()))?;
    }
    let units: Vec<(usize, usize)> = (0..cfg.dataset.n_envs).flat_map(|e| (0..cfg.dataset.n_trajs).map(move |t| (e, t))).collect();
    let outcomes: Vec<(usize, Option<String>)> = pool.install(|| {
        units
            .par_iter()
            .map(|&(e, t)| {
                let (env, txs) = &envs[e];
                let (records, csv, warning) = simulate_scenario(cfg, env, txs, t)?;
                let mut files = 0;
                for r in &records {
                    files += export_sequence(r, &root, &cfg.clip, force)
                        .map_err(|err| Error::Scenario { env: e, traj: t, tx: r.key.tx_id, source: Box::new(err) })?
                        .len();
                }
                let traj_path = root.join("trajectories").join(format!("env_{e:03}")).join(format!("traj_{t:02}.csv"));
                write_file(&traj_path, csv.as_bytes(), force)?;
                Ok((files, warning))
            })
            .collect::<Result<_>>()
    })?;

    let split = cfg.dataset.split_config();
    let assignment = split_dataset(&split.keys(), &split)?;
    write_file(&index_path, index_csv(&assignment).as_bytes(), force)?;
    let manifest = Manifest {
        format: "radiomotion-dataset-1",
        seed_rule: "splitmix64(seed, stream, ids...)",
        transmitters: envs.iter().map(|(env, txs)| TxEntry { env_id: env.env_id, cells: txs.iter().map(|c| [c.row, c.col]).collect() }).collect(),
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&root.join("manifest.toml"), text.as_bytes(), force)?;
    Ok(GenerateReport {
        sequences: assignment.len(),
        files: outcomes.iter().map(|o| o.0).sum(),
        warnings: outcomes.into_iter().filter_map(|o| o.1).collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loads the generated dataset through its index.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<SplitFrames> {
    let root = cfg.dataset_dir();
    let index_path = root.join("index.csv");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index = parse_index_csv(&text)?;
    let data = SplitFrames::load(&root, &index, &cfg.clip)?;
    for tag in SplitTag::ALL {
        if tag != SplitTag::Test2 || cfg.dataset.held_out_env_fraction > 0.0 {
            data.sequences(tag)?;
        }
    }
    Ok(data)
}

pub fn checkpoint_dir(cfg: &PipelineConfig, model: ModelKind) -> PathBuf {
    cfg.runs_dir().join(model.as_str()).join("checkpoint")
}

pub fn history_path(cfg: &PipelineConfig, model: ModelKind) -> PathBuf {
    cfg.runs_dir().join(model.as_str()).join("history.csv")
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ModelKind,
    pub history: History,
    pub seconds: f64,
}

/// Trains one model on the train split with early stopping on val, then
/// writes its best checkpoint and loss history.
pub fn train(cfg: &PipelineConfig, data: &SplitFrames, model: ModelKind, force: bool, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let ckpt_dir = checkpoint_dir(cfg, model);
    let hist = history_path(cfg, model);
    if !force {
        for p in [&ckpt_dir, &hist] {
            if p.exists() {
                return Err(Error::Exists(p.clone()));
            }
        }
    }
    let tcfg = cfg.train_config();
    let init_seed = derive_seed(cfg.seed, &[Stream::Model as u64, model as u64]);
    let meta = [("grid_size", data.size.to_string()), ("tc", cfg.horizon.tc.to_string()), ("tp", cfg.horizon.tp.to_string())];
    let (history, ckpt) = match model {
        ModelKind::RadioLstm => {
            let train = data.pairs(SplitTag::Train, cfg.horizon.tc, cfg.horizon.tp)?;
            let val = data.pairs(SplitTag::Val, cfg.horizon.tc, cfg.horizon.tp)?;
            let mut m = RadioLstm::<f32>::new(cfg.model, init_seed)?;
            let h = m.train(&train, &val, &tcfg, on_epoch)?;
            (h, m.to_checkpoint(&meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>()))
        }
        ModelKind::NextFrame => {
            let train = consecutive_pairs(data.sequences(SplitTag::Train)?, data.size);
            let val = consecutive_pairs(data.sequences(SplitTag::Val)?, data.size);
            let mut m = NextFramePredictor::new(cfg.nextframe.channels, init_seed)?;
            let h = m.train(&train, &val, &tcfg, on_epoch)?;
            (h, m.to_checkpoint(&meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>())?)
        }
    };
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    ckpt.save(&ckpt_dir)?;
    write_file(&hist, history.to_csv().as_bytes(), true)?;
    Ok(TrainReport { model, history, seconds: start.elapsed().as_secs_f64() })
}

/// Loads a trained model, refusing checkpoints made for another grid size.
pub fn load_model(cfg: &PipelineConfig, model: ModelKind, grid_size: usize) -> Result<Box<dyn Predictor + Sync>> {
    let dir = checkpoint_dir(cfg, model);
    if !dir.exists() {
        return Err(Error::InvalidInput(format!("no {} checkpoint at {}", model.as_str(), dir.display())));
    }
    let ckpt = Checkpoint::load(&dir)?;
    let recorded = ckpt.meta.get("grid_size").and_then(|v| v.parse::<usize>().ok());
    if recorded != Some(grid_size) {
        return Err(Error::InvalidInput(format!(
            "{} checkpoint was trained on grid size {}, dataset is {grid_size}",
            model.as_str(),
            recorded.map_or("unknown".to_string(), |s| s.to_string())
        )));
    }
    Ok(match model {
        ModelKind::RadioLstm => Box::new(RadioLstm::<f32>::from_checkpoint(&ckpt)?),
        ModelKind::NextFrame => Box::new(NextFramePredictor::from_checkpoint(&ckpt)?),
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub records: Vec<MetricsRecord>,
    pub pacf: Vec<f64>,
    /// Wall-clock seconds per model over all test pairs.
    pub timing: Vec<(String, f64)>,
}

impl EvaluateReport {
    pub fn record(&self, model: &str, split: SplitTag) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.model == model && r.split == split)
    }
}

fn test_splits(data: &SplitFrames) -> Vec<SplitTag> {
    [SplitTag::Test1, SplitTag::Test2].into_iter().filter(|t| data.sequences(*t).is_ok()).collect()
}

/// Evaluates last-frame repeat and the configured trained models on both
/// test splits, and the PACF of the training sequences. Writes
/// `results.csv`, `pacf.csv`, `timing.csv` and optional SVG plots.
pub fn evaluate_models(cfg: &PipelineConfig, data: &SplitFrames, force: bool) -> Result<EvaluateReport> {
    cfg.validate()?;
    let out = cfg.results_dir();
    let results_path = out.join("results.csv");
    if !force && results_path.exists() {
        return Err(Error::Exists(results_path));
    }
    let mut models: Vec<Box<dyn Predictor + Sync>> = vec![Box::new(LastFrameRepeat)];
    for &kind in &cfg.evaluation.models {
        models.push(load_model(cfg, kind, data.size)?);
    }
    let (tc, tp) = (cfg.horizon.tc, cfg.horizon.tp);
    let splits = test_splits(data);
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for model in &models {
        let started = Instant::now();
        for &split in &splits {
            records.push(evaluate(model.as_ref(), &data.pairs(split, tc, tp)?, split)?);
        }
        timing.push((model.name().to_string(), started.elapsed().as_secs_f64()));
    }
    let train: Vec<&[_]> = data.sequences(SplitTag::Train)?.iter().map(|(_, f)| f.as_slice()).collect();
    let pacf = pacf_over_sequences(&train, cfg.evaluation.pacf_max_lag, cfg.evaluation.pacf_stride)?;

    write_file(&results_path, results_csv(&records).as_bytes(), true)?;
    let mut pacf_csv = String::from("lag,pacf\n");
    for (k, v) in pacf.iter().enumerate() {
        let _ = writeln!(pacf_csv, "{},{v}", k + 1);
    }
    write_file(&out.join("pacf.csv"), pacf_csv.as_bytes(), true)?;
    let mut timing_csv = String::from("model,seconds,pairs\n");
    let n_pairs: usize = splits.iter().map(|&s| data.sequences(s).map_or(0, |v| v.len())).sum();
    for (m, s) in &timing {
        let _ = writeln!(timing_csv, "{m},{s:.6},{n_pairs}");
    }
    write_file(&out.join("timing.csv"), timing_csv.as_bytes(), true)?;
    if cfg.evaluation.svg {
        for &split in &splits {
            let group: Vec<MetricsRecord> = records.iter().filter(|r| r.split == split).cloned().collect();
            write_file(&out.join(format!("nmse_{split}.svg")), per_frame_svg(&group, "NMSE", |m| m.nmse).as_bytes(), true)?;
        }
        write_file(&out.join("pacf.svg"), pacf_svg(&pacf).as_bytes(), true)?;
    }
    Ok(EvaluateReport { records, pacf, timing })
}

/// Context-length ablation; writes `ablation.csv`, `ablation_targets.csv`
/// and per-Tc histories.
pub fn ablate(cfg: &PipelineConfig, data: &SplitFrames, force: bool, on_epoch: impl FnMut(usize, &EpochRecord)) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    let out = cfg.results_dir();
    let path = out.join("ablation.csv");
    if !force && path.exists() {
        return Err(Error::Exists(path));
    }
    let runs = ablate_context(data, &cfg.ablation.tc_list, cfg.horizon.tp, &cfg.model, &cfg.train_config(), on_epoch)?;
    let records: Vec<MetricsRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_file(&path, results_csv(&records).as_bytes(), true)?;
    let mut targets = String::from("tc,target_digest\n");
    for r in &runs {
        let _ = writeln!(targets, "{},{:016x}", r.tc, r.target_digest);
        let hist = cfg.runs_dir().join("ablation").join(format!("tc_{:02}_history.csv", r.tc));
        write_file(&hist, r.history.to_csv().as_bytes(), true)?;
    }
    write_file(&out.join("ablation_targets.csv"), targets.as_bytes(), true)?;
    if cfg.evaluation.svg {
        for split in test_splits(data) {
            let group: Vec<MetricsRecord> = records.iter().filter(|r| r.split == split).cloned().collect();
            write_file(&out.join(format!("ablation_nmse_{split}.svg")), per_frame_svg(&group, "NMSE", |m| m.nmse).as_bytes(), true)?;
        }
    }
    Ok(runs)
}
