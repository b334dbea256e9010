//! Post-processing of radio maps into the raw/png dataset tree, splits and
//! context/target pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use radiomotion_tensor::rmm::{self, Grid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{write_png, GrayImage};
use crate::solver::RadioMap;
use crate::{Error, Result};

pub const FRAMES_PER_SEQUENCE: usize = 15;
pub const CLIP_MIN_DB: f64 = -135.0;
pub const CLIP_MAX_DB: f64 = -39.5;

/// Maps continuous coordinates in (0, n] to a grid by ceiling; later points
/// overwrite earlier ones. `grid[i][j]` with `i = ceil(x) - 1`, `j = ceil(y) - 1`.
pub fn rasterize_points(points: &[(f64, f64, f64)], n: usize) -> Result<Vec<Vec<f64>>> {
    let index = |v: f64| -> Result<usize> {
        if !(v > 0.0 && v <= n as f64) {
            return Err(Error::Coordinate { value: v, size: n });
        }
        Ok(v.ceil() as usize - 1)
    };
    let mut grid = vec![vec![0.0; n]; n];
    for &(x, y, value) in points {
        grid[index(x)?][index(y)?] = value;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipRange {
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        ClipRange { min_db: CLIP_MIN_DB, max_db: CLIP_MAX_DB }
    }
}

impl ClipRange {
    pub fn normalize(&self, p_db: f64) -> Result<f64> {
        if p_db.is_nan() {
            return Err(Error::InvalidInput("NaN received power".into()));
        }
        Ok((p_db.clamp(self.min_db, self.max_db) - self.min_db) / (self.max_db - self.min_db))
    }
}

/// Clips to [-135, -39.5] dBm and maps linearly onto [0, 1].
pub fn normalize_db(p_db: f64) -> Result<f64> {
    ClipRange::default().normalize(p_db)
}

/// `floor(norm * 255)`, with 1.0 mapping to 255.
pub fn quantize_8bit(norm: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&norm) {
        return Err(Error::InvalidInput(format!("normalized value {norm} outside [0, 1]")));
    }
    Ok(((norm * 255.0).floor() as u8).min(255))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test1,
    Test2,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Train, SplitTag::Val, SplitTag::Test1, SplitTag::Test2];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test1 => "test1",
            SplitTag::Test2 => "test2",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split tag {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceKey {
    pub env_id: usize,
    pub traj_id: usize,
    pub tx_id: usize,
}

impl SequenceKey {
    pub fn new(env_id: usize, traj_id: usize, tx_id: usize) -> Self {
        SequenceKey { env_id, traj_id, tx_id }
    }

    /// `env_XXX/traj_XX/tx_XX`
    pub fn rel_dir(&self) -> PathBuf {
        PathBuf::from(format!("env_{:03}", self.env_id))
            .join(format!("traj_{:02}", self.traj_id))
            .join(format!("tx_{:02}", self.tx_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub key: SequenceKey,
    pub frames: Vec<RadioMap>,
    pub split_tag: SplitTag,
}

impl SequenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != FRAMES_PER_SEQUENCE {
            return Err(Error::InvalidInput(format!("sequence has {} frames, expected {FRAMES_PER_SEQUENCE}", self.frames.len())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let r = f.scene_ref;
            if (r.env_id, r.traj_id, r.tx_id, r.frame_index) != (self.key.env_id, self.key.traj_id, self.key.tx_id, i) {
                return Err(Error::InvalidInput(format!("frame {i} carries scene reference {r:?}")));
            }
        }
        Ok(())
    }
}

pub fn raw_path(root: &Path, key: SequenceKey, frame: usize) -> PathBuf {
    root.join("raw").join(key.rel_dir()).join(format!("frame_{frame:02}.rmm"))
}

pub fn png_path(root: &Path, key: SequenceKey, frame: usize) -> PathBuf {
    root.join("png").join(key.rel_dir()).join(format!("frame_{frame:02}.png"))
}

/// Raw grid as stored: received power rounded to f32.
pub fn raw_grid(map: &RadioMap) -> Grid {
    Grid::new(map.size, map.size, map.values_db.iter().map(|&v| v as f32).collect())
}

/// Quantized image of a stored raw grid.
pub fn png_image(grid: &Grid, clip: &ClipRange) -> Result<GrayImage> {
    let pixels = grid.data.iter().map(|&v| quantize_8bit(clip.normalize(v as f64)?)).collect::<Result<Vec<u8>>>()?;
    Ok(GrayImage::new(grid.cols, grid.rows, pixels))
}

/// Writes the 15 raw and 15 png frames of one sequence. Existing files are
/// an error unless `force`.
pub fn export_sequence(record: &SequenceRecord, root: &Path, clip: &ClipRange, force: bool) -> Result<Vec<PathBuf>> {
    record.validate()?;
    let key = record.key;
    if !force {
        for f in 0..FRAMES_PER_SEQUENCE {
            for p in [raw_path(root, key, f), png_path(root, key, f)] {
                if p.exists() {
                    return Err(Error::Exists(p));
                }
            }
        }
    }
    for dir in [root.join("raw").join(key.rel_dir()), root.join("png").join(key.rel_dir())] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut written = Vec::with_capacity(2 * FRAMES_PER_SEQUENCE);
    for (f, map) in record.frames.iter().enumerate() {
        let grid = raw_grid(map);
        let raw = raw_path(root, key, f);
        rmm::write(&raw, &grid)?;
        let png = png_path(root, key, f);
        write_png(&png, &png_image(&grid, clip)?)?;
        written.push(raw);
        written.push(png);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_envs: usize,
    pub n_trajs: usize,
    pub n_tx: usize,
    pub held_out_env_fraction: f64,
}

impl SplitConfig {
    /// Environments from this id on are held out entirely.
    pub fn first_held_out_env(&self) -> usize {
        let held = (self.held_out_env_fraction * self.n_envs as f64 - 1e-9).ceil().max(0.0) as usize;
        self.n_envs - held.min(self.n_envs)
    }

    pub fn tag(&self, env_id: usize, traj_id: usize) -> SplitTag {
        if env_id >= self.first_held_out_env() {
            SplitTag::Test2
        } else if traj_id + 2 < self.n_trajs {
            SplitTag::Train
        } else if traj_id + 2 == self.n_trajs {
            SplitTag::Val
        } else {
            SplitTag::Test1
        }
    }

    /// Every (env, traj, tx) key in id order.
    pub fn keys(&self) -> Vec<SequenceKey> {
        let mut keys = Vec::with_capacity(self.n_envs * self.n_trajs * self.n_tx);
        for e in 0..self.n_envs {
            for t in 0..self.n_trajs {
                for x in 0..self.n_tx {
                    keys.push(SequenceKey::new(e, t, x));
                }
            }
        }
        keys
    }
}

/// Assigns a split tag to every sequence. The index must hold every
/// (env, traj, tx) combination exactly once.
pub fn split_dataset(index: &[SequenceKey], config: &SplitConfig) -> Result<Vec<(SequenceKey, SplitTag)>> {
    if config.n_trajs < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 trajectories per environment, got {}", config.n_trajs)));
    }
    if !(0.0..=1.0).contains(&config.held_out_env_fraction) {
        return Err(Error::InvalidInput(format!("held-out fraction {} outside [0, 1]", config.held_out_env_fraction)));
    }
    let mut sorted = index.to_vec();
    sorted.sort();
    if sorted != config.keys() {
        return Err(Error::InvalidInput(format!(
            "index has {} sequences but {}x{}x{} combinations are required",
            index.len(),
            config.n_envs,
            config.n_trajs,
            config.n_tx
        )));
    }
    Ok(index.iter().map(|&k| (k, config.tag(k.env_id, k.traj_id))).collect())
}

pub fn index_csv(assignment: &[(SequenceKey, SplitTag)]) -> String {
    let mut out = String::from("env_id,traj_id,tx_id,split_tag\n");
    for (k, tag) in assignment {
        out.push_str(&format!("{},{},{},{}\n", k.env_id, k.traj_id, k.tx_id, tag));
    }
    out
}

pub fn parse_index_csv(text: &str) -> Result<Vec<(SequenceKey, SplitTag)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("env_id,traj_id,tx_id,split_tag") {
        return Err(Error::InvalidInput("index CSV header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::InvalidInput(format!("bad index row {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            Ok((SequenceKey::new(num(f[0])?, num(f[1])?, num(f[2])?), f[3].parse()?))
        })
        .collect()
}

/// A normalized frame, row-major, values in [0, 1].
pub type Frame = Vec<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub size: usize,
    pub context: Vec<Frame>,
    pub target: Vec<Frame>,
    pub key: SequenceKey,
    /// Frame index of the first context frame.
    pub start: usize,
}

/// Aligned pair: the target is always the last `tp` frames and the context
/// the `tc` frames before it.
pub fn make_pairs(frames: &[Frame], size: usize, key: SequenceKey, tc: usize, tp: usize) -> Result<SequencePair> {
    if tc == 0 || tc + tp > frames.len() {
        return Err(Error::InvalidInput(format!("Tc={tc}, Tp={tp} does not fit a {}-frame sequence", frames.len())));
    }
    let start = frames.len() - tc - tp;
    Ok(SequencePair {
        size,
        context: frames[start..start + tc].to_vec(),
        target: frames[start + tc..].to_vec(),
        key,
        start,
    })
}

/// Reads a stored sequence back as normalized frames.
pub fn load_sequence(root: &Path, key: SequenceKey, clip: &ClipRange) -> Result<(usize, Vec<Frame>)> {
    let mut size = 0;
    let mut frames = Vec::with_capacity(FRAMES_PER_SEQUENCE);
    for f in 0..FRAMES_PER_SEQUENCE {
        let grid = rmm::read(&raw_path(root, key, f))?;
        if grid.rows != grid.cols || (f > 0 && grid.rows != size) {
            return Err(Error::InvalidInput(format!("frame {f} of {key:?} is {}x{}", grid.rows, grid.cols)));
        }
        size = grid.rows;
        frames.push(grid.data.iter().map(|&v| clip.normalize(v as f64).map(|x| x as f32)).collect::<Result<_>>()?);
    }
    Ok((size, frames))
}

/// Normalized frames of every sequence, grouped by split in index order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitFrames {
    pub size: usize,
    pub splits: BTreeMap<SplitTag, Vec<(SequenceKey, Vec<Frame>)>>,
}

impl SplitFrames {
    /// Loads every indexed sequence; all must share one grid size.
    pub fn load(root: &Path, index: &[(SequenceKey, SplitTag)], clip: &ClipRange) -> Result<Self> {
        let loaded: Vec<(usize, Vec<Frame>)> = index.par_iter().map(|(k, _)| load_sequence(root, *k, clip)).collect::<Result<_>>()?;
        let mut out = SplitFrames::default();
        for ((key, tag), (size, frames)) in index.iter().zip(loaded) {
            if out.size != 0 && size != out.size {
                return Err(Error::InvalidInput(format!("{key:?} is {size}x{size}, expected {}", out.size)));
            }
            out.size = size;
            out.splits.entry(*tag).or_default().push((*key, frames));
        }
        Ok(out)
    }

    pub fn sequences(&self, tag: SplitTag) -> Result<&[(SequenceKey, Vec<Frame>)]> {
        match self.splits.get(&tag) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(Error::InvalidInput(format!("split {tag} is empty or missing"))),
        }
    }

    /// One aligned pair per sequence of the split.
    pub fn pairs(&self, tag: SplitTag, tc: usize, tp: usize) -> Result<Vec<SequencePair>> {
        self.sequences(tag)?.iter().map(|(k, frames)| make_pairs(frames, self.size, *k, tc, tp)).collect()
    }
}
