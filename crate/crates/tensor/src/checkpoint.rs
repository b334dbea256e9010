//! Weight checkpoints: a directory holding one `RMM1` file per tensor and a
//! plain-text `manifest.txt`.
//!
//! Manifest lines are whitespace separated:
//!
//! ```text
//! meta <key> <value>
//! tensor <name> <file> <d0>x<d1>x<d2>x<d3>
//! ```
//!
//! A tensor of shape `(d0, d1, d2, d3)` is stored as a `d0 x (d1*d2*d3)` grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::rmm::{self, Grid};
use crate::{Result, Shape, Tensor, TensorError};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| TensorError::io(dir, e))?;
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains(char::is_whitespace) || v.is_empty() {
                return Err(TensorError::Checkpoint(format!("meta entry {k:?}={v:?} must be non-empty and whitespace free")));
            }
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            if name.contains(char::is_whitespace) {
                return Err(TensorError::Checkpoint(format!("tensor name {name:?} contains whitespace")));
            }
            let file = format!("{name}.rmm");
            let [d0, d1, d2, d3] = t.shape().0;
            manifest.push_str(&format!("tensor {name} {file} {d0}x{d1}x{d2}x{d3}\n"));
            rmm::write(&dir.join(&file), &Grid::new(d0, d1 * d2 * d3, t.data().to_vec()))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| TensorError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| TensorError::io(&path, e))?;
        let mut ck = Checkpoint::default();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || TensorError::Checkpoint(format!("{}:{}: malformed line {line:?}", path.display(), lineno + 1));
            match fields.as_slice() {
                [] => {}
                ["meta", k, v] => {
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                ["tensor", name, file, dims] => {
                    let d: Vec<usize> = dims.split('x').map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    let [d0, d1, d2, d3] = d[..] else { return Err(bad()) };
                    let grid = rmm::read(&dir.join(file))?;
                    if grid.rows != d0 || grid.cols != d1 * d2 * d3 {
                        return Err(TensorError::Checkpoint(format!("{file}: grid {}x{} does not match {dims}", grid.rows, grid.cols)));
                    }
                    ck.tensors.push((name.to_string(), Tensor::from_vec(Shape([d0, d1, d2, d3]), grid.data)?));
                }
                _ => return Err(bad()),
            }
        }
        Ok(ck)
    }
}
