//! Named parameter tensors, their gradients, and the on-disk checkpoint container.
//!
//! A checkpoint is a directory holding `manifest.json` (model kind, training
//! step, architecture config, tensor table) plus one raw little-endian `f32`
//! file per named tensor under `tensors/`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Mat<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor and returns its id.
    pub fn add(&mut self, name: impl Into<String>, m: Mat<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)·gain`.
    pub fn add_normal<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
    ) -> usize {
        let m = Mat::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::c(z * std)
        });
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name, Mat::zeros(rows, cols))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> usize {
        self.add(name, Mat::filled(rows, cols, T::c(v)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: usize) -> &Mat<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Mat<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
        }
    }

    /// Copies every tensor of `src` into the same-named tensor here. Both sets
    /// must hold exactly the same names and shapes.
    pub fn assign_from(&mut self, src: &ParamSet<T>) -> Result<()> {
        if src.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                src.len(),
                self.len()
            )));
        }
        for (name, m) in src.iter() {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            let dst = self.tensor_mut(id);
            if dst.shape() != m.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} is {:?}, model expects {:?}",
                    m.shape(),
                    dst.shape()
                )));
            }
            dst.data.copy_from_slice(&m.data);
        }
        Ok(())
    }

    /// Writes a checkpoint directory. `config` is stored verbatim in the manifest.
    pub fn save(&self, dir: &Path, kind: &str, step: u64, config: &serde_json::Value) -> Result<()> {
        let tdir = dir.join("tensors");
        fs::create_dir_all(&tdir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (name, m) in self.iter() {
            let file = format!("tensors/{name}.f32");
            let mut bytes = Vec::with_capacity(m.len() * 4);
            for v in &m.data {
                bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
            fs::write(dir.join(&file), bytes)?;
            entries.push(TensorEntry {
                name: name.to_string(),
                rows: m.rows,
                cols: m.cols,
                file,
            });
        }
        let manifest = CheckpointManifest {
            kind: kind.to_string(),
            step,
            config: config.clone(),
            tensors: entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads a checkpoint directory written by [`ParamSet::save`].
    pub fn load(dir: &Path) -> Result<(ParamSet<T>, CheckpointManifest)> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut set = ParamSet::new();
        for e in &manifest.tensors {
            let bytes = fs::read(dir.join(&e.file))?;
            if bytes.len() != e.rows * e.cols * 4 {
                return Err(Error::Format(format!(
                    "tensor {} expects {} bytes, found {}",
                    e.name,
                    e.rows * e.cols * 4,
                    bytes.len()
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            set.add(e.name.clone(), Mat::from_vec(e.rows, e.cols, data));
        }
        Ok((set, manifest))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub kind: String,
    pub step: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub tensors: Vec<Mat<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(p: &ParamSet<T>) -> Self {
        Grads {
            tensors: p.tensors.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.tensors {
            a.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|m| m.data.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::all_finite)
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(T::c(max_norm / norm));
        }
        norm
    }
}
