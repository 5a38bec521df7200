use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScalarField;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GridBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a])) {
            return Err(Error::InvalidInput(format!("grid bounds {min:?}..{max:?} are empty")));
        }
        Ok(GridBounds { min, max })
    }

    /// `[−h, h]³`.
    pub fn cube(h: f64) -> Self {
        GridBounds {
            min: [-h; 3],
            max: [h; 3],
        }
    }
}

/// Signed distances sampled on the corners of a regular lattice.
///
/// Sample `(i, j, k)` sits at `min + (max − min)·(i, j, k)/(res − 1)` and is
/// stored at index `(k·ny + j)·nx + i` (x fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    pub resolution: [usize; 3],
    pub bounds: GridBounds,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    resolution: [usize; 3],
    min: [f64; 3],
    max: [f64; 3],
    dtype: String,
    order: String,
}

impl SdfGrid {
    pub fn new(resolution: [usize; 3], bounds: GridBounds, values: Vec<f64>) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::InvalidInput(format!("grid resolution {resolution:?} must be ≥ 2 per axis")));
        }
        let n: usize = resolution.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!("grid expects {n} values, got {}", values.len())));
        }
        Ok(SdfGrid {
            resolution,
            bounds,
            values,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn spacing(&self) -> Vec3 {
        Vec3::from_fn(|a, _| (self.bounds.max[a] - self.bounds.min[a]) / (self.resolution[a] - 1) as f64)
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_point(&self.bounds, &self.resolution, i, j, k)
    }

    /// Length of one cell's space diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    /// JSON header line, `\n`, then little-endian `f32` values in storage order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = GridHeader {
            resolution: self.resolution,
            min: self.bounds.min,
            max: self.bounds.max,
            dtype: "f32le".into(),
            order: "x-fastest".into(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("grid header line missing".into()))?;
        let header: GridHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.dtype != "f32le" {
            return Err(Error::Format(format!("unsupported grid dtype {}", header.dtype)));
        }
        let payload = &bytes[nl + 1..];
        let n: usize = header.resolution.iter().product();
        if payload.len() != n * 4 {
            return Err(Error::Format(format!(
                "grid payload has {} bytes, expected {}",
                payload.len(),
                n * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        SdfGrid::new(header.resolution, GridBounds::new(header.min, header.max)?, values)
    }
}

#[inline]
fn lattice_point(b: &GridBounds, res: &[usize; 3], i: usize, j: usize, k: usize) -> Vec3 {
    let f = |a: usize, idx: usize| b.min[a] + (b.max[a] - b.min[a]) * idx as f64 / (res[a] - 1) as f64;
    Vec3::new(f(0, i), f(1, j), f(2, k))
}

/// Evaluates `field` at every lattice corner. Each z-slice is one batch;
/// slices may run in parallel but results land in storage order.
pub fn sample_sdf_grid<F: ScalarField + Sync + ?Sized>(
    field: &F,
    bounds: GridBounds,
    resolution: [usize; 3],
) -> Result<SdfGrid> {
    GridBounds::new(bounds.min, bounds.max)?;
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidInput(format!("grid resolution {resolution:?} must be ≥ 2 per axis")));
    }
    let [nx, ny, nz] = resolution;
    let slices: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut pts = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    pts.push(lattice_point(&bounds, &resolution, i, j, k));
                }
            }
            field.eval_batch(&pts)
        })
        .collect();
    SdfGrid::new(resolution, bounds, slices.concat())
}
