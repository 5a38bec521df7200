use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{bounds_of, OrientedPointCloud, RigidTransform, Transformable, Vec3};

/// Indexed triangle mesh with counter-clockwise (outward) winding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let m = TriangleMesh { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidInput(format!("face {f:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertex".into()));
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized normal; its length is twice the triangle area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| 0.5 * self.face_cross(f).norm()).collect()
    }

    pub fn area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Sum of signed tetrahedron volumes against the origin. Positive for a
    /// closed mesh with outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.vertices)
    }

    /// True when every undirected edge is shared by exactly two faces that
    /// traverse it in opposite directions.
    pub fn is_closed(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                *directed.entry((f[e], f[(e + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn flip_winding(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }
}

impl Transformable for TriangleMesh {
    fn transformed(&self, t: &RigidTransform) -> Self {
        self.map_vertices(|v| t.apply_point(v))
    }
}

/// Area-weighted uniform surface samples carrying unit face normals.
pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<OrientedPointCloud> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    mesh.validate()?;
    let areas = mesh.face_areas();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidInput("mesh has zero surface area".into()));
    }
    let normals: Vec<Vec3> = (0..mesh.faces.len())
        .map(|f| mesh.face_cross(f).try_normalize(0.0).unwrap_or_else(Vec3::zeros))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut nrm = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
        if s + t > 1.0 {
            s = 1.0 - s;
            t = 1.0 - t;
        }
        let [a, b, c] = mesh.triangle(f);
        points.push(a + (b - a) * s + (c - a) * t);
        nrm.push(normals[f]);
    }
    OrientedPointCloud::new(points, nrm)
}
