//! Parametric triangle meshes standing in for real object categories.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Domain(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        let mesh = Self { vertices, faces };
        if mesh.surface_area() <= 0.0 {
            return Err(Error::Domain("mesh has no face with positive area".into()));
        }
        Ok(mesh)
    }

    /// An empty mesh; renders as pure background.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn triangle(&self, face: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_normal(&self, face: usize) -> [f64; 3] {
        let [a, b, c] = self.triangle(face);
        cross(&sub(&b, &a), &sub(&c, &a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * norm(&self.face_normal(face))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Applies `p ↦ (p − center) · scale` to every vertex.
    pub fn transformed(&self, center: [f64; 3], scale: f64) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| {
                    [
                        (p[0] - center[0]) * scale,
                        (p[1] - center[1]) * scale,
                        (p[2] - center[2]) * scale,
                    ]
                })
                .collect(),
            faces: self.faces.clone(),
        }
    }

    fn append(&mut self, other: Mesh) {
        let base = self.vertices.len();
        self.vertices.extend(other.vertices);
        self.faces
            .extend(other.faces.into_iter().map(|f| f.map(|i| i + base)));
    }
}

/// Shape families used as dataset categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Cone,
    Ellipsoid,
    Torus,
    Composite,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Ellipsoid,
        ShapeKind::Torus,
        ShapeKind::Composite,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Torus => "torus",
            ShapeKind::Composite => "composite",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = ShapeKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!(
                    "unknown shape category {s:?} (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Concrete dimensions of one shape instance.
///
/// Random ranges (all lengths in the same arbitrary unit; clouds are
/// normalized afterwards):
/// - box: sides in [0.4, 1.0]
/// - cylinder: radius in [0.2, 0.5], height in [0.4, 1.2]
/// - cone: base radius in [0.25, 0.5], height in [0.5, 1.2]
/// - ellipsoid: semi-axes in [0.25, 0.6]
/// - torus: major radius in [0.35, 0.6], minor radius in [0.08, 0.3] of major
/// - composite: base box sides in [0.5, 1.0] × [0.5, 1.0] × [0.1, 0.3], with a
///   post box of footprint [0.1, 0.3] and height [0.3, 0.8] standing on it
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeParams {
    Box {
        size: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
        segments: usize,
    },
    Cone {
        radius: f64,
        height: f64,
        segments: usize,
    },
    Ellipsoid {
        radii: [f64; 3],
        slices: usize,
        stacks: usize,
    },
    Torus {
        major: f64,
        minor: f64,
        major_segments: usize,
        minor_segments: usize,
    },
    Composite {
        base: [f64; 3],
        post: [f64; 3],
    },
}

impl ShapeParams {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeParams::Box { .. } => ShapeKind::Box,
            ShapeParams::Cylinder { .. } => ShapeKind::Cylinder,
            ShapeParams::Cone { .. } => ShapeKind::Cone,
            ShapeParams::Ellipsoid { .. } => ShapeKind::Ellipsoid,
            ShapeParams::Torus { .. } => ShapeKind::Torus,
            ShapeParams::Composite { .. } => ShapeKind::Composite,
        }
    }

    pub fn random<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        match kind {
            ShapeKind::Box => ShapeParams::Box {
                size: [u(0.4, 1.0), u(0.4, 1.0), u(0.4, 1.0)],
            },
            ShapeKind::Cylinder => ShapeParams::Cylinder {
                radius: u(0.2, 0.5),
                height: u(0.4, 1.2),
                segments: 24,
            },
            ShapeKind::Cone => ShapeParams::Cone {
                radius: u(0.25, 0.5),
                height: u(0.5, 1.2),
                segments: 24,
            },
            ShapeKind::Ellipsoid => ShapeParams::Ellipsoid {
                radii: [u(0.25, 0.6), u(0.25, 0.6), u(0.25, 0.6)],
                slices: 24,
                stacks: 12,
            },
            ShapeKind::Torus => {
                let major = u(0.35, 0.6);
                let minor = major * u(0.08, 0.3);
                ShapeParams::Torus {
                    major,
                    minor,
                    major_segments: 32,
                    minor_segments: 16,
                }
            }
            ShapeKind::Composite => ShapeParams::Composite {
                base: [u(0.5, 1.0), u(0.5, 1.0), u(0.1, 0.3)],
                post: [u(0.1, 0.3), u(0.1, 0.3), u(0.3, 0.8)],
            },
        }
    }

    /// Closed triangle mesh with outward-facing winding.
    pub fn mesh(&self) -> Mesh {
        match *self {
            ShapeParams::Box { size } => box_mesh(size, [0.0; 3]),
            ShapeParams::Cylinder {
                radius,
                height,
                segments,
            } => prism(radius, radius, height, segments),
            ShapeParams::Cone {
                radius,
                height,
                segments,
            } => cone(radius, height, segments),
            ShapeParams::Ellipsoid {
                radii,
                slices,
                stacks,
            } => ellipsoid(radii, slices, stacks),
            ShapeParams::Torus {
                major,
                minor,
                major_segments,
                minor_segments,
            } => torus(major, minor, major_segments, minor_segments),
            ShapeParams::Composite { base, post } => {
                let mut m = box_mesh(base, [0.0, 0.0, -0.5 * post[2]]);
                m.append(box_mesh(post, [0.0, 0.0, 0.5 * base[2]]));
                m
            }
        }
    }
}

/// Random instance of `kind`, deterministic given the rng state.
pub fn gen_shape<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> Mesh {
    ShapeParams::random(kind, rng).mesh()
}

fn box_mesh(size: [f64; 3], center: [f64; 3]) -> Mesh {
    let h = size.map(|s| 0.5 * s);
    let vertices = (0..8)
        .map(|i| {
            [
                center[0] + if i & 1 == 0 { -h[0] } else { h[0] },
                center[1] + if i & 2 == 0 { -h[1] } else { h[1] },
                center[2] + if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    #[rustfmt::skip]
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // z−
        [4, 5, 6], [5, 7, 6], // z+
        [0, 1, 4], [1, 5, 4], // y−
        [2, 6, 3], [3, 6, 7], // y+
        [0, 4, 2], [2, 4, 6], // x−
        [1, 3, 5], [3, 7, 5], // x+
    ];
    Mesh { vertices, faces }
}

/// Closed frustum along z; equal radii give a cylinder.
fn prism(bottom: f64, top: f64, height: f64, segments: usize) -> Mesh {
    let n = segments;
    let z0 = -0.5 * height;
    let z1 = 0.5 * height;
    let mut vertices = Vec::with_capacity(2 * n + 2);
    for (r, z) in [(bottom, z0), (top, z1)] {
        for i in 0..n {
            let t = TAU * i as f64 / n as f64;
            vertices.push([r * t.cos(), r * t.sin(), z]);
        }
    }
    vertices.push([0.0, 0.0, z0]);
    vertices.push([0.0, 0.0, z1]);
    let (cb, ct) = (2 * n, 2 * n + 1);
    let mut faces = Vec::with_capacity(4 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, n + j]);
        faces.push([i, n + j, n + i]);
        faces.push([cb, j, i]);
        faces.push([ct, n + i, n + j]);
    }
    Mesh { vertices, faces }
}

fn cone(radius: f64, height: f64, segments: usize) -> Mesh {
    let n = segments;
    let mut vertices: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            [radius * t.cos(), radius * t.sin(), -0.5 * height]
        })
        .collect();
    vertices.push([0.0, 0.0, 0.5 * height]);
    vertices.push([0.0, 0.0, -0.5 * height]);
    let (apex, base) = (n, n + 1);
    let mut faces = Vec::with_capacity(2 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, apex]);
        faces.push([base, j, i]);
    }
    Mesh { vertices, faces }
}

fn ellipsoid(radii: [f64; 3], slices: usize, stacks: usize) -> Mesh {
    let mut vertices = vec![[0.0, 0.0, -radii[2]]];
    for s in 1..stacks {
        let phi = std::f64::consts::PI * s as f64 / stacks as f64;
        let (z, ring) = (-phi.cos(), phi.sin());
        for i in 0..slices {
            let t = TAU * i as f64 / slices as f64;
            vertices.push([radii[0] * ring * t.cos(), radii[1] * ring * t.sin(), radii[2] * z]);
        }
    }
    vertices.push([0.0, 0.0, radii[2]]);
    let top = vertices.len() - 1;
    let ring = |s: usize, i: usize| 1 + (s - 1) * slices + i % slices;
    let mut faces = Vec::new();
    for i in 0..slices {
        faces.push([0, ring(1, i + 1), ring(1, i)]);
        faces.push([top, ring(stacks - 1, i), ring(stacks - 1, i + 1)]);
    }
    for s in 1..stacks - 1 {
        for i in 0..slices {
            let (a, b) = (ring(s, i), ring(s, i + 1));
            let (c, d) = (ring(s + 1, i), ring(s + 1, i + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    Mesh { vertices, faces }
}

fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Mesh {
    let (n, m) = (major_segments, minor_segments);
    let mut vertices = Vec::with_capacity(n * m);
    for i in 0..n {
        let u = TAU * i as f64 / n as f64;
        for j in 0..m {
            let v = TAU * j as f64 / m as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % n) * m + j % m;
    let mut faces = Vec::with_capacity(2 * n * m);
    for i in 0..n {
        for j in 0..m {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh { vertices, faces }
}
