use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::Mesh;
use crate::chamfer::PointCloud;
use crate::error::{Error, Result};

/// Draws `n` points uniformly over the mesh surface: faces are picked in
/// proportion to their area, then a point is drawn uniformly inside the face.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let faces = WeightedIndex::new(&areas)
        .map_err(|e| Error::Domain(format!("cannot sample a mesh with no area: {e}")))?;
    let points = (0..n)
        .map(|_| {
            let [a, b, c] = mesh.triangle(faces.sample(rng));
            let s = rng.gen::<f64>().sqrt();
            let t = rng.gen::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
            [
                wa * a[0] + wb * b[0] + wc * c[0],
                wa * a[1] + wb * b[1] + wc * c[1],
                wa * a[2] + wb * b[2] + wc * c[2],
            ]
        })
        .collect();
    PointCloud::new(points)
}

/// Centroid and extent such that `(p − centroid) / extent` fits `[−1, 1]³`
/// with at least one coordinate at ±1. The extent is 1 for a cloud whose
/// points all coincide.
pub fn normalization(cloud: &PointCloud) -> ([f64; 3], f64) {
    let n = cloud.len() as f64;
    let mut c = [0.0; 3];
    for p in cloud.points() {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|v| v / n);
    let extent = cloud
        .points()
        .iter()
        .flat_map(|p| (0..3).map(move |k| (p[k] - c[k]).abs()))
        .fold(0.0, f64::max);
    (c, if extent > 0.0 { extent } else { 1.0 })
}

/// Centers the cloud on its centroid and scales it so `max |coordinate| == 1`.
/// A cloud whose points all coincide is only centered.
pub fn normalize_cloud(cloud: &PointCloud) -> PointCloud {
    let (c, s) = normalization(cloud);
    let points = cloud
        .points()
        .iter()
        .map(|p| [(p[0] - c[0]) / s, (p[1] - c[1]) / s, (p[2] - c[2]) / s])
        .collect();
    PointCloud::new(points).expect("affine image of a finite cloud is finite")
}
