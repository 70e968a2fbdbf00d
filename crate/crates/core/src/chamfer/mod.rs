//! Chamfer distance between point clouds: the training loss.
//!
//! The loss is the unnormalized sum of squared nearest-neighbour distances in
//! both directions. Two evaluators share one contract: [`chamfer_exact`]
//! scans every pair and [`chamfer_kdtree`] prunes with a k-d tree; both break
//! nearest-neighbour ties toward the lowest index, so they agree on indices as
//! well as on the loss.

mod kdtree;

pub use kdtree::KdTree;

use crate::error::{Error, Result};

/// Default k-d tree leaf size used by training and evaluation.
pub const DEFAULT_LEAF_SIZE: usize = 8;

/// Ordered set of 3-D points in model coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Domain(format!(
                "point {i} has a non-finite coordinate: {:?}",
                points[i]
            )));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` slice.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "{} coordinates do not form whole points",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.points
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |m, c| m.max(c.abs()))
    }

    /// True when every coordinate lies in `[−1, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.max_abs() <= 1.0
    }
}

/// Loss and the nearest-neighbour assignment that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Chamfer {
    pub loss: f64,
    /// For every ground-truth point, the index of its nearest prediction.
    pub nn_fwd: Vec<usize>,
    /// For every predicted point, the index of its nearest ground-truth point.
    pub nn_bwd: Vec<usize>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn nearest_brute(q: &[f64; 3], set: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in set.iter().enumerate() {
        let d = sq_dist(q, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assemble(dir_fwd: Vec<(usize, f64)>, dir_bwd: Vec<(usize, f64)>) -> Chamfer {
    let fwd: f64 = dir_fwd.iter().map(|&(_, d)| d).sum();
    let bwd: f64 = dir_bwd.iter().map(|&(_, d)| d).sum();
    Chamfer {
        loss: fwd + bwd,
        nn_fwd: dir_fwd.into_iter().map(|(i, _)| i).collect(),
        nn_bwd: dir_bwd.into_iter().map(|(i, _)| i).collect(),
    }
}

/// O(N·M) Chamfer distance between ground truth `x` and prediction `xhat`.
pub fn chamfer_exact(x: &PointCloud, xhat: &PointCloud) -> Result<Chamfer> {
    let (a, b) = (x.points(), xhat.points());
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Chamfer distance of an empty cloud".into()));
    }
    let fwd = a.iter().map(|p| nearest_brute(p, b)).collect();
    let bwd = b.iter().map(|p| nearest_brute(p, a)).collect();
    Ok(assemble(fwd, bwd))
}

/// Chamfer distance using k-d trees over each cloud; exact, not approximate.
pub fn chamfer_kdtree(x: &PointCloud, xhat: &PointCloud, leaf_size: usize) -> Result<Chamfer> {
    let (a, b) = (x.points(), xhat.points());
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Chamfer distance of an empty cloud".into()));
    }
    let query = |pts: &[[f64; 3]], target: &[[f64; 3]]| -> Vec<(usize, f64)> {
        let tree = KdTree::build(target, leaf_size);
        pts.iter()
            .map(|p| tree.nearest(p).expect("tree over a nonempty cloud"))
            .collect()
    };
    let (fwd, bwd) = rayon::join(|| query(a, b), || query(b, a));
    Ok(assemble(fwd, bwd))
}

/// Gradient of the Chamfer loss with respect to every predicted point,
/// holding the nearest-neighbour assignment fixed.
pub fn chamfer_grad(
    x: &PointCloud,
    xhat: &PointCloud,
    nn_fwd: &[usize],
    nn_bwd: &[usize],
) -> Result<Vec<[f64; 3]>> {
    let (a, b) = (x.points(), xhat.points());
    if nn_fwd.len() != a.len() || nn_bwd.len() != b.len() {
        return Err(Error::Usage(format!(
            "index lists of length {}/{} do not match clouds of {}/{} points",
            nn_fwd.len(),
            nn_bwd.len(),
            a.len(),
            b.len()
        )));
    }
    if nn_fwd.iter().any(|&j| j >= b.len()) || nn_bwd.iter().any(|&i| i >= a.len()) {
        return Err(Error::Usage("nearest-neighbour index out of range".into()));
    }
    let mut grad = vec![[0.0; 3]; b.len()];
    for (j, g) in grad.iter_mut().enumerate() {
        let gt = &a[nn_bwd[j]];
        for k in 0..3 {
            g[k] += 2.0 * (b[j][k] - gt[k]);
        }
    }
    for (i, &j) in nn_fwd.iter().enumerate() {
        for k in 0..3 {
            grad[j][k] += 2.0 * (b[j][k] - a[i][k]);
        }
    }
    Ok(grad)
}

/// Loss and gradient in one call, using the k-d tree evaluator.
pub fn chamfer_with_grad(x: &PointCloud, xhat: &PointCloud) -> Result<(f64, Vec<[f64; 3]>)> {
    let c = chamfer_kdtree(x, xhat, DEFAULT_LEAF_SIZE)?;
    let grad = chamfer_grad(x, xhat, &c.nn_fwd, &c.nn_bwd)?;
    Ok((c.loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_clouds_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_cloud(50, &mut rng);
        assert_eq!(chamfer_exact(&c, &c).unwrap().loss, 0.0);
        assert_eq!(chamfer_kdtree(&c, &c, 8).unwrap().loss, 0.0);
    }

    #[test]
    fn analytic_values() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_exact(&a, &b).unwrap().loss, 2.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer_exact(&a, &b).unwrap().loss, 4.0);
    }

    #[test]
    fn empty_cloud_is_domain_error() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::Domain(_))));
        assert!(matches!(
            PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kdtree_matches_exact_on_thousand_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(1000, &mut rng);
        let b = random_cloud(1000, &mut rng);
        let exact = chamfer_exact(&a, &b).unwrap();
        for leaf in [1, 8, 64] {
            let fast = chamfer_kdtree(&a, &b, leaf).unwrap();
            assert!((fast.loss - exact.loss).abs() <= 1e-12);
            assert_eq!(fast, exact);
        }
    }

    #[test]
    fn duplicate_points() {
        let a = cloud(&[[0.3, -0.2, 0.1]; 40]);
        let exact = chamfer_exact(&a, &a).unwrap();
        let fast = chamfer_kdtree(&a, &a, 4).unwrap();
        assert_eq!(exact.loss, 0.0);
        assert_eq!(fast, exact);
        assert!(exact.nn_fwd.iter().all(|&i| i == 0));
    }

    #[test]
    fn gradient_zero_at_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(30, &mut rng);
        let (_, g) = chamfer_with_grad(&a, &a).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_single_points() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        let (_, g) = chamfer_with_grad(&a, &b).unwrap();
        assert_eq!(g, vec![[4.0, 0.0, 0.0]]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = random_cloud(40, &mut rng);
            let b = random_cloud(25, &mut rng);
            let c = chamfer_exact(&a, &b).unwrap();
            let g = chamfer_grad(&a, &b, &c.nn_fwd, &c.nn_bwd).unwrap();
            let h = 1e-6;
            for j in 0..b.len() {
                for k in 0..3 {
                    let mut up = b.points().to_vec();
                    let mut down = b.points().to_vec();
                    up[j][k] += h;
                    down[j][k] -= h;
                    let fu = chamfer_exact(&a, &cloud(&up)).unwrap().loss;
                    let fd = chamfer_exact(&a, &cloud(&down)).unwrap().loss;
                    let num = (fu - fd) / (2.0 * h);
                    let err = (num - g[j][k]).abs() / num.abs().max(g[j][k].abs()).max(1e-6);
                    assert!(err <= 1e-5, "point {j} axis {k}: {num} vs {}", g[j][k]);
                }
            }
        }
    }

    #[test]
    fn inconsistent_indices_are_usage_errors() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.5, 0.0, 0.0]]);
        assert!(matches!(chamfer_grad(&a, &b, &[0], &[0]), Err(Error::Usage(_))));
        assert!(matches!(chamfer_grad(&a, &b, &[0, 1], &[0]), Err(Error::Usage(_))));
    }

    #[test]
    fn gradient_rotates_with_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_cloud(60, &mut rng);
        let b = random_cloud(45, &mut rng);
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let rot = |p: &[f64; 3]| {
            // Rotation about z, then about x.
            let q = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
            [q[0], c * q[1] - s * q[2], s * q[1] + c * q[2]]
        };
        let ra = cloud(&a.points().iter().map(rot).collect::<Vec<_>>());
        let rb = cloud(&b.points().iter().map(rot).collect::<Vec<_>>());
        let (_, g) = chamfer_with_grad(&a, &b).unwrap();
        let (_, rg) = chamfer_with_grad(&ra, &rb).unwrap();
        for (x, y) in g.iter().map(rot).zip(&rg) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() <= 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(n in 1usize..60, m in 1usize..60, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(n, &mut rng);
            let b = random_cloud(m, &mut rng);
            let ab = chamfer_kdtree(&a, &b, 4).unwrap().loss;
            let ba = chamfer_kdtree(&b, &a, 4).unwrap().loss;
            prop_assert_eq!(ab, ba);
            prop_assert!(ab > 0.0);
            prop_assert_eq!(ab, chamfer_exact(&a, &b).unwrap().loss);
        }

        #[test]
        fn zero_for_mutual_subsets(n in 1usize..30, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(n, &mut rng);
            // Same point set, permuted and with repeats.
            let mut pts = a.points().to_vec();
            pts.reverse();
            pts.extend_from_slice(&a.points()[..n / 2]);
            let b = cloud(&pts);
            prop_assert_eq!(chamfer_exact(&a, &b).unwrap().loss, 0.0);
        }
    }
}
