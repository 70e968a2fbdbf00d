//! Exact nearest-neighbour search over 3-D points.

use super::sq_dist;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree. Splits on the axis of widest extent at the median.
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl<'a> KdTree<'a> {
    /// `leaf_size` of 0 is treated as 1.
    pub fn build(points: &'a [[f64; 3]], leaf_size: usize) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .expect("three axes");
        if hi[axis] == lo[axis] {
            // All points coincide; splitting gains nothing.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `query` as `(index, squared distance)`. Among equally
    /// distant points the lowest index wins. `None` only for an empty tree.
    pub fn nearest(&self, query: &[f64; 3]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_dist(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates with lower indices reachable.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; 3]], q: &[f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        for leaf in [1, 4, 16, 1000] {
            let tree = KdTree::build(&pts, leaf);
            for _ in 0..200 {
                let q = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
                assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
            }
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        for leaf in [1, 2, 8] {
            let tree = KdTree::build(&pts, leaf);
            assert_eq!(tree.nearest(&[0.0, 0.0, 0.0]).unwrap(), (0, 1.0));
            assert_eq!(tree.nearest(&[1.0, 0.0, 0.0]).unwrap(), (0, 0.0));
        }
    }

    #[test]
    fn every_point_in_exactly_one_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<[f64; 3]> = (0..300).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let tree = KdTree::build(&pts, 7);
        let mut seen = vec![0usize; pts.len()];
        fn walk(tree: &KdTree, node: usize, seen: &mut [usize]) {
            match tree.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &tree.order[start..end] {
                        seen[i] += 1;
                    }
                }
                Node::Split { left, right, .. } => {
                    walk(tree, left, seen);
                    walk(tree, right, seen);
                }
            }
        }
        walk(&tree, 0, &mut seen);
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn coincident_points() {
        let pts = vec![[0.25, 0.25, 0.25]; 100];
        let tree = KdTree::build(&pts, 1);
        assert_eq!(tree.nearest(&[0.0, 0.0, 0.0]).unwrap().0, 0);
    }
}
