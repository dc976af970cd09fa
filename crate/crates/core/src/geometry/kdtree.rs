//! Static kd-tree over 3D points for exact nearest-neighbor queries.
//!
//! Queries return exactly what an exhaustive linear scan would, with ties on
//! squared distance broken toward the lowest point index. The tree is
//! immutable after construction and safe to share across threads.

use nalgebra::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    // Points in build order; `orig[i]` is the index into the source slice.
    pts: Vec<[f64; 3]>,
    orig: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    /// Builds the index. Panics on an empty slice.
    pub fn build(points: &[Point3<f64>]) -> Self {
        assert!(!points.is_empty(), "cannot index an empty cloud");
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 2);
        let n = perm.len();
        let root = build_node(&coords, &mut perm, 0, n, &mut nodes);
        // Reorder coordinates to match the permutation so leaf scans are
        // contiguous.
        let pts: Vec<[f64; 3]> = perm.iter().map(|&i| coords[i as usize]).collect();
        Self {
            pts,
            orig: perm,
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Nearest indexed point to `query`: `(point_index, squared_distance)`.
    ///
    /// Equal to an exhaustive scan with ties broken by lowest point index.
    pub fn nearest(&self, query: &Point3<f64>) -> (usize, f64) {
        let q = [query.x, query.y, query.z];
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_rec(self.root, &q, &mut best);
        (best.0 as usize, best.1)
    }

    fn nearest_rec(&self, node: u32, q: &[f64; 3], best: &mut (u32, f64)) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for i in *start as usize..*end as usize {
                    let p = &self.pts[i];
                    let d2 = sq(p[0] - q[0]) + sq(p[1] - q[1]) + sq(p[2] - q[2]);
                    let idx = self.orig[i];
                    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                        *best = (idx, d2);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let delta = q[*dim as usize] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.nearest_rec(near, q, best);
                // Descend the far side unless it is strictly beyond the best
                // distance; equality may still hide a lower-index tie.
                if delta * delta <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points, sorted by `(squared_distance, index)`.
    ///
    /// Returns fewer entries when the tree holds fewer than `k` points.
    pub fn k_nearest(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        assert!(k > 0);
        let q = [query.x, query.y, query.z];
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, &q, k, &mut heap);
        heap.into_iter().map(|(d2, i)| (i as usize, d2)).collect()
    }

    fn k_nearest_rec(&self, node: u32, q: &[f64; 3], k: usize, found: &mut Vec<(f64, u32)>) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for i in *start as usize..*end as usize {
                    let p = &self.pts[i];
                    let d2 = sq(p[0] - q[0]) + sq(p[1] - q[1]) + sq(p[2] - q[2]);
                    let cand = (d2, self.orig[i]);
                    if found.len() < k {
                        let pos = found.partition_point(|e| *e < cand);
                        found.insert(pos, cand);
                    } else if cand < *found.last().unwrap() {
                        found.pop();
                        let pos = found.partition_point(|e| *e < cand);
                        found.insert(pos, cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let delta = q[*dim as usize] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.k_nearest_rec(near, q, k, found);
                let prune = found.len() == k && delta * delta > found.last().unwrap().0;
                if !prune {
                    self.k_nearest_rec(far, q, k, found);
                }
            }
        }
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn build_node(
    coords: &[[f64; 3]],
    perm: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }

    // Split on the widest extent of the range.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &perm[start..end] {
        let p = &coords[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut dim = 0;
    for d in 1..3 {
        if hi[d] - lo[d] > hi[dim] - lo[dim] {
            dim = d;
        }
    }
    if hi[dim] - lo[dim] == 0.0 {
        // All points identical along every axis; no useful split.
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return (nodes.len() - 1) as u32;
    }

    let mid = (start + end) / 2;
    perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        let (ca, cb) = (coords[a as usize][dim], coords[b as usize][dim]);
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    let value = coords[perm[mid] as usize][dim];

    let left = build_node(coords, perm, start, mid, nodes);
    let right = build_node(coords, perm, mid, end, nodes);
    nodes.push(Node::Split {
        dim: dim as u8,
        value,
        left,
        right,
    });
    (nodes.len() - 1) as u32
}

/// Exhaustive nearest neighbor with the same tie rule as the tree. Used as
/// the reference oracle in tests and kept here so callers can cross-check.
pub fn nearest_linear(points: &[Point3<f64>], query: &Point3<f64>) -> (usize, f64) {
    assert!(!points.is_empty());
    let mut best = (0usize, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}
