//! Exact k-nearest-neighbor search.
//!
//! Neighbors are ordered by `(squared distance, index)`, so equal distances
//! resolve to the lower target index. The k-d tree and the brute-force scan
//! compute squared distances with the same expression and therefore return
//! identical results, bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{dist_sq3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(Neighbor);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// O(N) scan per query.
pub fn brute_force_knn(query: Vec3, target: &[Vec3], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = target
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist_sq: dist_sq3(query, *p),
        })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, Neighbor::key_cmp);
        all.truncate(k);
    }
    all.sort_by(Neighbor::key_cmp);
    all
}

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
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
        if end - start <= LEAF_SIZE {
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
            .unwrap();
        if hi[axis] == lo[axis] {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = self.points[self.order[mid]][axis];
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

    /// The `k` nearest points to `query`, ascending by `(distance, index)`.
    pub fn knn(&self, query: Vec3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn search(&self, node: usize, q: Vec3, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = HeapEntry(Neighbor {
                        index: i,
                        dist_sq: dist_sq3(q, self.points[i]),
                    });
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Points with coordinate == value may sit on either side.
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                let plane = diff * diff;
                if heap.len() < k || plane <= heap.peek().unwrap().0.dist_sq {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Below this many target points a linear scan beats building a tree.
pub const BRUTE_FORCE_MAX: usize = 64;

/// Exact k-NN of every query row among `target`.
pub fn knn_all(query: &[Vec3], target: &[Vec3], k: usize) -> Vec<Vec<Neighbor>> {
    if target.len() <= BRUTE_FORCE_MAX {
        query.iter().map(|q| brute_force_knn(*q, target, k)).collect()
    } else {
        let tree = KdTree::build(target);
        query.iter().map(|q| tree.knn(*q, k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SceneRng;

    fn cloud(rng: &mut SceneRng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| rng.uniform3(-1.0, 1.0)).collect()
    }

    #[test]
    fn tree_matches_brute_force() {
        let mut rng = SceneRng::new(1);
        for trial in 0..30 {
            let n = 1 + rng.below(600);
            let target = cloud(&mut rng, n);
            let tree = KdTree::build(&target);
            for _ in 0..20 {
                let q = rng.uniform3(-1.2, 1.2);
                let k = 1 + rng.below(n.min(10));
                assert_eq!(tree.knn(q, k), brute_force_knn(q, &target, k), "trial {trial}");
            }
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // A lattice with many equal distances and duplicate points.
        let mut target = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..4 {
                    target.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        target.extend_from_slice(&target.clone()[..40]);
        let tree = KdTree::build(&target);
        let q = [2.5, 2.5, 1.5];
        let got = tree.knn(q, 12);
        assert_eq!(got, brute_force_knn(q, &target, 12));
        for w in got.windows(2) {
            assert!(w[0].dist_sq < w[1].dist_sq || (w[0].dist_sq == w[1].dist_sq && w[0].index < w[1].index));
        }
    }

    #[test]
    fn degenerate_clouds() {
        let same = vec![[1.0, 1.0, 1.0]; 100];
        let tree = KdTree::build(&same);
        let got = tree.knn([0.0; 3], 3);
        assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(KdTree::build(&[]).knn([0.0; 3], 2).is_empty());
    }
}
