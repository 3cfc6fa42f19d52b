//! Exact 3-D k-d tree used for neighbour and radius queries.
//!
//! Neighbour order is `(squared distance, index)`, so equal distances resolve to
//! the smaller index. Pruning only discards subtrees strictly farther than the
//! current k-th candidate, which keeps tie handling exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;
const NONE: usize = usize::MAX;

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

impl Node {
    fn box_dist2(&self, q: &[f64; 3]) -> f64 {
        let mut acc = 0.0;
        for a in 0..3 {
            let d = if q[a] < self.lo[a] {
                self.lo[a] - q[a]
            } else if q[a] > self.hi[a] {
                q[a] - self.hi[a]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    /// `points` permuted into `order`, so leaves are contiguous.
    sorted: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub(crate) fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            sorted: Vec::new(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree.sorted = tree.order.iter().map(|&i| points[i]).collect();
        tree
    }

    /// Point indices in leaf order; neighbouring entries are close in space.
    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            end,
            left: NONE,
            right: NONE,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            // every point identical
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            points[i][axis].total_cmp(&points[j][axis])
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    /// The `k` nearest points to `query`, skipping index `exclude`, in
    /// ascending `(distance, index)` order. Returns squared distances.
    pub(crate) fn nearest(&self, query: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.nearest_in(0, query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.d2, c.index)).collect()
    }

    fn nearest_in(
        &self,
        node: usize,
        query: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let n = &self.nodes[node];
        if n.left == NONE {
            for (&i, p) in self.order[n.start..n.end].iter().zip(&self.sorted[n.start..n.end]) {
                if Some(i) == exclude {
                    continue;
                }
                let c = Candidate {
                    d2: dist2(query, p),
                    index: i,
                };
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().expect("heap is full") {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        let (l, r) = (n.left, n.right);
        let dl = self.nodes[l].box_dist2(query);
        let dr = self.nodes[r].box_dist2(query);
        let (first, d_first, second, d_second) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
        for (child, d) in [(first, d_first), (second, d_second)] {
            if heap.len() == k && d > heap.peek().expect("heap is full").d2 {
                continue;
            }
            self.nearest_in(child, query, k, exclude, heap);
        }
    }

    /// Indices within squared radius `r2` of `query` (inclusive), ascending.
    pub(crate) fn within(&self, query: &[f64; 3], r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_in(0, query, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_in(&self, node: usize, query: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if n.box_dist2(query) > r2 {
            return;
        }
        if n.left == NONE {
            out.extend(
                self.order[n.start..n.end]
                    .iter()
                    .zip(&self.sorted[n.start..n.end])
                    .filter(|(_, p)| dist2(query, p) <= r2)
                    .map(|(&i, _)| i),
            );
            return;
        }
        self.within_in(n.left, query, r2, out);
        self.within_in(n.right, query, r2, out);
    }
}
