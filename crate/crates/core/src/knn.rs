//! Spatiotemporal embedding, the k-nearest-neighbour event graph and
//! component-based denoising.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{SampleSet, SensorGeometry};
use crate::kdtree::{dist2, KdTree};

/// A sampled event embedded in `(u, v, w)` space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatioTemporalPoint {
    /// `[u, v, w]`: scaled x, scaled y, scaled time.
    pub coords: [f64; 3],
    /// Position of the originating event in its [`SampleSet`].
    pub source_index: usize,
}

impl SpatioTemporalPoint {
    pub fn new(u: f64, v: f64, w: f64, source_index: usize) -> Self {
        SpatioTemporalPoint {
            coords: [u, v, w],
            source_index,
        }
    }

    pub fn u(&self) -> f64 {
        self.coords[0]
    }

    pub fn v(&self) -> f64 {
        self.coords[1]
    }

    pub fn w(&self) -> f64 {
        self.coords[2]
    }
}

/// Pixels per microsecond: converts timestamps into the spatial unit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeScale(f64);

impl TimeScale {
    /// Fraction of the sensor width spanned by one window on the time axis
    /// under [`TimeScale::auto`].
    pub const AUTO_SPAN_FRACTION: f64 = 1.0 / 32.0;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("time scale must be positive and finite, got {alpha}")));
        }
        Ok(TimeScale(alpha))
    }

    /// `width * AUTO_SPAN_FRACTION / window_duration`.
    pub fn auto(geometry: SensorGeometry, window_duration_us: u64) -> Self {
        TimeScale::spanning(geometry.width as f64 * Self::AUTO_SPAN_FRACTION, window_duration_us)
    }

    /// Scale mapping one window onto `[0, span]`.
    pub fn spanning(span: f64, window_duration_us: u64) -> Self {
        TimeScale(span / window_duration_us.max(1) as f64)
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// `u = x`, `v = y`, `w = alpha * (t - t_start)`.
pub fn embed(sample: &SampleSet, scale: TimeScale) -> Vec<SpatioTemporalPoint> {
    sample
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dt = e.t.saturating_sub(sample.t_start) as f64;
            SpatioTemporalPoint::new(e.x as f64, e.y as f64, scale.alpha() * dt, i)
        })
        .collect()
}

/// Undirected k-NN graph under the union rule: `(i, j)` is an edge when either
/// endpoint is among the other's `k` nearest neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub nodes: Vec<SpatioTemporalPoint>,
    /// Sorted `(i, j)` pairs with `i < j`.
    pub edges: Vec<(usize, usize)>,
    pub k: usize,
    /// Neighbours of node `i` are `targets[offsets[i]..offsets[i + 1]]`,
    /// ascending.
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

/// Symmetric adjacency in compressed rows from `(i, j)` pairs, each added in
/// both directions, duplicates removed.
fn symmetric_rows(n: usize, pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; n + 1];
    for &(i, j) in pairs {
        offsets[i + 1] += 1;
        offsets[j + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut targets = vec![0usize; offsets[n]];
    for &(i, j) in pairs {
        targets[cursor[i]] = j;
        cursor[i] += 1;
        targets[cursor[j]] = i;
        cursor[j] += 1;
    }
    // Sort and dedup each row, compacting in place.
    let mut write = 0;
    let mut compact = vec![0usize; n + 1];
    for i in 0..n {
        let row = &mut targets[offsets[i]..offsets[i + 1]];
        row.sort_unstable();
        let mut last = None;
        for r in offsets[i]..offsets[i + 1] {
            let t = targets[r];
            if last != Some(t) {
                targets[write] = t;
                write += 1;
                last = Some(t);
            }
        }
        compact[i + 1] = write;
    }
    targets.truncate(write);
    (compact, targets)
}

impl KnnGraph {
    fn from_pairs(nodes: Vec<SpatioTemporalPoint>, pairs: &[(usize, usize)], k: usize) -> Self {
        let (offsets, targets) = symmetric_rows(nodes.len(), pairs);
        let mut edges = Vec::with_capacity(targets.len() / 2);
        for i in 0..nodes.len() {
            for &j in &targets[offsets[i]..offsets[i + 1]] {
                if j > i {
                    edges.push((i, j));
                }
            }
        }
        KnnGraph {
            nodes,
            edges,
            k,
            offsets,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn edge_length(&self, (i, j): (usize, usize)) -> f64 {
        dist2(&self.nodes[i].coords, &self.nodes[j].coords).sqrt()
    }

    /// Connected components as sorted node lists, ordered by smallest member.
    /// Edges longer than `max_edge_length` are ignored.
    pub fn components(&self, max_edge_length: Option<f64>) -> Vec<Vec<usize>> {
        let limit2 = max_edge_length.map(|l| l * l);
        let mut comp = vec![usize::MAX; self.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for root in 0..self.len() {
            if comp[root] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![root];
            comp[root] = id;
            stack.push(root);
            while let Some(n) = stack.pop() {
                for &m in self.neighbors(n) {
                    if comp[m] != usize::MAX {
                        continue;
                    }
                    if let Some(l2) = limit2 {
                        if dist2(&self.nodes[n].coords, &self.nodes[m].coords) > l2 {
                            continue;
                        }
                    }
                    comp[m] = id;
                    members.push(m);
                    stack.push(m);
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Subgraph induced by `keep` (ascending node indices), renumbered.
    pub fn induced(&self, keep: &[usize]) -> KnnGraph {
        let mut remap = vec![usize::MAX; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = keep.iter().map(|&i| self.nodes[i]).collect();
        let pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                let (a, b) = (remap[i], remap[j]);
                (a != usize::MAX && b != usize::MAX).then_some((a, b))
            })
            .collect();
        KnnGraph::from_pairs(nodes, &pairs, self.k)
    }

    /// Edge list, one `i j` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j) in &self.edges {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    /// Node sidecar CSV: `index,u,v,w,source_index`.
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,u,v,w,source_index")?;
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(out, "{i},{},{},{},{}", n.u(), n.v(), n.w(), n.source_index)?;
        }
        Ok(())
    }
}

/// Build the union-rule k-NN graph. Distances are Euclidean in `(u, v, w)`;
/// ties go to the smaller node index.
pub fn build_knn_graph(points: &[SpatioTemporalPoint], k: usize) -> Result<KnnGraph> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(format!(
            "k-NN graph needs at least 2 points, got {}",
            points.len()
        )));
    }
    if k == 0 || k >= points.len() {
        return Err(Error::invalid(format!(
            "k must lie in [1, {}), got {k}",
            points.len()
        )));
    }
    if points.iter().any(|p| p.coords.iter().any(|c| !c.is_finite())) {
        return Err(Error::invalid("non-finite point coordinates"));
    }
    let coords: Vec<[f64; 3]> = points.iter().map(|p| p.coords).collect();
    let tree = KdTree::new(&coords);
    // Queries run in leaf order for locality; rows are sorted afterwards.
    let pairs: Vec<(usize, usize)> = tree
        .order()
        .par_iter()
        .flat_map_iter(|&i| tree.nearest(&coords[i], k, Some(i)).into_iter().map(move |(_, j)| (i, j)))
        .collect();
    Ok(KnnGraph::from_pairs(points.to_vec(), &pairs, k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseParams {
    /// Components with fewer nodes are discarded.
    pub min_component_size: usize,
    /// Edges longer than this do not connect components. `None` keeps every
    /// edge.
    pub max_edge_length: Option<f64>,
}

impl DenoiseParams {
    pub fn components_only(min_component_size: usize) -> Self {
        DenoiseParams {
            min_component_size,
            max_edge_length: None,
        }
    }

    /// `ceil(k / 4)`, at least 3.
    pub fn default_min_component_size(k: usize) -> usize {
        k.div_ceil(4).max(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub points: Vec<SpatioTemporalPoint>,
    /// Graph node indices of the survivors, ascending.
    pub kept: Vec<usize>,
    pub removed: usize,
}

/// Drop the connected components smaller than `min_component_size`.
pub fn denoise(graph: &KnnGraph, params: DenoiseParams) -> Result<Denoised> {
    if params.min_component_size == 0 {
        return Err(Error::invalid("min_component_size must be at least 1"));
    }
    if let Some(l) = params.max_edge_length {
        if !(l >= 0.0) {
            return Err(Error::invalid("max_edge_length must be non-negative"));
        }
    }
    let mut kept: Vec<usize> = graph
        .components(params.max_edge_length)
        .into_iter()
        .filter(|c| c.len() >= params.min_component_size)
        .flatten()
        .collect();
    kept.sort_unstable();
    Ok(Denoised {
        points: kept.iter().map(|&i| graph.nodes[i]).collect(),
        removed: graph.len() - kept.len(),
        kept,
    })
}

/// Radius of the ball expected to hold `k` of `n` points spread uniformly over
/// `volume`.
pub fn uniform_knn_radius(n: usize, k: usize, volume: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (3.0 * k as f64 * volume / (4.0 * std::f64::consts::PI * n as f64)).cbrt()
}
