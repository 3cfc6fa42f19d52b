//! k-means over embedded events, silhouette scoring and selection of the
//! cluster count.
//!
//! k-means is Lloyd's algorithm with k-means++ seeding. Assignment uses
//! Hamerly's bounds to skip distance evaluations that cannot change a label;
//! the labels produced are the same as plain Lloyd iterations.
//!
//! The cluster count `f` is chosen by running k-means for every `f` in a range
//! and keeping the one with the largest mean silhouette value.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::event::{Event, SampleSet};
use crate::kdtree::dist2;
use crate::knn::SpatioTemporalPoint;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub f: usize,
    /// Cluster id of each point, in `[0, f)`.
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    /// Sum of squared point-to-centroid distances.
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after each assignment step, non-increasing. Runs inside
    /// `select_f` record only the final value.
    pub inertia_trace: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.f];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub(crate) fn coords_of(points: &[SpatioTemporalPoint]) -> Vec<[f64; 3]> {
    points.iter().map(|p| p.coords).collect()
}

fn check_finite(coords: &[[f64; 3]]) -> Result<()> {
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite point coordinates"));
    }
    Ok(())
}

pub(crate) fn distinct_count(coords: &[[f64; 3]]) -> usize {
    let mut sorted: Vec<[f64; 3]> = coords.to_vec();
    sorted.sort_unstable_by(|a, b| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    sorted.dedup();
    sorted.len()
}

/// k-means with `f` clusters.
pub fn kmeans(points: &[SpatioTemporalPoint], f: usize, seed: u64, params: KMeansParams) -> Result<Clustering> {
    let coords = coords_of(points);
    check_finite(&coords)?;
    if f < 2 || f > coords.len() {
        return Err(Error::invalid(format!(
            "cluster count must lie in [2, {}], got {f}",
            coords.len()
        )));
    }
    if distinct_count(&coords) < f {
        return Err(Error::TooFewPoints(format!("fewer than {f} distinct points")));
    }
    Ok(kmeans_coords(&coords, f, seed, params, true))
}

/// Nearest centroid by squared distance, ties to the lower id, and the
/// second-smallest distance.
#[inline]
fn nearest_two(x: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64, f64) {
    let mut best = 0;
    let mut d_best = f64::INFINITY;
    let mut d_second = f64::INFINITY;
    for (c, centre) in centroids.iter().enumerate() {
        let d = dist2(x, centre);
        let closer = d < d_best;
        d_second = if closer { d_best } else { d_second.min(d) };
        best = if closer { c } else { best };
        d_best = if closer { d } else { d_best };
    }
    (best, d_best, d_second)
}

/// k-means++ centres together with each point's nearest and second-nearest
/// centre, which seed the first assignment.
struct Seeding {
    centres: Vec<[f64; 3]>,
    nearest: Vec<usize>,
    d_best: Vec<f64>,
    d_second: Vec<f64>,
}

fn plus_plus(coords: &[[f64; 3]], f: usize, rng: &mut ChaCha8Rng) -> Seeding {
    let n = coords.len();
    let mut centres = Vec::with_capacity(f);
    let first = rng.gen_range(0..n);
    centres.push(coords[first]);
    let mut nearest = vec![0usize; n];
    let mut d_best: Vec<f64> = coords.iter().map(|p| dist2(p, &coords[first])).collect();
    let mut d_second = vec![f64::INFINITY; n];
    let mut total: f64 = d_best.iter().sum();
    while centres.len() < f {
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d_best.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a chosen centre
            rng.gen_range(0..n)
        };
        let c = coords[pick];
        let id = centres.len();
        centres.push(c);
        total = 0.0;
        for (((p, best), second), near) in coords.iter().zip(d_best.iter_mut()).zip(d_second.iter_mut()).zip(nearest.iter_mut()) {
            let d = dist2(p, &c);
            let closer = d < *best;
            *second = if closer { *best } else { second.min(d) };
            *near = if closer { id } else { *near };
            *best = if closer { d } else { *best };
            total += *best;
        }
    }
    Seeding {
        centres,
        nearest,
        d_best,
        d_second,
    }
}

pub(crate) fn plus_plus_centres(coords: &[[f64; 3]], f: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    plus_plus(coords, f, rng).centres
}

/// Give every empty cluster the point farthest from its own centroid.
fn repair_empty(coords: &[[f64; 3]], labels: &mut [usize], centroids: &mut [[f64; 3]], sizes: &mut [usize]) {
    let mut moved = Vec::new();
    for c in 0..centroids.len() {
        if sizes[c] > 0 {
            continue;
        }
        let mut far: Option<(f64, usize)> = None;
        for (i, p) in coords.iter().enumerate() {
            if sizes[labels[i]] < 2 || moved.contains(&i) {
                continue;
            }
            let d = dist2(p, &centroids[labels[i]]);
            if far.is_none_or(|(best, _)| d > best) {
                far = Some((d, i));
            }
        }
        if let Some((_, i)) = far {
            sizes[labels[i]] -= 1;
            labels[i] = c;
            sizes[c] = 1;
            centroids[c] = coords[i];
            moved.push(i);
        }
    }
}

fn inertia_of(coords: &[[f64; 3]], labels: &[usize], centroids: &[[f64; 3]]) -> f64 {
    coords
        .iter()
        .zip(labels)
        .map(|(p, &l)| dist2(p, &centroids[l]))
        .sum()
}

fn sums_and_sizes(coords: &[[f64; 3]], labels: &[usize], f: usize) -> (Vec<[f64; 3]>, Vec<usize>) {
    let mut sums = vec![[0.0f64; 3]; f];
    let mut sizes = vec![0usize; f];
    for (p, &l) in coords.iter().zip(labels) {
        sizes[l] += 1;
        for a in 0..3 {
            sums[l][a] += p[a];
        }
    }
    (sums, sizes)
}

/// Lloyd iterations from k-means++ seeds, with Hamerly's bounds to skip
/// points whose nearest centroid cannot have changed. Caller guarantees at
/// least `f` distinct finite points.
///
/// With `record_trace` off only the final inertia is computed, which saves a
/// distance per point per iteration.
pub(crate) fn kmeans_coords(
    coords: &[[f64; 3]],
    f: usize,
    seed: u64,
    params: KMeansParams,
    record_trace: bool,
) -> Clustering {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Seeding {
        centres: mut centroids,
        nearest: mut labels,
        d_best: mut upper,
        d_second: mut lower,
    } = plus_plus(coords, f, &mut rng);
    // The seeding already holds the first assignment and its exact bounds.
    upper.iter_mut().for_each(|d| *d = d.sqrt());
    lower.iter_mut().for_each(|d| *d = d.sqrt());
    let mut half_gap = vec![0.0f64; f];
    let mut moved = vec![0.0f64; f];
    let mut max_move = 0.0f64;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut first = true;
    let mut full_pass = false;
    // Set when the loop stops with labels that are exact for the centroids.
    let mut settled = false;

    while iterations < params.max_iter {
        iterations += 1;

        for c in 0..f {
            half_gap[c] = (0..f)
                .filter(|&o| o != c)
                .map(|o| dist2(&centroids[c], &centroids[o]))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
                * 0.5;
        }

        let mut changed = false;
        let mut sums = vec![[0.0f64; 3]; f];
        let mut sizes = vec![0usize; f];
        let mut inertia = 0.0;
        for (((p, label), up), lo) in coords.iter().zip(labels.iter_mut()).zip(upper.iter_mut()).zip(lower.iter_mut()) {
            let mut search = full_pass;
            if !full_pass {
                *up += moved[*label];
                *lo -= max_move;
                let bound = half_gap[*label].max(*lo);
                if *up >= bound {
                    *up = dist2(p, &centroids[*label]).sqrt();
                    search = *up >= bound;
                }
            }
            if search {
                let (best, d_best, d_second) = nearest_two(p, &centroids);
                changed |= !first && best != *label;
                *label = best;
                *up = d_best.sqrt();
                *lo = d_second.sqrt();
            }
            let l = *label;
            sizes[l] += 1;
            for a in 0..3 {
                sums[l][a] += p[a];
            }
            if record_trace {
                inertia += dist2(p, &centroids[l]);
            }
        }

        if sizes.contains(&0) {
            repair_empty(coords, &mut labels, &mut centroids, &mut sizes);
            (sums, sizes) = sums_and_sizes(coords, &labels, f);
            if record_trace {
                inertia = inertia_of(coords, &labels, &centroids);
            }
            changed = true;
            // the jump of a reseeded centroid is not reflected in the bounds
            full_pass = true;
        } else {
            full_pass = false;
        }
        if record_trace {
            trace.push(inertia);
        }

        if !first && !changed {
            settled = true;
            break;
        }
        first = false;

        for c in 0..f {
            let inv = 1.0 / sizes[c] as f64;
            let next = [sums[c][0] * inv, sums[c][1] * inv, sums[c][2] * inv];
            moved[c] = dist2(&centroids[c], &next).sqrt();
            centroids[c] = next;
        }
        max_move = moved.iter().copied().fold(0.0, f64::max);
        if max_move < params.tol {
            break;
        }
    }

    let inertia = if settled && record_trace {
        *trace.last().expect("at least one iteration")
    } else if settled {
        let inertia = inertia_of(coords, &labels, &centroids);
        trace.push(inertia);
        inertia
    } else {
        // Exact assignment against the final centroids.
        let mut sizes = vec![0usize; f];
        for (p, label) in coords.iter().zip(labels.iter_mut()) {
            *label = nearest_two(p, &centroids).0;
            sizes[*label] += 1;
        }
        if sizes.contains(&0) {
            repair_empty(coords, &mut labels, &mut centroids, &mut sizes);
        }
        let inertia = inertia_of(coords, &labels, &centroids);
        trace.push(inertia);
        inertia
    };

    Clustering {
        f,
        labels,
        centroids,
        inertia,
        iterations,
        seed,
        inertia_trace: trace,
    }
}

/// How `b(i)`, the separation term of the silhouette, is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SilhouetteVariant {
    /// Mean distance to the members of the closest other cluster.
    #[default]
    NearestCluster,
    /// Mean distance to every point outside the own cluster.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteRecord {
    pub f: usize,
    /// `s(i)` for every point, each in `[-1, 1]`.
    pub per_point: Vec<f64>,
    /// Arithmetic mean of `per_point`.
    pub mean: f64,
}

/// Per-point silhouette values `s(i) = (b - a) / max(a, b)`.
///
/// A point alone in its cluster scores 0, as does `a = b = 0`.
pub fn silhouette(
    points: &[SpatioTemporalPoint],
    labels: &[usize],
    f: usize,
    variant: SilhouetteVariant,
) -> Result<SilhouetteRecord> {
    if f < 2 {
        return Err(Error::invalid("silhouette needs at least 2 clusters"));
    }
    if labels.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let mut sizes = vec![0usize; f];
    for &l in labels {
        if l >= f {
            return Err(Error::invalid(format!("label {l} outside [0, {f})")));
        }
        sizes[l] += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("cluster {c} is empty")));
    }
    let coords = coords_of(points);
    Ok(silhouette_many(&coords, &[(f, labels)], variant).remove(0))
}

struct Grouping<'a> {
    f: usize,
    labels: &'a [usize],
    sizes: Vec<usize>,
}

impl<'a> Grouping<'a> {
    fn new(f: usize, labels: &'a [usize]) -> Self {
        let mut sizes = vec![0usize; f];
        for &l in labels {
            sizes[l] += 1;
        }
        Grouping { f, labels, sizes }
    }

    fn size(&self, c: usize) -> usize {
        self.sizes[c]
    }
}

/// Overlay of several labelings: points carrying the same label in every
/// labeling share a cell, and a cluster's distance sum is the sum over its
/// cells. Cells are numbered in lexicographic order of their label tuples.
struct Overlay {
    /// Point indices grouped by cell.
    order: Vec<usize>,
    offsets: Vec<usize>,
    /// `cell_labels[g][c]`: label of cell `c` in labeling `g`.
    cell_labels: Vec<Vec<usize>>,
}

impl Overlay {
    fn new(labelings: &[(usize, &[usize])], n: usize) -> Self {
        let key = |i: usize| labelings.iter().map(move |(_, l)| l[i]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(a).cmp(key(b)).then(a.cmp(&b)));
        let mut offsets = vec![0];
        for w in 1..n {
            if key(order[w - 1]).ne(key(order[w])) {
                offsets.push(w);
            }
        }
        if n > 0 {
            offsets.push(n);
        }
        let cell_labels = labelings
            .iter()
            .map(|(_, l)| offsets[..offsets.len() - 1].iter().map(|&o| l[order[o]]).collect())
            .collect();
        Overlay {
            order,
            offsets,
            cell_labels,
        }
    }

    fn cells(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

#[inline]
fn contiguous_sum(row: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = row.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    let mut total = lane_sum(&acc);
    for &v in rest {
        total += v;
    }
    total
}

#[inline]
fn lane_sum(acc: &[f64; 8]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Distances from `(x, y, z)` to a run of points: returns their sum and adds
/// each distance to the matching entry of `cols`.
#[inline]
fn block_row(q: [f64; 3], xs: &[f64], ys: &[f64], zs: &[f64], cols: &mut [f64]) -> f64 {
    let [x, y, z] = q;
    let m = xs.len() / 8 * 8;
    let mut acc = [0.0f64; 8];
    let chunks = xs[..m]
        .chunks_exact(8)
        .zip(ys[..m].chunks_exact(8))
        .zip(zs[..m].chunks_exact(8))
        .zip(cols[..m].chunks_exact_mut(8));
    for (((cx, cy), cz), cc) in chunks {
        for k in 0..8 {
            let (dx, dy, dz) = (cx[k] - x, cy[k] - y, cz[k] - z);
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            acc[k] += d;
            cc[k] += d;
        }
    }
    let mut total = lane_sum(&acc);
    for j in m..xs.len() {
        let (dx, dy, dz) = (xs[j] - x, ys[j] - y, zs[j] - z);
        let d = (dx * dx + dy * dy + dz * dz).sqrt();
        total += d;
        cols[j] += d;
    }
    total
}

/// Largest `points x cells` table filled by the symmetric block pass; beyond
/// it distances are summed one row at a time.
const BLOCK_TABLE_LIMIT: usize = 1 << 24;

/// Distance sums from every point to every cell, for points already in cell
/// order. Row `p` of the result holds point `p`'s sums. Each pair distance is
/// computed once and credited to both endpoints.
fn blocked_cell_sums(xs: &[f64], ys: &[f64], zs: &[f64], offsets: &[usize]) -> Vec<f64> {
    let n = xs.len();
    let cells = offsets.len() - 1;
    let span = |c: usize| offsets[c]..offsets[c + 1];
    // Task `b` handles the blocks `(a, b)` with `a <= b`.
    let parts: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..cells)
        .into_par_iter()
        .map(|b| {
            let rb = span(b);
            let (bx, by, bz) = (&xs[rb.clone()], &ys[rb.clone()], &zs[rb.clone()]);
            (0..=b)
                .map(|a| {
                    let mut cols = vec![0.0f64; rb.len()];
                    let rows = span(a)
                        .map(|p| block_row([xs[p], ys[p], zs[p]], bx, by, bz, &mut cols))
                        .collect();
                    (rows, cols)
                })
                .collect()
        })
        .collect();
    let mut table = vec![0.0f64; n * cells];
    for (b, blocks) in parts.into_iter().enumerate() {
        for (a, (rows, cols)) in blocks.into_iter().enumerate() {
            for (p, v) in span(a).zip(rows) {
                table[p * cells + b] = v;
            }
            if a != b {
                for (p, v) in span(b).zip(cols) {
                    table[p * cells + a] = v;
                }
            }
        }
    }
    table
}

/// Silhouette records for several labelings of the same points, sharing one
/// pass over the pairwise distances.
pub(crate) fn silhouette_many(
    coords: &[[f64; 3]],
    labelings: &[(usize, &[usize])],
    variant: SilhouetteVariant,
) -> Vec<SilhouetteRecord> {
    let n = coords.len();
    let groups: Vec<Grouping> = labelings.iter().map(|&(f, l)| Grouping::new(f, l)).collect();
    let overlay = Overlay::new(labelings, n);
    // Coordinates in cell order, so each cell is a contiguous run.
    let xs: Vec<f64> = overlay.order.iter().map(|&i| coords[i][0]).collect();
    let ys: Vec<f64> = overlay.order.iter().map(|&i| coords[i][1]).collect();
    let zs: Vec<f64> = overlay.order.iter().map(|&i| coords[i][2]).collect();
    let width = groups.len();
    let cells = overlay.cells();

    let finish = |i: usize, cell_sums: &[f64], sums: &mut Vec<f64>, out: &mut [f64]| {
        for ((g, labels), slot) in groups.iter().zip(&overlay.cell_labels).zip(out.iter_mut()) {
            sums.clear();
            sums.resize(g.f, 0.0);
            for (&l, &v) in labels.iter().zip(cell_sums) {
                sums[l] += v;
            }
            *slot = point_silhouette(g, sums, i, variant, n);
        }
    };

    let mut table = vec![0.0f64; n * width];
    if n * cells <= BLOCK_TABLE_LIMIT {
        let cell_table = blocked_cell_sums(&xs, &ys, &zs, &overlay.offsets);
        let mut position = vec![0usize; n];
        for (p, &i) in overlay.order.iter().enumerate() {
            position[i] = p;
        }
        table
            .par_chunks_mut(width.max(1))
            .enumerate()
            .for_each_init(Vec::new, |sums, (i, out)| {
                let p = position[i];
                finish(i, &cell_table[p * cells..(p + 1) * cells], sums, out);
            });
    } else {
        table
            .par_chunks_mut(width.max(1))
            .enumerate()
            .for_each_init(
                || (vec![0.0f64; n], vec![0.0f64; cells], Vec::new()),
                |(row, cell_sums, sums), (i, out)| {
                    let [x, y, z] = coords[i];
                    for (((d, &px), &py), &pz) in row.iter_mut().zip(&xs).zip(&ys).zip(&zs) {
                        let (dx, dy, dz) = (px - x, py - y, pz - z);
                        *d = (dx * dx + dy * dy + dz * dz).sqrt();
                    }
                    for (c, slot) in cell_sums.iter_mut().enumerate() {
                        *slot = contiguous_sum(&row[overlay.offsets[c]..overlay.offsets[c + 1]]);
                    }
                    finish(i, cell_sums, sums, out);
                },
            );
    }

    groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let per_point: Vec<f64> = (0..n).map(|i| table[i * width + gi]).collect();
            let mean = if n == 0 { 0.0 } else { per_point.iter().sum::<f64>() / n as f64 };
            SilhouetteRecord {
                f: g.f,
                per_point,
                mean,
            }
        })
        .collect()
}

fn point_silhouette(g: &Grouping, sums: &[f64], i: usize, variant: SilhouetteVariant, n: usize) -> f64 {
    let own = g.labels[i];
    let own_size = g.size(own);
    if own_size < 2 {
        return 0.0;
    }
    let a = sums[own] / (own_size - 1) as f64;
    let b = match variant {
        SilhouetteVariant::NearestCluster => (0..g.f)
            .filter(|&c| c != own && g.size(c) > 0)
            .map(|c| sums[c] / g.size(c) as f64)
            .fold(f64::INFINITY, f64::min),
        SilhouetteVariant::Pooled => {
            let foreign: f64 = sums.iter().sum::<f64>() - sums[own];
            let count = n - own_size;
            if count == 0 {
                f64::INFINITY
            } else {
                foreign / count as f64
            }
        }
    };
    if !b.is_finite() {
        return 0.0;
    }
    let denom = a.max(b);
    if denom == 0.0 {
        0.0
    } else {
        ((b - a) / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub f_min: usize,
    pub f_max: usize,
    /// k-means runs per `f`; the lowest-inertia run is kept.
    pub restarts: usize,
    pub kmeans: KMeansParams,
    pub variant: SilhouetteVariant,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            f_min: 2,
            f_max: 20,
            restarts: 8,
            kmeans: KMeansParams::default(),
            variant: SilhouetteVariant::NearestCluster,
        }
    }
}

/// Result of sweeping `f`: the silhouette record of every evaluated count and
/// the winning clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub evaluated: BTreeMap<usize, SilhouetteRecord>,
    pub chosen_f: usize,
    /// Silhouette coefficient: the largest mean silhouette over `f`.
    pub sc: f64,
    pub chosen: Clustering,
}

impl Serialize for ModelSelection {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Means<'a>(&'a BTreeMap<usize, SilhouetteRecord>);
        impl Serialize for Means<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for (f, rec) in self.0 {
                    map.serialize_entry(&f.to_string(), &rec.mean)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("evaluated", &Means(&self.evaluated))?;
        map.serialize_entry("chosen_f", &self.chosen_f)?;
        map.serialize_entry("SC", &self.sc)?;
        map.end()
    }
}

/// Pick the cluster count with the highest mean silhouette. Ties go to the
/// smaller count. `f_max` is clamped to `|points| - 1` and to the number of
/// distinct points.
pub fn select_f(points: &[SpatioTemporalPoint], params: SelectionParams, seed: u64) -> Result<ModelSelection> {
    let coords = coords_of(points);
    check_finite(&coords)?;
    if params.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if params.f_min < 2 || params.f_min > params.f_max {
        return Err(Error::invalid(format!(
            "invalid cluster range [{}, {}]",
            params.f_min, params.f_max
        )));
    }
    let f_max = params
        .f_max
        .min(coords.len().saturating_sub(1))
        .min(distinct_count(&coords));
    if f_max < params.f_min {
        return Err(Error::TooFewPoints(format!(
            "{} points cannot support f_min = {}",
            coords.len(),
            params.f_min
        )));
    }

    let runs: Vec<(usize, usize)> = (params.f_min..=f_max)
        .flat_map(|f| (0..params.restarts).map(move |r| (f, r)))
        .collect();
    let fitted: Vec<Clustering> = runs
        .par_iter()
        .map(|&(f, r)| kmeans_coords(&coords, f, derive_seed(seed, &[f as u64, r as u64]), params.kmeans, false))
        .collect();

    let mut best: BTreeMap<usize, Clustering> = BTreeMap::new();
    for ((f, _), run) in runs.iter().zip(fitted) {
        match best.get(f) {
            Some(b) if b.inertia <= run.inertia => {}
            _ => {
                best.insert(*f, run);
            }
        }
    }

    let labelings: Vec<(usize, &[usize])> = best.iter().map(|(&f, c)| (f, c.labels.as_slice())).collect();
    let records = silhouette_many(&coords, &labelings, params.variant);
    let evaluated: BTreeMap<usize, SilhouetteRecord> = records.into_iter().map(|r| (r.f, r)).collect();

    let (chosen_f, sc) = evaluated
        .iter()
        .fold(None, |acc: Option<(usize, f64)>, (&f, r)| match acc {
            Some((_, m)) if m >= r.mean => acc,
            _ => Some((f, r.mean)),
        })
        .expect("at least one cluster count evaluated");
    let chosen = best.remove(&chosen_f).expect("chosen count was fitted");
    Ok(ModelSelection {
        evaluated,
        chosen_f,
        sc,
        chosen,
    })
}

/// Regroup sampled events by cluster label. `indices[i]` is the sample
/// position of the point labelled `labels[i]`; `None` marks noise.
pub fn clusters_from_labels(
    sample: &SampleSet,
    indices: &[usize],
    labels: &[Option<usize>],
) -> Result<Vec<Vec<Event>>> {
    if indices.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} indices but {} labels",
            indices.len(),
            labels.len()
        )));
    }
    let groups = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); groups];
    for (&i, label) in indices.iter().zip(labels) {
        let event = *sample
            .events
            .get(i)
            .ok_or_else(|| Error::invalid(format!("index {i} outside sample of {}", sample.len())))?;
        if let Some(l) = label {
            out[*l].push(event);
        }
    }
    for g in &mut out {
        g.sort_unstable();
    }
    Ok(out)
}
