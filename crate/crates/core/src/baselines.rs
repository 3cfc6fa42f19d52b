//! Comparison clusterers: DBSCAN, flat-kernel mean shift and diagonal
//! Gaussian-mixture EM. They take the same embedded points as k-means.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{coords_of, distinct_count};
use crate::error::{Error, Result};
use crate::kdtree::{dist2, KdTree};
use crate::knn::SpatioTemporalPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftParams {
    pub bandwidth: f64,
    pub max_iter: usize,
    /// Modes closer than this are merged.
    pub merge_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub f: usize,
    pub max_iter: usize,
    /// Stop when the log-likelihood gains less than this.
    pub tol: f64,
    /// Per-axis variance floor.
    pub reg_covar: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub dbscan: DbscanParams,
    pub meanshift: MeanShiftParams,
    pub gmm: GmmParams,
}

impl BaselineConfig {
    /// Data-driven defaults: `eps = 2 m`, `min_pts = 5`, `bandwidth = 4 m`
    /// where `m` is the median nearest-neighbour distance. The GMM component
    /// count is a placeholder; the pipeline fills it from the silhouette sweep.
    pub fn from_points(points: &[SpatioTemporalPoint], seed: u64) -> Self {
        let m = median_nn_distance(points).max(1e-3);
        BaselineConfig {
            dbscan: DbscanParams {
                eps: 2.0 * m,
                min_pts: 5,
            },
            meanshift: MeanShiftParams {
                bandwidth: 4.0 * m,
                max_iter: 300,
                merge_tol: 2.0 * m,
            },
            gmm: GmmParams {
                f: 2,
                max_iter: 200,
                tol: 1e-6,
                reg_covar: 1e-3,
                seed,
            },
        }
    }
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_distance(points: &[SpatioTemporalPoint]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let coords = coords_of(points);
    let tree = KdTree::new(&coords);
    let mut d: Vec<f64> = (0..coords.len())
        .into_par_iter()
        .map(|i| tree.nearest(&coords[i], 1, Some(i))[0].0.sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// DBSCAN. Cluster ids are assigned in discovery order, scanning points in
/// input order; `None` marks noise. A border point joins the first cluster
/// that reaches it.
pub fn dbscan(points: &[SpatioTemporalPoint], params: DbscanParams) -> Result<Vec<Option<usize>>> {
    if !(params.eps > 0.0) || params.min_pts == 0 {
        return Err(Error::invalid("dbscan needs eps > 0 and min_pts >= 1"));
    }
    let coords = coords_of(points);
    let tree = KdTree::new(&coords);
    let eps2 = params.eps * params.eps;
    let neighbours: Vec<Vec<usize>> = (0..coords.len())
        .into_par_iter()
        .map(|i| tree.within(&coords[i], eps2))
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Member(usize),
    }
    let mut state = vec![State::Unvisited; coords.len()];
    let mut next_id = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..coords.len() {
        if state[start] != State::Unvisited {
            continue;
        }
        if neighbours[start].len() < params.min_pts {
            state[start] = State::Noise;
            continue;
        }
        let id = next_id;
        next_id += 1;
        state[start] = State::Member(id);
        queue.extend(neighbours[start].iter().copied());
        while let Some(q) = queue.pop_front() {
            match state[q] {
                State::Member(_) => continue,
                State::Noise => {
                    state[q] = State::Member(id);
                    continue;
                }
                State::Unvisited => {
                    state[q] = State::Member(id);
                    if neighbours[q].len() >= params.min_pts {
                        queue.extend(neighbours[q].iter().copied());
                    }
                }
            }
        }
    }
    Ok(state
        .into_iter()
        .map(|s| match s {
            State::Member(id) => Some(id),
            _ => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult {
    pub labels: Vec<usize>,
    pub modes: Vec<[f64; 3]>,
}

/// Flat-kernel mean shift started from every point.
pub fn mean_shift(points: &[SpatioTemporalPoint], params: MeanShiftParams) -> Result<MeanShiftResult> {
    if !(params.bandwidth > 0.0) || !(params.merge_tol >= 0.0) {
        return Err(Error::invalid("mean shift needs bandwidth > 0 and merge_tol >= 0"));
    }
    let coords = coords_of(points);
    let tree = KdTree::new(&coords);
    let r2 = params.bandwidth * params.bandwidth;
    let stop2 = (1e-4 * params.bandwidth).powi(2);

    let converged: Vec<[f64; 3]> = coords
        .par_iter()
        .map(|start| {
            let mut x = *start;
            for _ in 0..params.max_iter {
                let members = tree.within(&x, r2);
                if members.is_empty() {
                    break;
                }
                let mut next = [0.0; 3];
                for &j in &members {
                    for a in 0..3 {
                        next[a] += coords[j][a];
                    }
                }
                let inv = 1.0 / members.len() as f64;
                next.iter_mut().for_each(|v| *v *= inv);
                let step = dist2(&x, &next);
                x = next;
                if step <= stop2 {
                    break;
                }
            }
            x
        })
        .collect();

    let merge2 = params.merge_tol * params.merge_tol;
    let mut modes: Vec<[f64; 3]> = Vec::new();
    let mut labels = Vec::with_capacity(coords.len());
    for x in &converged {
        match modes.iter().position(|m| dist2(m, x) <= merge2) {
            Some(id) => labels.push(id),
            None => {
                labels.push(modes.len());
                modes.push(*x);
            }
        }
    }
    Ok(MeanShiftResult { labels, modes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmResult {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    /// Diagonal variances per component.
    pub variances: Vec<[f64; 3]>,
    pub log_likelihood: f64,
    /// Log-likelihood after every M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_densities(x: &[f64; 3], weights: &[f64], means: &[[f64; 3]], vars: &[[f64; 3]], out: &mut [f64]) {
    for c in 0..weights.len() {
        if weights[c] <= 0.0 {
            out[c] = f64::NEG_INFINITY;
            continue;
        }
        let mut acc = 3.0 * LN_2PI;
        for a in 0..3 {
            let d = x[a] - means[c][a];
            acc += vars[c][a].ln() + d * d / vars[c][a];
        }
        out[c] = weights[c].ln() - 0.5 * acc;
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM for a mixture of `f` axis-aligned Gaussians, initialised from
/// k-means++ centres. Variances never drop below `reg_covar`.
pub fn gmm_em(points: &[SpatioTemporalPoint], params: GmmParams) -> Result<GmmResult> {
    let coords = coords_of(points);
    let n = coords.len();
    let f = params.f;
    if f == 0 || f > n {
        return Err(Error::invalid(format!("component count must lie in [1, {n}], got {f}")));
    }
    if !(params.reg_covar > 0.0) {
        return Err(Error::invalid("reg_covar must be positive"));
    }
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite point coordinates"));
    }

    // Initial hard assignment to the nearest k-means++ centre.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centres = if distinct_count(&coords) >= f && f >= 2 {
        crate::clustering::plus_plus_centres(&coords, f, &mut rng)
    } else {
        (0..f).map(|c| coords[c * n / f]).collect()
    };
    let mut resp = vec![0.0f64; n * f];
    for (i, p) in coords.iter().enumerate() {
        let best = (0..f)
            .min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b])))
            .unwrap_or(0);
        resp[i * f + best] = 1.0;
    }

    let mut weights = vec![0.0; f];
    let mut means = centres.clone();
    let mut vars = vec![[params.reg_covar; 3]; f];
    let mut trace = Vec::new();
    let mut log_dens = vec![0.0; f];
    let mut iterations = 0;

    loop {
        // M-step
        for c in 0..f {
            let nk: f64 = (0..n).map(|i| resp[i * f + c]).sum();
            weights[c] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            let mut mean = [0.0; 3];
            for (i, p) in coords.iter().enumerate() {
                let r = resp[i * f + c];
                for a in 0..3 {
                    mean[a] += r * p[a];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = [0.0; 3];
            for (i, p) in coords.iter().enumerate() {
                let r = resp[i * f + c];
                for a in 0..3 {
                    let d = p[a] - mean[a];
                    var[a] += r * d * d;
                }
            }
            for a in 0..3 {
                var[a] = (var[a] / nk).max(params.reg_covar);
            }
            means[c] = mean;
            vars[c] = var;
        }

        // E-step, which also yields the log-likelihood of the new parameters.
        let mut ll = 0.0;
        for (i, p) in coords.iter().enumerate() {
            log_densities(p, &weights, &means, &vars, &mut log_dens);
            let total = log_sum_exp(&log_dens);
            ll += total;
            for c in 0..f {
                resp[i * f + c] = (log_dens[c] - total).exp();
            }
        }
        iterations += 1;
        let gain = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if iterations >= params.max_iter || gain.is_some_and(|g| g.abs() < params.tol) {
            break;
        }
    }

    let labels = (0..n)
        .map(|i| {
            (0..f)
                .fold((0, f64::NEG_INFINITY), |(bc, br), c| {
                    let r = resp[i * f + c];
                    if r > br {
                        (c, r)
                    } else {
                        (bc, br)
                    }
                })
                .0
        })
        .collect();
    Ok(GmmResult {
        labels,
        weights,
        means,
        variances: vars,
        log_likelihood: *trace.last().expect("at least one iteration"),
        log_likelihood_trace: trace,
        iterations,
    })
}

/// Responsibilities of every component for every point, row-major.
pub fn gmm_responsibilities(points: &[SpatioTemporalPoint], model: &GmmResult) -> Vec<Vec<f64>> {
    let f = model.weights.len();
    let mut log_dens = vec![0.0; f];
    points
        .iter()
        .map(|p| {
            log_densities(&p.coords, &model.weights, &model.means, &model.variances, &mut log_dens);
            let total = log_sum_exp(&log_dens);
            log_dens.iter().map(|l| (l - total).exp()).collect()
        })
        .collect()
}
