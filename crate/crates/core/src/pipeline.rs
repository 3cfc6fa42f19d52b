//! Per-window detection: sample, embed, build the k-NN graph, denoise,
//! cluster and box.
//!
//! Every window derives its seeds from `(seed, window index)` only, so the
//! result does not depend on how windows are scheduled across threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::clustering::{clusters_from_labels, select_f, ModelSelection, SelectionParams};
use crate::error::{Error, Result};
use crate::eval::{cluster_bbox, Detection, DetectionSet, DetectionWindow, DetectionsFile, FORMAT_VERSION};
use crate::event::{uniform_sample, EventWindow, SampleSet, SensorGeometry};
use crate::knn::{build_knn_graph, denoise, embed, uniform_knn_radius, DenoiseParams, KnnGraph, TimeScale};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Dbscan,
    Meanshift,
    Gmm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kmeans, Method::Dbscan, Method::Meanshift, Method::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Dbscan => "dbscan",
            Method::Meanshift => "meanshift",
            Method::Gmm => "gmm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Time-axis scale: derived from the window or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AlphaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl AlphaSetting {
    pub fn resolve(self, geometry: SensorGeometry, window_duration_us: u64) -> Result<TimeScale> {
        match self {
            AlphaSetting::Auto => Ok(TimeScale::auto(geometry, window_duration_us)),
            AlphaSetting::Fixed(a) => TimeScale::new(a),
        }
    }
}

impl std::str::FromStr for AlphaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(AlphaSetting::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("alpha must be `auto` or a number, got `{s}`")))?;
        TimeScale::new(v)?;
        Ok(AlphaSetting::Fixed(v))
    }
}

impl Serialize for AlphaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaSetting::Auto => s.serialize_str("auto"),
            AlphaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AlphaSetting::Fixed(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Optional overrides of the data-driven baseline defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineOverrides {
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub meanshift_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub method: Method,
    /// Events sampled per window.
    pub sample_size: usize,
    /// k-NN neighbour count.
    pub knn: usize,
    pub alpha: AlphaSetting,
    pub selection: SelectionParams,
    pub denoise: bool,
    /// `None` uses `ceil(k / 4)`, at least 3.
    pub min_component: Option<usize>,
    /// Graph edges longer than this multiple of the uniform-noise k-NN radius
    /// are ignored when finding components.
    pub edge_cutoff_factor: f64,
    pub trim_quantile: f64,
    pub min_events_per_box: usize,
    pub baselines: BaselineOverrides,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            method: Method::Kmeans,
            sample_size: 2000,
            knn: 45,
            alpha: AlphaSetting::Auto,
            selection: SelectionParams::default(),
            denoise: true,
            min_component: None,
            edge_cutoff_factor: 0.2,
            trim_quantile: 0.02,
            min_events_per_box: 5,
            baselines: BaselineOverrides::default(),
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        if self.knn == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.selection.f_min < 2 || self.selection.f_min > self.selection.f_max {
            return Err(Error::invalid(format!(
                "invalid cluster range [{}, {}]",
                self.selection.f_min, self.selection.f_max
            )));
        }
        if self.selection.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if self.min_component == Some(0) {
            return Err(Error::invalid("min component size must be at least 1"));
        }
        if !(self.edge_cutoff_factor > 0.0) {
            return Err(Error::invalid("edge cutoff factor must be positive"));
        }
        if !(0.0..0.5).contains(&self.trim_quantile) {
            return Err(Error::invalid("trim quantile must lie in [0, 0.5)"));
        }
        if let AlphaSetting::Fixed(a) = self.alpha {
            TimeScale::new(a)?;
        }
        Ok(())
    }

    pub fn min_component_size(&self, k: usize) -> usize {
        self.min_component
            .unwrap_or_else(|| DenoiseParams::default_min_component_size(k))
    }
}

/// Everything produced for one window.
#[derive(Debug, Clone)]
pub struct WindowResult {
    pub index: usize,
    pub events_in_window: usize,
    pub sample: SampleSet,
    pub alpha: f64,
    /// Points left after denoising.
    pub kept: usize,
    pub selection: Option<ModelSelection>,
    pub detections: DetectionSet,
    /// Cluster of each sampled event; `None` for events removed as noise.
    pub labels: Vec<Option<usize>>,
    pub skipped: Option<String>,
    pub graph: Option<KnnGraph>,
}

impl WindowResult {
    pub fn chosen_f(&self) -> Option<usize> {
        self.selection.as_ref().map(|s| s.chosen_f)
    }

    /// Number of distinct clusters among the sampled events.
    pub fn cluster_count(&self) -> usize {
        let mut ids: Vec<usize> = self.labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Run the detector on one window.
pub fn detect_window(window: &EventWindow, config: &DetectConfig, keep_graph: bool) -> Result<WindowResult> {
    config.validate()?;
    let window_seed = derive_seed(config.seed, &[window.index as u64]);
    let sample = uniform_sample(window, config.sample_size, derive_seed(window_seed, &[1]))?;
    let scale = config.alpha.resolve(window.geometry, window.duration())?;
    let mut result = WindowResult {
        index: window.index,
        events_in_window: window.len(),
        alpha: scale.alpha(),
        kept: 0,
        selection: None,
        detections: DetectionSet {
            window_index: window.index,
            detections: Vec::new(),
        },
        labels: vec![None; sample.len()],
        skipped: None,
        graph: None,
        sample,
    };

    let n = result.sample.len();
    let needed = config.selection.f_min + 1;
    if n < needed.max(2) {
        result.skipped = Some(format!("{n} sampled events, need at least {}", needed.max(2)));
        return Ok(result);
    }

    let points = embed(&result.sample, scale);
    let k = config.knn.min(n - 1);
    let graph = build_knn_graph(&points, k)?;
    let survivors = if config.denoise {
        let span = (scale.alpha() * window.duration() as f64).max(1.0);
        let volume = window.geometry.width as f64 * window.geometry.height as f64 * span;
        let params = DenoiseParams {
            min_component_size: config.min_component_size(k),
            max_edge_length: Some(config.edge_cutoff_factor * uniform_knn_radius(n, k, volume)),
        };
        denoise(&graph, params)?.points
    } else {
        points
    };
    if keep_graph {
        result.graph = Some(graph);
    }
    result.kept = survivors.len();
    if survivors.len() < needed {
        result.skipped = Some(format!(
            "{} events survive denoising, need at least {needed}",
            survivors.len()
        ));
        return Ok(result);
    }

    let indices: Vec<usize> = survivors.iter().map(|p| p.source_index).collect();
    let cluster_seed = derive_seed(window_seed, &[2]);
    let labels: Vec<Option<usize>> = match config.method {
        Method::Kmeans => {
            let sel = select_f(&survivors, config.selection, cluster_seed)?;
            let labels = sel.chosen.labels.iter().map(|&l| Some(l)).collect();
            result.selection = Some(sel);
            labels
        }
        Method::Gmm => {
            let sel = select_f(&survivors, config.selection, cluster_seed)?;
            let mut params = BaselineConfig::from_points(&survivors, derive_seed(window_seed, &[3])).gmm;
            params.f = sel.chosen_f;
            let fit = baselines::gmm_em(&survivors, params)?;
            result.selection = Some(sel);
            fit.labels.into_iter().map(Some).collect()
        }
        Method::Dbscan => {
            let mut params = BaselineConfig::from_points(&survivors, 0).dbscan;
            if let Some(eps) = config.baselines.dbscan_eps {
                params.eps = eps;
            }
            if let Some(m) = config.baselines.dbscan_min_pts {
                params.min_pts = m;
            }
            baselines::dbscan(&survivors, params)?
        }
        Method::Meanshift => {
            let mut params = BaselineConfig::from_points(&survivors, 0).meanshift;
            if let Some(b) = config.baselines.meanshift_bandwidth {
                params.bandwidth = b;
                params.merge_tol = b / 2.0;
            }
            baselines::mean_shift(&survivors, params)?
                .labels
                .into_iter()
                .map(Some)
                .collect()
        }
    };

    for (&i, l) in indices.iter().zip(&labels) {
        result.labels[i] = *l;
    }
    let groups = clusters_from_labels(&result.sample, &indices, &labels)?;
    for (cluster_id, group) in groups.iter().enumerate() {
        if group.is_empty() || group.len() < config.min_events_per_box {
            continue;
        }
        let bbox = cluster_bbox(group, config.trim_quantile, config.min_events_per_box)?;
        result.detections.detections.push(Detection {
            bbox,
            cluster_id,
            events: group.len(),
        });
    }
    Ok(result)
}

/// Run the detector over every window on a pool of `threads` workers
/// (`None` uses rayon's default). Results come back in window order.
pub fn detect_windows(
    windows: &[EventWindow],
    config: &DetectConfig,
    threads: Option<usize>,
    keep_graph: bool,
) -> Result<Vec<WindowResult>> {
    config.validate()?;
    let run = || -> Result<Vec<WindowResult>> {
        windows
            .par_iter()
            .map(|w| detect_window(w, config, keep_graph))
            .collect()
    };
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

pub fn detections_file(results: &[WindowResult], method: Method, geometry: SensorGeometry) -> DetectionsFile {
    DetectionsFile {
        format_version: FORMAT_VERSION,
        geometry: Some(geometry),
        method: Some(method.name().to_string()),
        windows: results.iter().map(|r| DetectionWindow::from_set(&r.detections)).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SelectionWindow<'a> {
    index: usize,
    #[serde(flatten)]
    selection: Option<&'a ModelSelection>,
}

#[derive(Debug, Clone, Serialize)]
struct SelectionFile<'a> {
    format_version: u32,
    windows: Vec<SelectionWindow<'a>>,
}

/// Per-window silhouette-versus-`f` records.
pub fn selection_json(results: &[WindowResult]) -> serde_json::Value {
    let file = SelectionFile {
        format_version: FORMAT_VERSION,
        windows: results
            .iter()
            .map(|r| SelectionWindow {
                index: r.index,
                selection: r.selection.as_ref(),
            })
            .collect(),
    };
    serde_json::to_value(file).expect("selection records serialize")
}

pub const LABELS_CSV_HEADER: &str = "window,t,x,y,p,label";

/// Sampled events with their cluster labels (`-1` for noise).
pub fn write_labels_csv<W: Write>(results: &[WindowResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LABELS_CSV_HEADER}")?;
    for r in results {
        for (e, l) in r.sample.events.iter().zip(&r.labels) {
            let label = l.map_or(-1, |v| v as i64);
            writeln!(out, "{},{},{},{},{},{label}", r.index, e.t, e.x, e.y, e.p.sign())?;
        }
    }
    Ok(())
}
