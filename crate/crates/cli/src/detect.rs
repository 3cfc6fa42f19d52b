use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use evmod_core::eval::{evaluate, BoundingBox, DetectionsFile, GroundTruth, COVERAGE_THRESHOLD, FORMAT_VERSION};
use evmod_core::event::{parse_events, parse_frame_timestamps, partition, Event, ParseReport, PartitionReport, SensorGeometry};
use evmod_core::pipeline::{detect_windows, detections_file, selection_json, write_labels_csv, DetectConfig, WindowResult};
use evmod_core::render::{render_window, WindowView};

use crate::files::{self, InputError};
use crate::{geometry, sequence_name, write_metrics, DetectArgs, RenderArgs, UsageError};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Inputs {
    events: PathBuf,
    frames: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<PathBuf>,
}

/// The part of a manifest needed to repeat a run.
#[derive(Debug, Deserialize)]
struct SavedRun {
    inputs: Inputs,
    geometry: SensorGeometry,
    config: DetectConfig,
}

#[derive(Debug, Serialize)]
struct WindowEntry<'a> {
    index: usize,
    events: usize,
    sampled: usize,
    kept: usize,
    alpha: f64,
    chosen_f: Option<usize>,
    detections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format_version: u32,
    inputs: &'a Inputs,
    geometry: SensorGeometry,
    config: &'a DetectConfig,
    parse: &'a ParseReport,
    partition: PartitionReport,
    skipped_windows: Vec<usize>,
    windows: Vec<WindowEntry<'a>>,
}

fn apply_flags(config: &mut DetectConfig, args: &DetectArgs) {
    macro_rules! set {
        ($flag:ident => $($field:tt)+) => {
            if let Some(v) = args.$flag {
                config.$($field)+ = v;
            }
        };
    }
    set!(method => method);
    set!(sample_size => sample_size);
    set!(knn => knn);
    set!(alpha => alpha);
    set!(f_min => selection.f_min);
    set!(f_max => selection.f_max);
    set!(seed => seed);
    set!(restarts => selection.restarts);
    set!(trim_quantile => trim_quantile);
    set!(edge_cutoff => edge_cutoff_factor);
    if args.min_component.is_some() {
        config.min_component = args.min_component;
    }
    if args.no_denoise {
        config.denoise = false;
    }
    if args.dbscan_eps.is_some() {
        config.baselines.dbscan_eps = args.dbscan_eps;
    }
    if args.dbscan_min_pts.is_some() {
        config.baselines.dbscan_min_pts = args.dbscan_min_pts;
    }
    if args.meanshift_bandwidth.is_some() {
        config.baselines.meanshift_bandwidth = args.meanshift_bandwidth;
    }
}

pub fn run(args: DetectArgs, threads: Option<usize>) -> Result<()> {
    let saved: Option<SavedRun> = args.manifest.as_deref().map(files::read_json).transpose()?;
    let (mut inputs, base_geometry, mut config) = match saved {
        Some(s) => (Some(s.inputs), s.geometry, s.config),
        None => (None, SensorGeometry::DAVIS346, DetectConfig::default()),
    };
    let events_path = args.events.clone().or_else(|| inputs.as_ref().map(|i| i.events.clone()));
    let frames_path = args.frames.clone().or_else(|| inputs.as_ref().map(|i| i.frames.clone()));
    let (Some(events_path), Some(frames_path)) = (events_path, frames_path) else {
        return Err(UsageError("--events and --frames are required without --manifest".into()).into());
    };
    let truth_path = args.truth.clone().or_else(|| inputs.take().and_then(|i| i.truth));
    let inputs = Inputs {
        events: events_path,
        frames: frames_path,
        truth: truth_path,
    };
    let geometry = geometry(args.width, args.height, base_geometry)?;
    apply_flags(&mut config, &args);
    config.validate()?;

    let (events, parse_report) = parse_events(files::open(&inputs.events)?, geometry)
        .map_err(|e| InputError(format!("{}: {e}", inputs.events.display())))?;
    let frames = parse_frame_timestamps(files::open(&inputs.frames)?)
        .map_err(|e| InputError(format!("{}: {e}", inputs.frames.display())))?;
    if parse_report.non_monotonic > 0 {
        log::warn!(
            "{} events out of time order (first at line {})",
            parse_report.non_monotonic,
            parse_report.first_non_monotonic_line.unwrap_or(0)
        );
    }
    let (windows, partition_report) = partition(&events, &frames, geometry)?;
    if partition_report.dropped > 0 {
        log::warn!("{} events after the last frame dropped", partition_report.dropped);
    }
    let truth: Option<GroundTruth> = inputs.truth.as_deref().map(files::read_json).transpose()?;

    let results = detect_windows(&windows, &config, threads, args.dump_graph)?;
    for r in &results {
        if let Some(reason) = &r.skipped {
            log::warn!("window {} skipped: {reason}", r.index);
        }
    }

    let dir = files::ensure_dir(&args.out)?;
    let detections = detections_file(&results, config.method, geometry);
    files::write_json(&dir.join("detections.json"), &detections)?;
    files::write_json(&dir.join("selection.json"), &selection_json(&results))?;
    let mut out = files::create(&dir.join("labels.csv"))?;
    write_labels_csv(&results, &mut out)?;
    out.flush()?;
    files::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            format_version: FORMAT_VERSION,
            inputs: &inputs,
            geometry,
            config: &config,
            parse: &parse_report,
            partition: partition_report,
            skipped_windows: results.iter().filter(|r| r.skipped.is_some()).map(|r| r.index).collect(),
            windows: results.iter().map(window_entry).collect(),
        },
    )?;

    if args.dump_graph {
        let graphs = files::ensure_dir(&dir.join("graphs"))?;
        for r in &results {
            let Some(g) = &r.graph else { continue };
            let mut out = files::create(&files::window_file(&graphs, r.index, "edges"))?;
            g.write_edge_list(&mut out)?;
            out.flush()?;
            let mut out = files::create(&graphs.join(format!("window_{:04}.nodes.csv", r.index)))?;
            g.write_nodes_csv(&mut out)?;
            out.flush()?;
        }
    }

    if args.render {
        let images = files::ensure_dir(&dir.join("render"))?;
        for r in &results {
            let boxes: Vec<(BoundingBox, usize)> = r.detections.detections.iter().map(|d| (d.bbox, d.cluster_id)).collect();
            let truth_boxes = truth_boxes(truth.as_ref(), r.index);
            let view = WindowView {
                geometry,
                events: &r.sample.events,
                labels: &r.labels,
                detections: &boxes,
                truth: &truth_boxes,
            };
            write_ppm(&files::window_file(&images, r.index, "ppm"), &view)?;
        }
    }

    if let (Some(truth), Some(path)) = (&truth, &inputs.truth) {
        let threshold = args.threshold.unwrap_or(COVERAGE_THRESHOLD);
        let report = evaluate(&detections, truth, threshold)?;
        let sequence = sequence_name(args.sequence.clone(), path);
        write_metrics(&dir, &sequence, config.method.name(), threshold, &report)?;
        println!(
            "P={:.4} R={:.4} F={:.4}",
            report.precision, report.recall, report.f_measure
        );
    }
    Ok(())
}

fn window_entry(r: &WindowResult) -> WindowEntry<'_> {
    WindowEntry {
        index: r.index,
        events: r.events_in_window,
        sampled: r.sample.len(),
        kept: r.kept,
        alpha: r.alpha,
        chosen_f: r.chosen_f(),
        detections: r.detections.detections.len(),
        skipped: r.skipped.as_deref(),
    }
}

fn truth_boxes(truth: Option<&GroundTruth>, index: usize) -> Vec<BoundingBox> {
    truth
        .and_then(|t| t.window(index))
        .map(|w| w.boxes.clone())
        .unwrap_or_default()
}

fn write_ppm(path: &Path, view: &WindowView) -> Result<()> {
    let mut out = files::create(path)?;
    render_window(view).write_ppm(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn render(args: RenderArgs) -> Result<()> {
    let detections: DetectionsFile = files::read_json(&args.detections)?;
    let truth: Option<GroundTruth> = args.truth.as_deref().map(files::read_json).transpose()?;
    let geometry = geometry(
        args.width,
        args.height,
        detections.geometry.unwrap_or(SensorGeometry::DAVIS346),
    )?;
    let mut by_window: BTreeMap<usize, (Vec<Event>, Vec<Option<usize>>)> = BTreeMap::new();
    for row in files::read_labels(&args.labels)? {
        let entry = by_window.entry(row.window).or_default();
        entry.0.push(row.event);
        entry.1.push(row.label);
    }
    let dir = files::ensure_dir(&args.out)?;
    let empty = (Vec::new(), Vec::new());
    for w in &detections.windows {
        let (events, labels) = by_window.get(&w.index).unwrap_or(&empty);
        let boxes: Vec<(BoundingBox, usize)> = w
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, w.cluster_ids.get(i).copied().unwrap_or(i)))
            .collect();
        let truth_boxes = truth_boxes(truth.as_ref(), w.index);
        let view = WindowView {
            geometry,
            events,
            labels,
            detections: &boxes,
            truth: &truth_boxes,
        };
        write_ppm(&files::window_file(&dir, w.index, "ppm"), &view)?;
    }
    Ok(())
}
