use std::io::Write;

use anyhow::Result;

use evmod_core::eval::{evaluate, metrics, write_metrics_row, METRICS_CSV_HEADER};
use evmod_core::event::partition;
use evmod_core::pipeline::{detect_windows, detections_file, DetectConfig, Method};
use evmod_core::synth::{generate, preset, PRESETS};

use crate::files;
use crate::BenchArgs;

pub const STATEMENT: &str = "\
Scores published for the DVSMOTION20 sequences cannot be reproduced with this tool. \
Their ground-truth boxes were drawn by hand and never released, and the hyperparameters \
of the DBSCAN, MeanShift and GMM baselines were not published either. The synthetic \
presets stand in as the quantitative gate: model selection must recover the object count \
on the clean presets with P = R = 1, and the noisy and size-disparity presets must show \
their known failure modes.";

/// Every method on every preset, pooled over scene seeds `1..=seeds`.
pub fn run(args: BenchArgs, threads: Option<usize>) -> Result<()> {
    println!("{STATEMENT}\n");
    let dir = files::ensure_dir(&args.out)?;
    let path = dir.join("bench.csv");
    let mut out = files::create(&path)?;
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for name in PRESETS {
        let mut scenes = Vec::new();
        for seed in 1..=args.seeds.max(1) {
            let mut spec = preset(name)?;
            spec.seed = seed;
            scenes.push((spec.clone(), generate(&spec)?));
        }
        for method in Method::ALL {
            let mut per_window = Vec::new();
            for (spec, scene) in &scenes {
                let (windows, _) = partition(&scene.events, &scene.frames, spec.geometry)?;
                let mut config = DetectConfig {
                    method,
                    seed: spec.seed,
                    ..DetectConfig::default()
                };
                if let Some(s) = args.sample_size {
                    config.sample_size = s;
                }
                if let Some(k) = args.knn {
                    config.knn = k;
                }
                let results = detect_windows(&windows, &config, threads, false)?;
                let detections = detections_file(&results, method, spec.geometry);
                per_window.extend(evaluate(&detections, &scene.truth, args.threshold)?.per_window);
            }
            let report = metrics(&per_window);
            write_metrics_row(&mut out, name, method.name(), &report)?;
            println!(
                "{name:<15} {:<10} P={:.3} R={:.3} F={:.3}",
                method.name(),
                report.precision,
                report.recall,
                report.f_measure
            );
        }
    }
    out.flush()?;
    println!("\nwrote {}", path.display());
    Ok(())
}
