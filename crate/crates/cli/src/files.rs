use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use evmod_core::event::{Event, Polarity};

/// Marks failures caused by the user's input files rather than by the run.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())).into())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| InputError(format!("{}: {e}", path.display())).into())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn window_file(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("window_{index:04}.{ext}"))
}

/// Rows of a labels CSV, grouped later by window.
#[derive(Debug, Clone, Copy)]
pub struct LabelRow {
    pub window: usize,
    pub event: Event,
    pub label: Option<usize>,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let bad = |line: usize, msg: &str| InputError(format!("{}:{line}: {msg}", path.display()));
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("window")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, "expected window,t,x,y,p,label").into());
        }
        let num = |s: &str| s.trim().parse::<i64>().map_err(|_| bad(i + 1, "not an integer"));
        let (window, t, x, y, p, label) = (
            num(fields[0])?,
            num(fields[1])?,
            num(fields[2])?,
            num(fields[3])?,
            num(fields[4])?,
            num(fields[5])?,
        );
        let p = Polarity::from_sign(p).ok_or_else(|| bad(i + 1, "polarity must be 1 or -1"))?;
        if window < 0 || t < 0 || !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(bad(i + 1, "negative or oversized field").into());
        }
        rows.push(LabelRow {
            window: window as usize,
            event: Event::new(x as u16, y as u16, t as u64, p),
            label: usize::try_from(label).ok(),
        });
    }
    Ok(rows)
}
