//! Event data model: sensor spikes, frame-aligned windows and per-window
//! uniform sampling.
//!
//! Events are exchanged as CSV text with one `t,x,y,p` record per line, `t`
//! in microseconds and `p` in `{-1, 1}`. The canonical serialization has no
//! header, is sorted by `(t, x, y, p)` and uses `\n` line endings.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the brightness change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }
}

/// One sensor spike.
///
/// Field order matters: the derived `Ord` sorts by timestamp, then `(x, y, p)`,
/// which is the canonical ordering inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { t, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    /// DAVIS346 resolution.
    pub const DAVIS346: SensorGeometry = SensorGeometry {
        width: 346,
        height: 260,
    };

    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "sensor geometry must be non-empty, got {width}x{height}"
            )));
        }
        if width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1 {
            return Err(Error::invalid("sensor geometry exceeds 65536 pixels per axis"));
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry::DAVIS346
    }
}

/// Summary of a parse: how many records were read and whether the stream was
/// time-ordered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub events: usize,
    pub had_header: bool,
    /// Number of records whose timestamp is smaller than the previous one.
    pub non_monotonic: usize,
    pub first_non_monotonic_line: Option<usize>,
}

const HEADER: &str = "t,x,y,p";

/// Parse event CSV. Records are returned in file order.
pub fn parse_events<R: BufRead>(
    source: R,
    geometry: SensorGeometry,
) -> Result<(Vec<Event>, ParseReport)> {
    let mut events = Vec::new();
    let mut report = ParseReport::default();
    let mut last_t: Option<u64> = None;
    let mut seen_record = false;

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !seen_record && !report.had_header && line.replace(' ', "") == HEADER {
            report.had_header = true;
            continue;
        }
        seen_record = true;
        let event = parse_record(line, line_no, geometry)?;
        if let Some(prev) = last_t {
            if event.t < prev {
                report.non_monotonic += 1;
                report.first_non_monotonic_line.get_or_insert(line_no);
            }
        }
        last_t = Some(event.t);
        events.push(event);
    }
    report.events = events.len();
    Ok((events, report))
}

fn parse_record(line: &str, line_no: usize, geometry: SensorGeometry) -> Result<Event> {
    let bad = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(bad(format!("expected 4 fields `t,x,y,p`, found {}", fields.len())));
    }
    let t: u64 = fields[0]
        .parse()
        .map_err(|_| bad(format!("invalid timestamp `{}`", fields[0])))?;
    let x: i64 = fields[1]
        .parse()
        .map_err(|_| bad(format!("invalid x `{}`", fields[1])))?;
    let y: i64 = fields[2]
        .parse()
        .map_err(|_| bad(format!("invalid y `{}`", fields[2])))?;
    let p_raw: i64 = fields[3]
        .trim_start_matches('+')
        .parse()
        .map_err(|_| bad(format!("invalid polarity `{}`", fields[3])))?;

    for (axis, value, limit) in [("x", x, geometry.width), ("y", y, geometry.height)] {
        if value < 0 || value >= limit as i64 {
            return Err(Error::OutOfBounds {
                line: line_no,
                axis,
                value,
                width: geometry.width,
                height: geometry.height,
            });
        }
    }
    let p = Polarity::from_sign(p_raw)
        .ok_or_else(|| bad(format!("polarity must be -1 or 1, got {p_raw}")))?;
    Ok(Event::new(x as u16, y as u16, t, p))
}

/// Write events in canonical form.
pub fn write_events<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    let mut sorted = events.to_vec();
    sorted.sort_unstable();
    for e in &sorted {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.sign())?;
    }
    Ok(())
}

pub fn events_to_string(events: &[Event]) -> String {
    let mut buf = Vec::new();
    write_events(events, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("event CSV is ASCII")
}

/// Parse a frame-timestamp file: one microsecond value per line, strictly
/// increasing.
pub fn parse_frame_timestamps<R: BufRead>(source: R) -> Result<Vec<u64>> {
    let mut out: Vec<u64> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t: u64 = line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("invalid frame timestamp `{line}`"),
        })?;
        if let Some(&prev) = out.last() {
            if t <= prev {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("frame timestamps must increase strictly ({prev} then {t})"),
                });
            }
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_frame_timestamps<W: Write>(frames: &[u64], mut out: W) -> std::io::Result<()> {
    for t in frames {
        writeln!(out, "{t}")?;
    }
    Ok(())
}

/// Events between two consecutive frame timestamps, `t_start <= t < t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    /// 1-based window ordinal.
    pub index: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub events: Vec<Event>,
    pub geometry: SensorGeometry,
}

impl EventWindow {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PartitionReport {
    pub total: usize,
    /// Events at or after the last frame timestamp.
    pub dropped: usize,
}

/// Split a stream into the windows `[T_{i-1}, T_i)` with `T_0 = 0`.
///
/// Events at or past the last frame timestamp belong to no window and are
/// only counted.
pub fn partition(
    events: &[Event],
    frame_timestamps: &[u64],
    geometry: SensorGeometry,
) -> Result<(Vec<EventWindow>, PartitionReport)> {
    if frame_timestamps.is_empty() {
        return Err(Error::invalid("no frame timestamps"));
    }
    if frame_timestamps[0] == 0 {
        return Err(Error::invalid("first frame timestamp must be positive"));
    }
    if let Some(w) = frame_timestamps.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "frame timestamps must increase strictly ({} then {})",
            w[0], w[1]
        )));
    }

    let mut windows: Vec<EventWindow> = frame_timestamps
        .iter()
        .enumerate()
        .map(|(i, &t_end)| EventWindow {
            index: i + 1,
            t_start: if i == 0 { 0 } else { frame_timestamps[i - 1] },
            t_end,
            events: Vec::new(),
            geometry,
        })
        .collect();

    let mut dropped = 0;
    for e in events {
        let slot = frame_timestamps.partition_point(|&t| t <= e.t);
        match windows.get_mut(slot) {
            Some(w) => w.events.push(*e),
            None => dropped += 1,
        }
    }
    for w in &mut windows {
        w.events.sort_unstable();
    }
    Ok((
        windows,
        PartitionReport {
            total: events.len(),
            dropped,
        },
    ))
}

/// A uniform random subset of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub window_index: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub geometry: SensorGeometry,
    /// Sampled events in window order (time-sorted).
    pub events: Vec<Event>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Draw `min(size, Q)` distinct events uniformly at random without
/// replacement.
pub fn uniform_sample(window: &EventWindow, size: usize, seed: u64) -> Result<SampleSet> {
    if size == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let events = if size >= window.events.len() {
        window.events.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, window.events.len(), size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| window.events[i]).collect()
    };
    Ok(SampleSet {
        window_index: window.index,
        t_start: window.t_start,
        t_end: window.t_end,
        geometry: window.geometry,
        events,
        seed,
    })
}
