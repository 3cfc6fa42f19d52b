//! Synthetic event scenes with exact ground truth.
//!
//! Objects move linearly. Events fire only on an object's boundary pixels
//! whose outward normal has a component along the motion: positive polarity
//! on the leading side, negative on the trailing side. Time advances in
//! micro-steps short enough that no object moves more than one pixel per
//! step, and each event's timestamp is jittered uniformly inside its step.
//! Background noise is uniform in space and time. A window's ground-truth
//! box is the pixel extent of the object's footprint over the steps inside
//! that window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BoundingBox, GroundTruth, TruthWindow};
use crate::event::{Event, Polarity, SensorGeometry};

pub const DEFAULT_FRAME_PERIOD_US: u64 = 33_333;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Width and height in pixels; a disk uses `size[0]` as its diameter.
    pub size: [f64; 2],
    /// Top-left corner of the object's extent at `t = 0`.
    pub start: [f64; 2],
    /// Pixels per second.
    pub velocity: [f64; 2],
}

impl ObjectSpec {
    fn extent_size(&self) -> [f64; 2] {
        match self.shape {
            Shape::Rectangle => self.size,
            Shape::Disk => [self.size[0], self.size[0]],
        }
    }

    /// Top-left corner at time `t` (microseconds).
    pub fn corner_at(&self, t_us: f64) -> [f64; 2] {
        let s = t_us / 1e6;
        [self.start[0] + self.velocity[0] * s, self.start[1] + self.velocity[1] * s]
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// Pixel box covered by the object over `[t0, t1]`.
    pub fn swept_box(&self, t0_us: f64, t1_us: f64) -> BoundingBox {
        let a = self.corner_at(t0_us);
        let b = self.corner_at(t1_us);
        let [w, h] = self.extent_size();
        BoundingBox {
            x_min: a[0].min(b[0]).floor() as i64,
            y_min: a[1].min(b[1]).floor() as i64,
            x_max: (a[0].max(b[0]) + w).ceil() as i64,
            y_max: (a[1].max(b[1]) + h).ceil() as i64,
        }
    }

    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Rectangle => self.size[0] * self.size[1],
            Shape::Disk => std::f64::consts::PI * (self.size[0] / 2.0).powi(2),
        }
    }

    /// Boundary pixels at a corner position with their outward unit normals.
    fn boundary(&self, corner: [f64; 2]) -> Vec<(i64, i64, [f64; 2])> {
        let [w, h] = self.extent_size();
        let x0 = corner[0].floor() as i64;
        let y0 = corner[1].floor() as i64;
        let x1 = (corner[0] + w).ceil() as i64 - 1;
        let y1 = (corner[1] + h).ceil() as i64 - 1;
        let mut out = Vec::new();
        match self.shape {
            Shape::Rectangle => {
                for y in y0..=y1 {
                    out.push((x0, y, [-1.0, 0.0]));
                    out.push((x1, y, [1.0, 0.0]));
                }
                for x in x0..=x1 {
                    out.push((x, y0, [0.0, -1.0]));
                    out.push((x, y1, [0.0, 1.0]));
                }
            }
            Shape::Disk => {
                let r = w / 2.0;
                let (cx, cy) = (corner[0] + r, corner[1] + r);
                let inside = |x: i64, y: i64| {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    dx * dx + dy * dy <= r * r
                };
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if !inside(x, y) {
                            continue;
                        }
                        if inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1) {
                            continue;
                        }
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        let norm = dx.hypot(dy);
                        if norm > 0.0 {
                            out.push((x, y, [dx / norm, dy / norm]));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub duration_us: u64,
    pub frame_period_us: u64,
    pub objects: Vec<ObjectSpec>,
    /// Background events per second over the whole sensor.
    pub noise_rate: f64,
    /// Events per boundary pixel per frame for a pixel whose normal is
    /// parallel to the motion.
    pub events_per_edge_pixel_per_frame: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration_us / self.frame_period_us.max(1)) as usize
    }

    pub fn frame_timestamps(&self) -> Vec<u64> {
        (1..=self.frame_count() as u64).map(|i| i * self.frame_period_us).collect()
    }

    pub fn validate(&self) -> Result<()> {
        SensorGeometry::new(self.geometry.width, self.geometry.height)
            .map_err(|e| Error::InvalidScene(e.to_string()))?;
        if self.frame_period_us == 0 {
            return Err(Error::InvalidScene("frame period must be positive".into()));
        }
        if self.frame_count() == 0 {
            return Err(Error::InvalidScene("duration shorter than one frame".into()));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::InvalidScene("noise rate must be a non-negative number".into()));
        }
        if !(self.events_per_edge_pixel_per_frame >= 0.0 && self.events_per_edge_pixel_per_frame.is_finite()) {
            return Err(Error::InvalidScene("emission density must be a non-negative number".into()));
        }
        if self.objects.is_empty() && self.noise_rate == 0.0 {
            return Err(Error::InvalidScene("scene has neither objects nor noise".into()));
        }
        let end = (self.frame_count() as u64 * self.frame_period_us) as f64;
        for (i, o) in self.objects.iter().enumerate() {
            let finite = o.size.iter().chain(&o.start).chain(&o.velocity).all(|v| v.is_finite());
            if !finite || o.size[0] <= 0.0 || o.size[1] <= 0.0 {
                return Err(Error::InvalidScene(format!("object {i} has an invalid size or motion")));
            }
            if o.shape == Shape::Disk && o.size[0] != o.size[1] {
                return Err(Error::InvalidScene(format!("disk {i} must have equal width and height")));
            }
            let swept = o.swept_box(0.0, end);
            if !swept.within(self.geometry) {
                return Err(Error::InvalidScene(format!(
                    "object {i} leaves the {}x{} sensor (extent {:?})",
                    self.geometry.width,
                    self.geometry.height,
                    swept.to_array()
                )));
            }
        }
        Ok(())
    }
}

/// Generated stream plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Canonically sorted events.
    pub events: Vec<Event>,
    /// Emitting object of each event; `None` for noise.
    pub origins: Vec<Option<usize>>,
    pub frames: Vec<u64>,
    pub truth: GroundTruth,
}

impl Scene {
    pub fn noise_events(&self) -> usize {
        self.origins.iter().filter(|o| o.is_none()).count()
    }

    pub fn object_events(&self) -> usize {
        self.events.len() - self.noise_events()
    }
}

fn draw_count(rng: &mut ChaCha8Rng, expected: f64) -> usize {
    let whole = expected.floor();
    whole as usize + usize::from(rng.gen::<f64>() < expected - whole)
}

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = spec.frame_timestamps();
    let period = spec.frame_period_us;
    let max_speed = spec.objects.iter().map(ObjectSpec::speed).fold(0.0, f64::max);
    let steps = ((period as f64 * max_speed / 1e6).ceil() as u64).clamp(1, period);
    let (w, h) = (spec.geometry.width, spec.geometry.height);

    let mut tagged: Vec<(Event, Option<usize>)> = Vec::new();
    let noise_per_frame = spec.noise_rate * period as f64 / 1e6;
    let mut truth_windows = Vec::with_capacity(frames.len());

    for (fi, &frame_end) in frames.iter().enumerate() {
        let frame_start = frame_end - period;
        // Pixel extent of each object's footprint over the window's steps.
        let mut extents = vec![[i64::MAX, i64::MAX, i64::MIN, i64::MIN]; spec.objects.len()];
        for s in 0..steps {
            let t0 = frame_start + s * period / steps;
            let t1 = frame_start + (s + 1) * period / steps;
            for (oi, o) in spec.objects.iter().enumerate() {
                let boundary = o.boundary(o.corner_at(t0 as f64));
                let ext = &mut extents[oi];
                for &(x, y, _) in &boundary {
                    *ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x + 1), ext[3].max(y + 1)];
                }
                let speed = o.speed();
                if speed == 0.0 {
                    continue;
                }
                let dir = [o.velocity[0] / speed, o.velocity[1] / speed];
                for (x, y, n) in boundary {
                    let along = n[0] * dir[0] + n[1] * dir[1];
                    if along.abs() < 1e-9 {
                        continue;
                    }
                    let count = draw_count(&mut rng, spec.events_per_edge_pixel_per_frame * along.abs() / steps as f64);
                    let p = if along > 0.0 { Polarity::On } else { Polarity::Off };
                    for _ in 0..count {
                        let t = rng.gen_range(t0..t1);
                        tagged.push((Event::new(x as u16, y as u16, t, p), Some(oi)));
                    }
                }
            }
        }
        for _ in 0..draw_count(&mut rng, noise_per_frame) {
            let t = rng.gen_range(frame_start..frame_end);
            let x = rng.gen_range(0..w) as u16;
            let y = rng.gen_range(0..h) as u16;
            let p = if rng.gen::<bool>() { Polarity::On } else { Polarity::Off };
            tagged.push((Event::new(x, y, t, p), None));
        }
        let boxes = extents
            .into_iter()
            .map(|[a, b, c, d]| BoundingBox::new(a, b, c, d))
            .collect::<Result<Vec<_>>>()?;
        truth_windows.push(TruthWindow { index: fi + 1, boxes });
    }
    tagged.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let truth = GroundTruth::new(truth_windows);
    let (events, origins) = tagged.into_iter().unzip();
    Ok(Scene {
        events,
        origins,
        frames,
        truth,
    })
}

pub const PRESETS: [&str; 4] = ["clean-2", "clean-4", "noisy", "size-disparity"];

/// True number of moving objects in a preset.
pub fn preset_object_count(name: &str) -> Option<usize> {
    preset(name).ok().map(|s| s.objects.len())
}

fn rect(size: f64, start: [f64; 2], velocity: [f64; 2]) -> ObjectSpec {
    ObjectSpec {
        shape: Shape::Rectangle,
        size: [size, size],
        start,
        velocity,
    }
}

fn disk(size: f64, start: [f64; 2], velocity: [f64; 2]) -> ObjectSpec {
    ObjectSpec {
        shape: Shape::Disk,
        size: [size, size],
        start,
        velocity,
    }
}

/// Regression scenes: two or four similar objects without noise, two objects
/// under heavy background noise, and one object five times the linear size of
/// the other.
pub fn preset(name: &str) -> Result<SceneSpec> {
    let base = SceneSpec {
        geometry: SensorGeometry::DAVIS346,
        duration_us: 10 * DEFAULT_FRAME_PERIOD_US,
        frame_period_us: DEFAULT_FRAME_PERIOD_US,
        objects: vec![],
        noise_rate: 0.0,
        events_per_edge_pixel_per_frame: 8.0,
        seed: 1,
    };
    let two = vec![
        rect(32.0, [60.0, 60.0], [120.0, 60.0]),
        rect(32.0, [220.0, 150.0], [-100.0, -50.0]),
    ];
    let spec = match name {
        "clean-2" => SceneSpec { objects: two, ..base },
        "clean-4" => SceneSpec {
            objects: vec![
                rect(30.0, [40.0, 30.0], [90.0, 40.0]),
                rect(30.0, [250.0, 40.0], [-80.0, 50.0]),
                disk(30.0, [50.0, 170.0], [100.0, -30.0]),
                disk(30.0, [240.0, 180.0], [-90.0, -40.0]),
            ],
            ..base
        },
        "noisy" => SceneSpec {
            objects: two,
            noise_rate: 60_000.0,
            ..base
        },
        "size-disparity" => SceneSpec {
            objects: vec![
                rect(180.0, [20.0, 30.0], [60.0, 30.0]),
                rect(36.0, [270.0, 180.0], [-60.0, -30.0]),
            ],
            ..base
        },
        other => {
            return Err(Error::InvalidScene(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(spec)
}
