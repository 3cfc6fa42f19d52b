//! Binary PPM (P6) rendering of a window: events coloured by cluster, noise
//! in gray, detection boxes solid and ground-truth boxes dashed.

use std::io::Write;

use crate::eval::BoundingBox;
use crate::event::{Event, SensorGeometry};

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [0, 0, 0];
pub const NOISE: Rgb = [110, 110, 110];
pub const TRUTH: Rgb = [255, 255, 255];

pub const PALETTE: [Rgb; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// Colour for cluster `id`, cycling through the palette.
pub fn cluster_color(id: usize) -> Rgb {
    PALETTE[id % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(geometry: SensorGeometry) -> Self {
        let (width, height) = (geometry.width as usize, geometry.height as usize);
        Canvas {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    /// Outline the pixels on the border of `b`. With `dash`, every other
    /// run of `dash` pixels is left out.
    pub fn outline(&mut self, b: &BoundingBox, color: Rgb, dash: Option<usize>) {
        let (x0, y0, x1, y1) = (b.x_min, b.y_min, b.x_max - 1, b.y_max - 1);
        let mut border = Vec::new();
        for x in x0..=x1 {
            border.push((x, y0));
        }
        for y in y0 + 1..=y1 {
            border.push((x1, y));
        }
        if y1 > y0 {
            for x in (x0..x1).rev() {
                border.push((x, y1));
            }
        }
        if x1 > x0 {
            for y in (y0 + 1..y1).rev() {
                border.push((x0, y));
            }
        }
        for (i, (x, y)) in border.into_iter().enumerate() {
            if dash.is_none_or(|d| (i / d.max(1)) % 2 == 0) {
                self.set(x, y, color);
            }
        }
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        out.write_all(&bytes)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() * 3 + 20);
        self.write_ppm(&mut buf).expect("writing to memory");
        buf
    }
}

/// What to draw for one window.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    pub geometry: SensorGeometry,
    pub events: &'a [Event],
    /// Cluster per event, `None` for noise. Must match `events` in length.
    pub labels: &'a [Option<usize>],
    /// Detection boxes with the cluster they came from.
    pub detections: &'a [(BoundingBox, usize)],
    pub truth: &'a [BoundingBox],
}

pub const TRUTH_DASH: usize = 3;

pub fn render_window(view: &WindowView) -> Canvas {
    let mut canvas = Canvas::new(view.geometry);
    for (e, l) in view.events.iter().zip(view.labels) {
        let color = l.map_or(NOISE, cluster_color);
        canvas.set(e.x as i64, e.y as i64, color);
    }
    for b in view.truth {
        canvas.outline(b, TRUTH, Some(TRUTH_DASH));
    }
    for (b, id) in view.detections {
        canvas.outline(b, cluster_color(*id), None);
    }
    canvas
}
