//! Tool length measurement from images.
//!
//! Both ends of the tool carry a bright orange marker. Each image is
//! converted to HSV, masked to the orange window, labelled into connected
//! components, and the two largest components give the marker positions.
//! Three views are averaged into one calibrated length.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VisionError {
    #[error("not a binary PPM (expected magic P6)")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    BadHeader(String),
    #[error("PPM pixel data truncated: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("unsupported PPM maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("found {0} marker(s), need at least two")]
    FewerThanTwoMarkers(usize),
    #[error("expected exactly 3 measurements, got {0}")]
    WrongCount(usize),
    #[error("measured length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("meters per pixel must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("markers overlap")]
    OverlappingMarkers,
    #[error("marker outside the image")]
    OutOfBounds,
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Result<Self, VisionError> {
        if width == 0 || height == 0 {
            return Err(VisionError::EmptyImage);
        }
        Ok(Self { width, height, pixels: vec![fill; width * height] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, VisionError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(VisionError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| VisionError::BadHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary (P6, maxval 255) PPM.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image, VisionError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(VisionError::BadMagic);
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if !r.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(VisionError::BadMagic);
    }
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(VisionError::BadHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(VisionError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(VisionError::BadHeader("missing separator after maxval".into())),
    }
    let data = &bytes[r.pos..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| VisionError::BadHeader("dimensions overflow".into()))?;
    if data.len() < expected {
        return Err(VisionError::TruncatedData { expected, found: data.len() });
    }
    let pixels = data[..expected].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Image { width, height, pixels })
}

/// Canonical P6 encoding: `P6\n<w> <h>\n255\n` followed by the raster.
pub fn write_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for p in &image.pixels {
        out.extend_from_slice(p);
    }
    out
}

/// Hexcone RGB → HSV. Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    (if h >= 360.0 { h - 360.0 } else { h }, s, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvThresholds {
    /// Hue window in degrees; `hue_lo > hue_hi` wraps through 0°.
    pub hue_lo: f64,
    pub hue_hi: f64,
    pub sat_min: f64,
    pub val_min: f64,
}

impl Default for HsvThresholds {
    fn default() -> Self {
        Self { hue_lo: 5.0, hue_hi: 45.0, sat_min: 0.5, val_min: 0.4 }
    }
}

impl HsvThresholds {
    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |m: &str| Err(VisionError::InvalidThresholds(m.into()));
        if !(0.0..360.0).contains(&self.hue_lo) || !(0.0..360.0).contains(&self.hue_hi) {
            return bad("hue bounds must lie in [0, 360)");
        }
        if !(0.0..=1.0).contains(&self.sat_min) || !(0.0..=1.0).contains(&self.val_min) {
            return bad("sat_min and val_min must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn accepts(&self, h: f64, s: f64, v: f64) -> bool {
        let hue_ok = if self.hue_lo <= self.hue_hi {
            h >= self.hue_lo && h <= self.hue_hi
        } else {
            h >= self.hue_lo || h <= self.hue_hi
        };
        hue_ok && s >= self.sat_min && v >= self.val_min
    }
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn mask(image: &Image, thresholds: &HsvThresholds) -> Mask {
    let bits = image
        .pixels
        .iter()
        .map(|&[r, g, b]| {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            thresholds.accepts(h, s, v)
        })
        .collect();
    Mask { width: image.width, height: image.height, bits }
}

/// Bounding box and statistics of one 4-connected component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    pub area: usize,
    /// Mean of pixel centers (`index + 0.5`).
    pub centroid: (f64, f64),
}

/// 4-connected components with at least `min_area` pixels, largest first.
pub fn connected_components(mask: &Mask, min_area: usize) -> Vec<ComponentBox> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x_min, mut y_min, mut x_max, mut y_max) = (usize::MAX, usize::MAX, 0, 0);
        let (mut area, mut sx, mut sy) = (0usize, 0.0f64, 0.0f64);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            area += 1;
            sx += x as f64;
            sy += y as f64;
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
            let mut visit = |n: usize| {
                if mask.bits[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < w {
                visit(idx + 1);
            }
            if y > 0 {
                visit(idx - w);
            }
            if y + 1 < h {
                visit(idx + w);
            }
        }
        if area >= min_area {
            let n = area as f64;
            out.push(ComponentBox {
                x_min,
                y_min,
                x_max,
                y_max,
                area,
                centroid: (sx / n + 0.5, sy / n + 0.5),
            });
        }
    }
    // Stable: equal areas keep scan order.
    out.sort_by(|a, b| b.area.cmp(&a.area));
    out
}

/// How the distance between the two marker boxes is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Centroid to centroid.
    #[default]
    Centroid,
    /// Outer edge to outer edge along the line joining the centroids.
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSettings {
    pub thresholds: HsvThresholds,
    pub min_area: usize,
    pub edge_mode: EdgeMode,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        Self { thresholds: HsvThresholds::default(), min_area: 25, edge_mode: EdgeMode::Centroid }
    }
}

// Distance from the centroid to the box boundary along `dir` (unit vector).
fn support(b: &ComponentBox, dir: (f64, f64)) -> f64 {
    let xs = [b.x_min as f64, (b.x_max + 1) as f64];
    let ys = [b.y_min as f64, (b.y_max + 1) as f64];
    let mut best = f64::NEG_INFINITY;
    for x in xs {
        for y in ys {
            best = best.max((x - b.centroid.0) * dir.0 + (y - b.centroid.1) * dir.1);
        }
    }
    best
}

/// Pixel distance between the two largest marker components.
pub fn measure_pixels(image: &Image, settings: &DetectionSettings) -> Result<f64, VisionError> {
    settings.thresholds.validate()?;
    let boxes = connected_components(&mask(image, &settings.thresholds), settings.min_area);
    if boxes.len() < 2 {
        return Err(VisionError::FewerThanTwoMarkers(boxes.len()));
    }
    let (a, b) = (&boxes[0], &boxes[1]);
    let (dx, dy) = (b.centroid.0 - a.centroid.0, b.centroid.1 - a.centroid.1);
    let d = dx.hypot(dy);
    Ok(match settings.edge_mode {
        EdgeMode::Centroid => d,
        EdgeMode::Outer if d > 0.0 => {
            let u = (dx / d, dy / d);
            d + support(a, (-u.0, -u.1)) + support(b, u)
        }
        EdgeMode::Outer => d,
    })
}

/// Tool length in meters seen in one image.
pub fn measure_length(
    image: &Image,
    settings: &DetectionSettings,
    meters_per_pixel: f64,
) -> Result<f64, VisionError> {
    if !(meters_per_pixel > 0.0) {
        return Err(VisionError::NonPositiveScale(meters_per_pixel));
    }
    Ok(measure_pixels(image, settings)? * meters_per_pixel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedMeasurement {
    pub length: f64,
    pub per_image_lengths: [f64; 3],
}

/// Mean of exactly three per-view lengths.
pub fn average_length(measurements: &[f64]) -> Result<CalibratedMeasurement, VisionError> {
    let per_image_lengths: [f64; 3] =
        measurements.try_into().map_err(|_| VisionError::WrongCount(measurements.len()))?;
    if let Some(&bad) = per_image_lengths.iter().find(|l| !(**l > 0.0)) {
        return Err(VisionError::NonPositiveLength(bad));
    }
    let length = per_image_lengths.iter().sum::<f64>() / 3.0;
    Ok(CalibratedMeasurement { length, per_image_lengths })
}

/// Color painted on synthetic markers: hue ≈ 32.9°, full saturation and value.
pub const MARKER_ORANGE: [u8; 3] = [255, 140, 0];

/// Axis-aligned rectangular marker, in pixels. `center` uses the pixel-center
/// convention of [`ComponentBox::centroid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerSpec {
    pub center: (f64, f64),
    pub size: (f64, f64),
}

impl MarkerSpec {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { center: (cx, cy), size: (w, h) }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (hw, hh) = (self.size.0 / 2.0, self.size.1 / 2.0);
        (self.center.0 - hw, self.center.1 - hh, self.center.0 + hw, self.center.1 + hh)
    }

    fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        px > x0 && px < x1 && py > y0 && py < y1
    }
}

/// Background plus painted marker rectangles.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub markers: Vec<MarkerSpec>,
    pub background: [u8; 3],
    /// Per-channel uniform jitter amplitude; never pushes a pixel across the mask.
    pub noise_amplitude: u8,
    pub noise_seed: Option<u64>,
}

impl SyntheticScene {
    pub fn render(&self) -> Result<Image, VisionError> {
        let mut img = Image::new(self.width, self.height, self.background)?;
        for (i, m) in self.markers.iter().enumerate() {
            let (x0, y0, x1, y1) = m.bounds();
            if x0 < 0.0 || y0 < 0.0 || x1 > self.width as f64 || y1 > self.height as f64 {
                return Err(VisionError::OutOfBounds);
            }
            for other in &self.markers[..i] {
                let (a0, b0, a1, b1) = other.bounds();
                if x0 < a1 && a0 < x1 && y0 < b1 && b0 < y1 {
                    return Err(VisionError::OverlappingMarkers);
                }
            }
        }
        let mut rng = self.noise_seed.map(ChaCha8Rng::seed_from_u64);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut c = if self.markers.iter().any(|m| m.contains_pixel(x, y)) {
                    MARKER_ORANGE
                } else {
                    self.background
                };
                if let (Some(rng), a) = (rng.as_mut(), self.noise_amplitude as i16) {
                    if a > 0 {
                        for ch in c.iter_mut() {
                            let j: i16 = rng.random_range(-a..=a);
                            *ch = (*ch as i16 + j).clamp(0, 255) as u8;
                        }
                    }
                }
                img.set_pixel(x, y, c);
            }
        }
        Ok(img)
    }
}

/// Renders two markers on a background; returns the image and the true
/// centroid distance in pixels.
pub fn synth_tool_image(
    width: usize,
    height: usize,
    marker_a: MarkerSpec,
    marker_b: MarkerSpec,
    background: [u8; 3],
    noise_seed: Option<u64>,
) -> Result<(Image, f64), VisionError> {
    let scene = SyntheticScene {
        width,
        height,
        markers: vec![marker_a, marker_b],
        background,
        noise_amplitude: if noise_seed.is_some() { 12 } else { 0 },
        noise_seed,
    };
    let img = scene.render()?;
    let d = (marker_b.center.0 - marker_a.center.0).hypot(marker_b.center.1 - marker_a.center.1);
    Ok((img, d))
}
