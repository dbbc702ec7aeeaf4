//! Normalized bounding boxes and the arithmetic used across the toolkit.
//!
//! Coordinates are fractions of the image size with the origin at the
//! top-left corner, x growing rightward and y growing downward. Boxes that
//! travel through prompts, responses and datasets live on a 3-decimal grid;
//! [`quantize`] puts a box on that grid and [`BBox::is_quantized`] checks it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Grid resolution for quantized coordinates (three decimals).
pub const GRID: f64 = 1000.0;

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    /// Builds a box, checking `0 <= min <= max <= 1` on both axes.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GeometryError::OutOfRange(coords));
        }
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::Inverted(coords));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// The full image, `[0, 0, 1, 1]`.
    pub const fn unit() -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 1.0,
            y_max: 1.0,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// True when every coordinate sits exactly on the 3-decimal grid.
    pub fn is_quantized(&self) -> bool {
        self.to_array().iter().all(|&c| on_grid(c))
    }

    /// Coordinates as integer thousandths. Only meaningful for quantized boxes.
    pub fn to_milli(self) -> [i64; 4] {
        self.to_array().map(to_milli)
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_box(self))
    }
}

/// Pixel-space rectangle as emitted by OCR engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl PixelRect {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }
}

fn to_milli(c: f64) -> i64 {
    // f64::round rounds half away from zero.
    (c * GRID).round() as i64
}

fn on_grid(c: f64) -> bool {
    to_milli(c) as f64 / GRID == c
}

fn from_milli(m: i64) -> f64 {
    m as f64 / GRID
}

fn round_scaled(scaled: f64) -> f64 {
    from_milli(scaled.round() as i64).clamp(0.0, 1.0)
}

/// Rounds every coordinate to three decimals, half away from zero.
pub fn quantize(b: BBox) -> BBox {
    let [x0, y0, x1, y1] = b.to_array().map(|c| round_scaled(c * GRID));
    // Rounding is monotone, so ordering survives; keep the guard anyway for
    // hand-built boxes that arrive with min == max on a rounding tie.
    BBox {
        x_min: x0.min(x1),
        y_min: y0.min(y1),
        x_max: x0.max(x1),
        y_max: y0.max(y1),
    }
}

/// Converts a pixel rectangle to a quantized normalized box.
///
/// Each coordinate is scaled as `pixel * 1000 / extent` before rounding, so
/// integer pixel inputs round exactly like the rational value would.
pub fn normalize(px: PixelRect, width: f64, height: f64) -> Result<BBox, GeometryError> {
    if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
        return Err(GeometryError::DegenerateImage { width, height });
    }
    let PixelRect {
        left,
        top,
        right,
        bottom,
    } = px;
    if [left, top, right, bottom].iter().any(|c| !c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if left > right || top > bottom {
        return Err(GeometryError::InvertedPixels([left, top, right, bottom]));
    }
    if left < 0.0 || top < 0.0 || right > width || bottom > height {
        return Err(GeometryError::PixelsOutOfBounds {
            rect: [left, top, right, bottom],
            width,
            height,
        });
    }
    Ok(BBox {
        x_min: round_scaled(left * GRID / width),
        y_min: round_scaled(top * GRID / height),
        x_max: round_scaled(right * GRID / width),
        y_max: round_scaled(bottom * GRID / height),
    })
}

pub fn area(b: &BBox) -> f64 {
    b.width() * b.height()
}

/// Area of a quantized box in millionths of the image, computed exactly.
pub fn area_micro(b: &BBox) -> i64 {
    let [x0, y0, x1, y1] = b.to_milli();
    (x1 - x0) * (y1 - y0)
}

/// Intersection over union; zero for disjoint boxes and for a zero-area union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box covering every input box.
pub fn union(boxes: &[BBox]) -> Result<BBox, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyUnion)?;
    Ok(rest.iter().fold(*first, |acc, b| BBox {
        x_min: acc.x_min.min(b.x_min),
        y_min: acc.y_min.min(b.y_min),
        x_max: acc.x_max.max(b.x_max),
        y_max: acc.y_max.max(b.y_max),
    }))
}

/// Prints a coordinate with the fewest decimals that identify its grid point:
/// `0.9`, `0.114`, `0`, `1`.
pub fn format_coord(c: f64) -> String {
    let m = to_milli(c);
    let sign = if m < 0 { "-" } else { "" };
    let m = m.abs();
    let (int, frac) = (m / 1000, m % 1000);
    if frac == 0 {
        return format!("{sign}{int}");
    }
    let digits = format!("{frac:03}");
    format!("{sign}{int}.{}", digits.trim_end_matches('0'))
}

/// `[x_min, y_min, x_max, y_max]` with minimal decimals.
pub fn format_box(b: &BBox) -> String {
    let [a, c, d, e] = b.to_array().map(format_coord);
    format!("[{a}, {c}, {d}, {e}]")
}
