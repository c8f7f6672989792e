//! Image types and box geometry shared by the whole pipeline.

use alloc::vec;
use alloc::vec::Vec;

/// Smallest accepted frame side.
pub const MIN_FRAME_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("frame {width}x{height} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")]
    TooSmall { width: usize, height: usize },
    #[error("buffer holds {actual} values, {expected} expected")]
    BufferLength { expected: usize, actual: usize },
    #[error("intensity {0} outside [0, 1]")]
    IntensityRange(f64),
}

/// RGB observation, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(RasterError::TooSmall { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength { expected, actual: pixels.len() });
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, RasterError> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Frame::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// Single-channel intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        if values.len() != width * height {
            return Err(RasterError::BufferLength { expected: width * height, actual: values.len() });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::IntensityRange(bad));
        }
        Ok(GrayImage { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage { width, height, values: vec![value.clamp(0.0, 1.0); width * height] }
    }

    /// Builds an image from `f(x, y)`, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                values.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        GrayImage { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Value at integer coordinates with edge replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.values[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates, edge-replicated.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = libm::floor(x) as usize;
        let y0 = libm::floor(y) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples to `width`×`height` with bilinear interpolation on pixel
    /// centres. Resizing to the current size is the identity.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        GrayImage::from_fn(width, height, |x, y| {
            self.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    }

    /// Copies the pixels covered by `bbox`, which must lie inside the image.
    pub fn crop(&self, bbox: &BBox) -> GrayImage {
        let (x0, y0) = (bbox.x0 as usize, bbox.y0 as usize);
        let (w, h) = (bbox.w as usize, bbox.h as usize);
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage { width: w, height: h, values }
    }
}

/// ITU-R BT.601 luma, scaled to `[0, 1]`.
pub fn to_grayscale(frame: &Frame) -> GrayImage {
    let values = frame
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let v = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
            v.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage { width: frame.width, height: frame.height, values }
}

/// Axis-aligned box covering the half-open pixel range
/// `[x0, x0 + w) × [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x0: i32, y0: i32, w: u32, h: u32) -> Self {
        BBox { x0, y0, w, h }
    }

    pub fn x1(&self) -> i32 {
        self.x0 + self.w as i32
    }

    pub fn y1(&self) -> i32 {
        self.y0 + self.h as i32
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x0 as f64 + self.w as f64 / 2.0, self.y0 as f64 + self.h as f64 / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = (self.x1().min(other.x1()) - self.x0.max(other.x0)).max(0) as u64;
        let h = (self.y1().min(other.y1()) - self.y0.max(other.y0)).max(0) as u64;
        w * h
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn translated(&self, dx: i32, dy: i32) -> BBox {
        BBox { x0: self.x0 + dx, y0: self.y0 + dy, ..*self }
    }

    /// Intersection with a `width`×`height` frame; `None` when nothing is left.
    pub fn clamped(&self, width: usize, height: usize) -> Option<BBox> {
        let x0 = self.x0.max(0);
        let y0 = self.y0.max(0);
        let x1 = self.x1().min(width as i32);
        let y1 = self.y1().min(height as i32);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox { x0, y0, w: (x1 - x0) as u32, h: (y1 - y0) as u32 })
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Per-pixel instance identifiers; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    ids: Vec<u8>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, ids: Vec<u8>) -> Result<Self, RasterError> {
        if ids.len() != width * height {
            return Err(RasterError::BufferLength { expected: width * height, actual: ids.len() });
        }
        Ok(InstanceMask { width, height, ids })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        InstanceMask { width, height, ids: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u8) {
        self.ids[y * self.width + x] = id;
    }

    pub fn count(&self, id: u8) -> usize {
        self.ids.iter().filter(|&&v| v == id).count()
    }

    /// Tight box around all pixels carrying `id`.
    pub fn bbox_of(&self, id: u8) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, &v) in self.ids.iter().enumerate() {
            if v == id {
                let (x, y) = (i % self.width, i / self.width);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        (x0 != usize::MAX)
            .then(|| BBox::new(x0 as i32, y0 as i32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}
