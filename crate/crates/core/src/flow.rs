//! Dense optical flow between consecutive frames and its spatial gradient.
//!
//! Flow is stored on the grid of the earlier frame: `(u, v)` at `(x, y)` is
//! where the content of pixel `(x, y)` at `t-1` has moved by time `t`, so
//! `I_t[(x, y) + f(x, y)] ≈ I_{t-1}[(x, y)]`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::raster::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("frame sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Which flow source the perception pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    /// Pyramidal Lucas–Kanade on the rendered frames.
    #[default]
    Classical,
    /// Exact displacements reported by the environment.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub levels: usize,
    /// Side of the square integration window (odd).
    pub window: usize,
    pub iterations: usize,
    pub max_displacement: f64,
    /// Minimum eigenvalue of the window-averaged structure tensor for a pixel
    /// to count as trackable.
    pub min_eigen: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { levels: 3, window: 5, iterations: 3, max_displacement: 8.0, min_eigen: 1e-6 }
    }
}

/// Per-pixel displacement in pixels per frame, with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        FlowField { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![true; n] }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        valid: Vec<bool>,
    ) -> Self {
        let n = width * height;
        assert!(u.len() == n && v.len() == n && valid.len() == n, "flow buffers must be width*height");
        FlowField { width, height, u, v, valid }
    }

    /// Builds a field from `f(x, y) -> (u, v)`, all pixels valid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut field = FlowField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                field.set(x, y, u, v);
            }
        }
        field
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn u(&self, x: usize, y: usize) -> f64 {
        self.u[y * self.width + x]
    }

    #[inline]
    pub fn v(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.u[i] = 0.0;
        self.v[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Maps `u` and `v` from `[-max, max]` onto `[0, 1]` images for dumping.
    pub fn to_gray_planes(&self, max: f64) -> (GrayImage, GrayImage) {
        let map = |c: f64| ((c + max) / (2.0 * max)).clamp(0.0, 1.0);
        let u = GrayImage::from_fn(self.width, self.height, |x, y| map(self.u(x, y)));
        let v = GrayImage::from_fn(self.width, self.height, |x, y| map(self.v(x, y)));
        (u, v)
    }
}

/// Spatial derivatives `[∂u/∂x, ∂u/∂y, ∂v/∂x, ∂v/∂y]` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradient {
    width: usize,
    height: usize,
    data: Vec<[f64; 4]>,
}

impl FlowGradient {
    pub fn from_parts(width: usize, height: usize, data: Vec<[f64; 4]>) -> Self {
        assert_eq!(data.len(), width * height);
        FlowGradient { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 4]] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 4] {
        self.data[y * self.width + x]
    }
}

/// Finite-difference gradient of a flow field: central differences inside,
/// one-sided at the border. An invalid neighbour contributes the centre
/// value, and invalid pixels get a zero gradient.
pub fn flow_gradient(flow: &FlowField) -> FlowGradient {
    let (w, h) = (flow.width, flow.height);
    let mut data = vec![[0.0; 4]; w * h];
    let comp = |c: &[f64], i: usize, j: usize| if flow.valid[j] { c[j] } else { c[i] };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] {
                continue;
            }
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yt, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let dx = (xr - xl).max(1) as f64;
            let dy = (yb - yt).max(1) as f64;
            let (l, r, t, b) = (y * w + xl, y * w + xr, yt * w + x, yb * w + x);
            data[i] = [
                (comp(&flow.u, i, r) - comp(&flow.u, i, l)) / dx,
                (comp(&flow.u, i, b) - comp(&flow.u, i, t)) / dy,
                (comp(&flow.v, i, r) - comp(&flow.v, i, l)) / dx,
                (comp(&flow.v, i, b) - comp(&flow.v, i, t)) / dy,
            ];
        }
    }
    FlowGradient { width: w, height: h, data }
}

fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = ((img.width() / 2).max(1), (img.height() / 2).max(1));
    GrayImage::from_fn(w, h, |x, y| {
        let (sx, sy) = (2 * x as isize, 2 * y as isize);
        (img.get_clamped(sx, sy)
            + img.get_clamped(sx + 1, sy)
            + img.get_clamped(sx, sy + 1)
            + img.get_clamped(sx + 1, sy + 1))
            / 4.0
    })
}

/// Central-difference image gradient with edge replication.
fn image_gradient(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) / 2.0;
            gy[i] = (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) / 2.0;
        }
    }
    (gx, gy)
}

/// Sum over the (2r+1)² window around each pixel, borders replicated.
fn box_sum(values: &[f64], w: usize, h: usize, r: isize) -> Vec<f64> {
    let cx = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let cy = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let line = &values[y * w..(y + 1) * w];
        for x in 0..w as isize {
            rows[y * w + x as usize] = (-r..=r).map(|d| line[cx(x + d)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            out[y as usize * w + x] = (-r..=r).map(|d| rows[cy(y + d) * w + x]).sum();
        }
    }
    out
}

/// One pyramid level of dense Lucas–Kanade. `guess` holds the initial
/// displacement per pixel and is refined in place; returns per-pixel
/// trackability.
fn refine_level(
    prev: &GrayImage,
    cur: &GrayImage,
    guess_u: &mut [f64],
    guess_v: &mut [f64],
    params: &FlowParams,
) -> Vec<bool> {
    let (w, h) = (prev.width(), prev.height());
    let (gx, gy) = image_gradient(prev);
    let r = (params.window / 2) as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut trackable = vec![false; w * h];
    let idx = |x: isize, y: isize| {
        y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize
    };
    let gxx_map = box_sum(&gx.iter().map(|g| g * g).collect::<Vec<_>>(), w, h, r);
    let gxy_map = box_sum(&gx.iter().zip(&gy).map(|(a, b)| a * b).collect::<Vec<_>>(), w, h, r);
    let gyy_map = box_sum(&gy.iter().map(|g| g * g).collect::<Vec<_>>(), w, h, r);
    let (pv, cv) = (prev.values(), cur.values());
    let (wi, hi) = (w as isize, h as isize);
    for y in 0..hi {
        for x in 0..wi {
            let i = y as usize * w + x as usize;
            let (gxx, gxy, gyy) = (gxx_map[i], gxy_map[i], gyy_map[i]);
            let (axx, axy, ayy) = (gxx / n, gxy / n, gyy / n);
            let tr = axx + ayy;
            let det = axx * ayy - axy * axy;
            let min_eig = tr / 2.0 - libm::sqrt((tr * tr / 4.0 - det).max(0.0));
            if min_eig < params.min_eigen {
                continue;
            }
            trackable[i] = true;
            let det_g = gxx * gyy - gxy * gxy;
            let (mut du, mut dv) = (guess_u[i], guess_v[i]);
            let window_inside = x >= r && y >= r && x + r < wi && y + r < hi;
            for _ in 0..params.iterations {
                let (mut bx, mut by) = (0.0, 0.0);
                let (fu, fv) = (libm::floor(du), libm::floor(dv));
                // shifted window and its bilinear neighbours stay inside `cur`
                let fast = window_inside
                    && fu.is_finite()
                    && fv.is_finite()
                    && x - r + fu as isize >= 0
                    && y - r + fv as isize >= 0
                    && x + r + fu as isize + 1 < wi
                    && y + r + fv as isize + 1 < hi;
                if fast {
                    let (iu, iv) = (fu as isize, fv as isize);
                    let (ax, ay) = (du - fu, dv - fv);
                    for qy in y - r..=y + r {
                        let row = qy as usize * w;
                        let top = (qy + iv) as usize * w;
                        let bottom = top + w;
                        for qx in x - r..=x + r {
                            let j = row + qx as usize;
                            let c = (qx + iu) as usize;
                            let t = cv[top + c] * (1.0 - ax) + cv[top + c + 1] * ax;
                            let bt = cv[bottom + c] * (1.0 - ax) + cv[bottom + c + 1] * ax;
                            let e = pv[j] - (t * (1.0 - ay) + bt * ay);
                            bx += e * gx[j];
                            by += e * gy[j];
                        }
                    }
                } else {
                    for wy in -r..=r {
                        for wx in -r..=r {
                            let (qx, qy) = (x + wx, y + wy);
                            let j = idx(qx, qy);
                            let px = qx.clamp(0, wi - 1) as f64;
                            let py = qy.clamp(0, hi - 1) as f64;
                            let e = pv[j] - cur.sample(px + du, py + dv);
                            bx += e * gx[j];
                            by += e * gy[j];
                        }
                    }
                }
                let step_u = (gyy * bx - gxy * by) / det_g;
                let step_v = (gxx * by - gxy * bx) / det_g;
                du += step_u;
                dv += step_v;
                if step_u * step_u + step_v * step_v < 1e-6 {
                    break;
                }
            }
            guess_u[i] = du;
            guess_v[i] = dv;
        }
    }
    trackable
}

/// Coarse-to-fine dense Lucas–Kanade flow from `prev` to `cur`.
///
/// Pixels whose structure tensor is ill-conditioned at the finest level are
/// marked invalid and carry zero displacement.
pub fn estimate_flow(prev: &GrayImage, cur: &GrayImage, params: &FlowParams) -> Result<FlowField, FlowError> {
    if prev.width() != cur.width() || prev.height() != cur.height() {
        return Err(FlowError::DimensionMismatch(prev.width(), prev.height(), cur.width(), cur.height()));
    }
    let levels = params.levels.max(1);
    let mut pyramid = vec![(prev.clone(), cur.clone())];
    for _ in 1..levels {
        let (p, c) = pyramid.last().unwrap();
        if p.width() < 8 || p.height() < 8 {
            break;
        }
        let next = (downsample(p), downsample(c));
        pyramid.push(next);
    }

    let (top_prev, _) = pyramid.last().unwrap();
    let mut u = vec![0.0; top_prev.width() * top_prev.height()];
    let mut v = u.clone();
    let mut valid = Vec::new();
    for level in (0..pyramid.len()).rev() {
        let (p, c) = &pyramid[level];
        if u.len() != p.width() * p.height() {
            // Upsample the coarser estimate onto this level's grid.
            let (cw, ch) = (pyramid[level + 1].0.width(), pyramid[level + 1].0.height());
            let coarse_u = GrayImageF { w: cw, h: ch, data: &u };
            let coarse_v = GrayImageF { w: cw, h: ch, data: &v };
            let (fw, fh) = (p.width(), p.height());
            let mut nu = Vec::with_capacity(fw * fh);
            let mut nv = Vec::with_capacity(fw * fh);
            let (sx, sy) = (cw as f64 / fw as f64, ch as f64 / fh as f64);
            for y in 0..fh {
                for x in 0..fw {
                    let cx = (x as f64 + 0.5) * sx - 0.5;
                    let cy = (y as f64 + 0.5) * sy - 0.5;
                    nu.push(coarse_u.sample(cx, cy) * fw as f64 / cw as f64);
                    nv.push(coarse_v.sample(cx, cy) * fh as f64 / ch as f64);
                }
            }
            u = nu;
            v = nv;
        }
        valid = refine_level(p, c, &mut u, &mut v, params);
    }

    let max = params.max_displacement;
    for i in 0..u.len() {
        if valid[i] && u[i].is_finite() && v[i].is_finite() {
            u[i] = u[i].clamp(-max, max);
            v[i] = v[i].clamp(-max, max);
        } else {
            valid[i] = false;
            u[i] = 0.0;
            v[i] = 0.0;
        }
    }
    Ok(FlowField { width: prev.width(), height: prev.height(), u, v, valid })
}

/// Borrowed scalar grid used for bilinear upsampling of flow components.
struct GrayImageF<'a> {
    w: usize,
    h: usize,
    data: &'a [f64],
}

impl GrayImageF<'_> {
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = libm::floor(x) as usize;
        let y0 = libm::floor(y) as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |x: usize, y: usize| self.data[y * self.w + x];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth multi-frequency texture evaluated at continuous coordinates,
    /// so shifted copies are exact translations.
    pub(crate) fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * libm::sin(0.31 * x + 0.17 * y)
            + 0.15 * libm::cos(0.23 * y - 0.41 * x)
            + 0.1 * libm::sin(0.57 * x) * libm::cos(0.49 * y)
    }

    fn shifted(dx: f64, dy: f64) -> (GrayImage, GrayImage) {
        let prev = GrayImage::from_fn(128, 96, |x, y| texture(x as f64, y as f64));
        let cur = GrayImage::from_fn(128, 96, |x, y| texture(x as f64 - dx, y as f64 - dy));
        (prev, cur)
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let (prev, _) = shifted(0.0, 0.0);
        let f = estimate_flow(&prev, &prev, &FlowParams::default()).unwrap();
        for y in 0..96 {
            for x in 0..128 {
                assert!(f.u(x, y).abs() < 1e-9 && f.v(x, y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recovers_horizontal_shift() {
        let (prev, cur) = shifted(3.0, 0.0);
        let f = estimate_flow(&prev, &cur, &FlowParams::default()).unwrap();
        let us: Vec<f64> = (0..96).flat_map(|y| (0..128).map(move |x| (x, y))).map(|(x, y)| f.u(x, y)).collect();
        assert!((median(us) - 3.0).abs() < 0.5);
    }

    #[test]
    fn uniform_frames_are_untrackable() {
        let img = GrayImage::filled(64, 48, 0.4);
        let f = estimate_flow(&img, &img, &FlowParams::default()).unwrap();
        assert_eq!(f.valid_count(), 0);
    }

    #[test]
    fn size_mismatch_is_error() {
        let a = GrayImage::filled(32, 32, 0.1);
        let b = GrayImage::filled(32, 16, 0.1);
        assert_eq!(estimate_flow(&a, &b, &FlowParams::default()), Err(FlowError::DimensionMismatch(32, 32, 32, 16)));
    }

    #[test]
    fn gradient_of_constant_and_linear_fields() {
        let c = FlowField::from_fn(20, 10, |_, _| (1.5, -2.0));
        assert!(flow_gradient(&c).data().iter().all(|g| g.iter().all(|&d| d == 0.0)));

        let lin = FlowField::from_fn(20, 10, |x, _| (x as f64, 0.0));
        let g = flow_gradient(&lin);
        for y in 0..10 {
            for x in 0..20 {
                assert!((g.at(x, y)[0] - 1.0).abs() < 1e-12);
            }
        }

        let affine = FlowField::from_fn(20, 10, |x, y| (0.5 * x as f64 - 0.25 * y as f64 + 1.0, 2.0 * y as f64));
        let g = flow_gradient(&affine);
        let g0 = g.at(5, 5);
        for y in 1..9 {
            for x in 1..19 {
                for k in 0..4 {
                    assert!((g.at(x, y)[k] - g0[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn piecewise_field_gradient_sits_on_boundary() {
        let f = FlowField::from_fn(20, 10, |x, _| if x < 10 { (0.0, 0.0) } else { (2.0, 0.0) });
        let g = flow_gradient(&f);
        for y in 0..10 {
            for x in 0..20 {
                let mag: f64 = g.at(x, y).iter().map(|d| d * d).sum();
                if x == 9 || x == 10 {
                    assert!(mag > 0.9);
                } else {
                    assert_eq!(mag, 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_pixels_have_zero_gradient_and_replicate() {
        let mut f = FlowField::from_fn(5, 5, |x, _| (x as f64, 0.0));
        f.invalidate(3, 2);
        let g = flow_gradient(&f);
        assert_eq!(g.at(3, 2), [0.0; 4]);
        // neighbour (2,2): right neighbour invalid, replaced by centre value 2
        assert!((g.at(2, 2)[0] - 0.5).abs() < 1e-12);
    }
}
