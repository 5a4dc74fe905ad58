//! Random geometric augmentation: rotate → shear → zoom → crop → resize back
//! → maybe flip. The `(seed, draw index)` pair fixes every random choice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    Zero,
    EdgeReplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    /// Rotation drawn from `±rotation_deg`.
    pub rotation_deg: f64,
    /// Shear angle drawn from `±shear_deg`.
    pub shear_deg: f64,
    /// Zoom factor drawn from `1 ± zoom_range`.
    pub zoom_range: f64,
    /// Kept side fraction drawn from `[1 − crop_range, 1]`.
    pub crop_range: f64,
    pub flip_probability: f64,
    pub fill: FillMode,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation_deg: 15.0,
            shear_deg: 10.0,
            zoom_range: 0.1,
            crop_range: 0.1,
            flip_probability: 0.5,
            fill: FillMode::Zero,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn identity(seed: u64) -> Self {
        AugmentSpec {
            rotation_deg: 0.0,
            shear_deg: 0.0,
            zoom_range: 0.0,
            crop_range: 0.0,
            flip_probability: 0.0,
            fill: FillMode::Zero,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.rotation_deg, self.shear_deg, self.zoom_range, self.crop_range];
        if ranges.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(format!("augment ranges must be non-negative: {self:?}")));
        }
        if self.shear_deg >= 90.0 || self.zoom_range >= 1.0 || self.crop_range >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "augment ranges out of bounds (shear < 90°, zoom < 1, crop < 1): {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability {} not in [0, 1]",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

/// The concrete transform picked for one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_rad: f64,
    pub shear_rad: f64,
    pub zoom: f64,
    pub crop_keep: f64,
    /// Crop window offset as a fraction of the free margin.
    pub crop_offset: (f64, f64),
    pub flip: bool,
}

impl AugmentDraw {
    pub fn sample(spec: &AugmentSpec, draw_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(draw_index);
        let mut sym = |r: f64| r * (2.0 * rng.gen::<f64>() - 1.0);
        let rotation_rad = sym(spec.rotation_deg).to_radians();
        let shear_rad = sym(spec.shear_deg).to_radians();
        let zoom = 1.0 + sym(spec.zoom_range);
        let crop_keep = 1.0 - spec.crop_range * rng.gen::<f64>();
        let crop_offset = (rng.gen::<f64>(), rng.gen::<f64>());
        let flip = rng.gen::<f64>() < spec.flip_probability;
        AugmentDraw {
            rotation_rad,
            shear_rad,
            zoom,
            crop_keep,
            crop_offset,
            flip,
        }
    }
}

fn hwc(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] if h > 0 && w > 0 => Ok((h, w, c)),
        _ => Err(Error::InvalidArgument(format!("expected [H, W, C] image, got {:?}", t.shape()))),
    }
}

/// Bilinear sample at real coordinates `(y, x)`; out-of-range taps use `fill`.
fn sample(src: &[f64], h: usize, w: usize, c: usize, y: f64, x: f64, fill: FillMode, out: &mut [f64]) {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let taps = [(y0, x0, (1.0 - fy) * (1.0 - fx)), (y0, x0 + 1.0, (1.0 - fy) * fx), (y0 + 1.0, x0, fy * (1.0 - fx)), (y0 + 1.0, x0 + 1.0, fy * fx)];
    out.fill(0.0);
    for (ty, tx, wgt) in taps {
        if wgt == 0.0 {
            continue;
        }
        let inside = ty >= 0.0 && tx >= 0.0 && ty < h as f64 && tx < w as f64;
        let (iy, ix) = match (inside, fill) {
            (true, _) => (ty as usize, tx as usize),
            (false, FillMode::Zero) => continue,
            (false, FillMode::EdgeReplicate) => (
                ty.clamp(0.0, (h - 1) as f64) as usize,
                tx.clamp(0.0, (w - 1) as f64) as usize,
            ),
        };
        let p = &src[(iy * w + ix) * c..][..c];
        for (o, v) in out.iter_mut().zip(p) {
            *o += wgt * v;
        }
    }
}

/// Rotation, then shear, then zoom, all about the image centre.
fn affine_warp(t: &Tensor, d: &AugmentDraw, fill: FillMode) -> Result<Tensor> {
    let (h, w, c) = hwc(t)?;
    if d.rotation_rad == 0.0 && d.shear_rad == 0.0 && d.zoom == 1.0 {
        return Ok(t.clone());
    }
    let (s, co) = d.rotation_rad.sin_cos();
    let k = d.shear_rad.tan();
    let z = d.zoom;
    // forward map A = Z · Sh · R acting on (x, y)
    let a = [[z * (co + k * s), z * (-s + k * co)], [z * s, z * co]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            sample(t.data(), h, w, c, sy, sx, fill, &mut out[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Cuts a `keep`-sized window and resizes it back to the full extent.
fn crop_resize(t: &Tensor, keep: f64, offset: (f64, f64)) -> Result<Tensor> {
    let (h, w, c) = hwc(t)?;
    if keep >= 1.0 {
        return Ok(t.clone());
    }
    let (kh, kw) = (keep * h as f64, keep * w as f64);
    let (y0, x0) = (offset.0 * (h as f64 - kh), offset.1 * (w as f64 - kw));
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let sy = (y0 + (y as f64 + 0.5) * kh / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        for x in 0..w {
            let sx = (x0 + (x as f64 + 0.5) * kw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            sample(t.data(), h, w, c, sy, sx, FillMode::EdgeReplicate, &mut out[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub fn flip_horizontal(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = hwc(t)?;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub fn augment_pixels(t: &Tensor, spec: &AugmentSpec, draw_index: u64) -> Result<Tensor> {
    spec.validate()?;
    let d = AugmentDraw::sample(spec, draw_index);
    let warped = affine_warp(t, &d, spec.fill)?;
    let cropped = crop_resize(&warped, d.crop_keep, d.crop_offset)?;
    let out = if d.flip { flip_horizontal(&cropped)? } else { cropped };
    // bilinear weights can overshoot [0, 1] by an ulp
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

/// Label, person and extents are preserved.
pub fn augment(img: &LabeledImage, spec: &AugmentSpec, draw_index: u64) -> Result<LabeledImage> {
    Ok(LabeledImage {
        pixels: augment_pixels(&img.pixels, spec, draw_index)?,
        occlusion: img.occlusion,
        person: img.person.clone(),
        source: img.source.clone(),
    })
}

/// Every source image followed by its `count` variants (draw indices
/// `0..count`).
pub fn expand_dataset(images: &[LabeledImage], spec: &AugmentSpec, count: u64) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(images.len() * (count as usize + 1));
    for img in images {
        out.push(img.clone());
        for i in 0..count {
            out.push(augment(img, spec, i)?);
        }
    }
    Ok(out)
}
