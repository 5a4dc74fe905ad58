//! Procedural stand-in for face crops: a face ellipse on a per-person
//! background, with a class-specific occluder drawn over it.
//!
//! Everything is a pure function of `(person index, class, variant, size)`
//! so fixtures are reproducible without shipping image files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::class::OcclusionClass;
use crate::data::dataset::LabeledImage;
use crate::data::ppm::{encode_ppm, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Rgb = [f64; 3];

/// Appearance shared by every image of one synthetic person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonLook {
    pub name: String,
    pub background: Rgb,
    pub skin: Rgb,
    pub hair: Rgb,
    /// Face half-width as a fraction of the image side.
    pub face_width: f64,
    pub eye_gap: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl PersonLook {
    pub fn new(index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index as u64);
        // golden-ratio hue steps keep neighbouring persons far apart
        let hue = (index as f64 * 0.618_033_988_75).fract();
        let tone = rng.gen_range(0.35..0.95);
        PersonLook {
            name: format!("person{index:02}"),
            background: hsv(hue, rng.gen_range(0.55..0.9), rng.gen_range(0.45..0.9)),
            skin: [tone, tone * rng.gen_range(0.7..0.85), tone * rng.gen_range(0.55..0.7)],
            hair: hsv(rng.gen::<f64>(), rng.gen_range(0.2..0.7), rng.gen_range(0.05..0.5)),
            face_width: rng.gen_range(0.24..0.34),
            eye_gap: rng.gen_range(0.09..0.15),
        }
    }
}

struct Canvas {
    size: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn new(size: usize, fill: Rgb) -> Self {
        Canvas {
            size,
            px: vec![fill; size * size],
        }
    }

    /// Paints every pixel whose centre (in unit coordinates) satisfies `inside`.
    fn paint(&mut self, color: Rgb, inside: impl Fn(f64, f64) -> bool) {
        let n = self.size as f64;
        for y in 0..self.size {
            for x in 0..self.size {
                let (u, v) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
                if inside(u, v) {
                    self.px[y * self.size + x] = color;
                }
            }
        }
    }

    fn into_tensor(self, brightness: f64, noise: &mut ChaCha8Rng) -> Tensor {
        let size = self.size;
        let data = self
            .px
            .into_iter()
            .flat_map(|c| c.map(|v| v * brightness))
            .map(|v| (v + noise.gen_range(-0.03..0.03)).clamp(0.0, 1.0))
            .collect();
        Tensor::new(vec![size, size, 3], data).expect("canvas extents")
    }
}

/// Renders one `[size, size, 3]` image.
pub fn render(look: &PersonLook, class: OcclusionClass, variant: u64, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(variant);
    rng.set_stream(class.code() as u64 + 16 * (look.name.len() as u64 + look.name.bytes().map(u64::from).sum::<u64>()));
    let (cx, cy) = (0.5 + rng.gen_range(-0.05..0.05), 0.52 + rng.gen_range(-0.05..0.05));
    let fw = look.face_width * rng.gen_range(0.95..1.05);
    let fh = fw * 1.3;
    let brightness = rng.gen_range(0.9..1.05);

    let mut c = Canvas::new(size, look.background);
    // hair cap behind the face
    c.paint(look.hair, |u, v| ((u - cx) / (fw * 1.12)).powi(2) + ((v - cy + 0.06) / (fh * 1.05)).powi(2) < 1.0 && v < cy);
    c.paint(look.skin, |u, v| ((u - cx) / fw).powi(2) + ((v - cy) / fh).powi(2) < 1.0);
    let eye_y = cy - fh * 0.2;
    let eye_r = 0.03;
    for side in [-1.0, 1.0] {
        let ex = cx + side * look.eye_gap;
        c.paint([0.08, 0.06, 0.05], |u, v| (u - ex).powi(2) + (v - eye_y).powi(2) < eye_r * eye_r);
    }
    let mouth_y = cy + fh * 0.45;
    c.paint([0.55, 0.2, 0.2], |u, v| (u - cx).abs() < fw * 0.35 && (v - mouth_y).abs() < 0.018);

    match class {
        OcclusionClass::Face => {}
        OcclusionClass::MedicalMask => {
            let top = cy + fh * 0.05;
            c.paint([0.62, 0.82, 0.95], |u, v| (u - cx).abs() < fw * 0.95 && v > top && v < cy + fh * 0.8);
            c.paint([0.95, 0.97, 1.0], |u, v| (v - (top + 0.02)).abs() < 0.008 && (u - cx).abs() < fw * 1.4);
        }
        OcclusionClass::Scarf => {
            let top = cy + fh * 0.1;
            c.paint([0.75, 0.12, 0.18], |u, v| v > top && (u - cx).abs() < fw * 1.5);
            c.paint([0.95, 0.8, 0.2], |u, v| v > top && ((v - top) * 40.0).floor() as i64 % 3 == 0 && (u - cx).abs() < fw * 1.5);
        }
        OcclusionClass::Hand => {
            let tone = look.skin.map(|v| v * 0.8);
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let hx = cx + side * fw * 0.35;
            c.paint(tone, |u, v| ((u - hx) / (fw * 0.7)).powi(2) + ((v - cy - fh * 0.15) / (fh * 0.55)).powi(2) < 1.0);
            for k in 0..4 {
                let fx = hx - fw * 0.45 + k as f64 * fw * 0.3;
                c.paint(look.skin.map(|v| v * 0.6), |u, v| (u - fx).abs() < 0.006 && (v - cy).abs() < fh * 0.5);
            }
        }
        OcclusionClass::Object => {
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let ox = cx + side * look.eye_gap;
            c.paint([0.12, 0.12, 0.14], |u, v| (u - ox).abs() < fw * 0.45 && (v - eye_y - 0.04).abs() < fh * 0.35);
            c.paint([0.35, 0.38, 0.45], |u, v| (u - ox).abs() < fw * 0.3 && (v - eye_y - 0.04).abs() < fh * 0.22);
        }
    }
    c.into_tensor(brightness, &mut rng)
}

/// `persons × classes × per_class` images, person-major then class then
/// variant. Variants start at `first_variant`.
pub fn fixture(persons: &[usize], per_class: usize, first_variant: u64, size: usize) -> Vec<LabeledImage> {
    let mut out = Vec::with_capacity(persons.len() * per_class * OcclusionClass::COUNT);
    for &p in persons {
        let look = PersonLook::new(p);
        for class in OcclusionClass::ALL {
            for i in 0..per_class as u64 {
                let variant = first_variant + i;
                out.push(LabeledImage {
                    pixels: render(&look, class, variant, size),
                    occlusion: class,
                    person: look.name.clone(),
                    source: PathBuf::from(&look.name)
                        .join(class.folder_name())
                        .join(format!("{variant:03}.ppm")),
                });
            }
        }
    }
    out
}

/// The 100-image training fixture: 4 persons × 5 classes × 5 images at 32×32.
pub fn toy_fixture() -> Vec<LabeledImage> {
    fixture(&[0, 1, 2, 3], 5, 0, 32)
}

/// Writes images under `root` at their relative `source` paths as 8-bit PPM.
pub fn write_tree(root: &Path, images: &[LabeledImage]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(images.len());
    for img in images {
        let path = root.join(&img.source);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let rgb = RgbImage::from_tensor(&img.pixels)?;
        fs::write(&path, encode_ppm(&rgb)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
