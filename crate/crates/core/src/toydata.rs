//! Procedural two-domain toy scenes: the same labeled geometry rendered in
//! a clean style (flat class colors plus faint dither) and a textured style
//! (hue-shifted colors, an illumination ramp, and additive noise). Geometry
//! depends only on (seed, index), so both styles of one sample share a
//! label map exactly.

use crate::error::{Error, Result};
use crate::imgproc::{ImageRgb, LabelMap};
use crate::NUM_CLASSES;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Flat rendering color per class in the clean style, RGB in [0,1].
/// Order matches [`crate::CLASS_NAMES`].
pub const CLASS_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.45, 0.38, 0.30], // background: dry soil
    [0.20, 0.65, 0.25], // leaf: green
    [0.80, 0.25, 0.20], // pepper: red
    [0.45, 0.60, 0.20], // peduncle: yellow-green
    [0.35, 0.50, 0.25], // stem: green-brown
    [0.55, 0.75, 0.35], // shoot: light green
    [0.50, 0.52, 0.62], // wire: bluish gray
    [0.75, 0.65, 0.30], // cut: yellow-tan
];

/// Hue rotation (degrees) applied per class in the textured style. The
/// rotations are large so the clean palette is systematically wrong for
/// the textured domain: a model trained on clean colors misreads textured
/// scenes (textured background lands near the clean stem color, textured
/// pepper near clean leaf), which is the gap a translator has to fix.
/// The per-class spread keeps the map from being one global rotation.
pub const HUE_SHIFT_DEGREES: [f64; NUM_CLASSES] = [
    100.0, // background
    130.0, // leaf
    140.0, // pepper
    110.0, // peduncle
    125.0, // stem
    135.0, // shoot
    90.0,  // wire
    120.0, // cut
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Clean,
    Textured,
}

impl Style {
    fn tag(self) -> u64 {
        match self {
            Style::Clean => 0x636c_65616e,
            Style::Textured => 0x7465_7874,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Clean => "clean",
            Style::Textured => "textured",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Square image extent; at least 32 and divisible by 4.
    pub size: usize,
    /// Images per domain.
    pub n_images: usize,
    pub seed: u64,
    /// Additive noise amplitude in the textured style.
    pub noise_amplitude: f64,
    /// Faint per-pixel dither in the clean style (anti-banding).
    pub dither: f64,
    /// Illumination ramp strength range in the textured style.
    pub ramp_min: f64,
    pub ramp_max: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            size: 64,
            n_images: 100,
            seed: 0,
            noise_amplitude: 0.08,
            dither: 0.01,
            ramp_min: 0.25,
            ramp_max: 0.45,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "toy image size {} must be at least 32 and divisible by 4",
                self.size
            )));
        }
        if self.n_images == 0 {
            return Err(Error::Config("n_images must be positive".into()));
        }
        for (name, v) in [
            ("noise_amplitude", self.noise_amplitude),
            ("dither", self.dither),
            ("ramp_min", self.ramp_min),
            ("ramp_max", self.ramp_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be within [0,1], got {v}")));
            }
        }
        if self.ramp_min > self.ramp_max {
            return Err(Error::Config("ramp_min must not exceed ramp_max".into()));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, index: u32, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(u64::from(index) ^ splitmix(tag)))
}

/// Rotates an RGB color's hue by `degrees` through HSV space, keeping
/// saturation and value.
fn shift_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return rgb;
    }
    let mut h = if max == r {
        60.0 * (((g - b) / delta) % 6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    h = (h + degrees).rem_euclid(360.0);
    let (s, v) = (delta / max, max);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (rp, gp, bp) = match (h / 60.0) as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [rp + m, gp + m, bp + m]
}

struct Raster<'a> {
    labels: &'a mut LabelMap,
    size: usize,
}

impl Raster<'_> {
    fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, class: u8) {
        let s = self.size as i64;
        let (xa, xb) = (x0.floor() as i64, x1.ceil() as i64);
        let (ya, yb) = (y0.floor() as i64, y1.ceil() as i64);
        for y in ya.max(0)..yb.min(s) {
            for x in xa.max(0)..xb.min(s) {
                self.labels.data[y as usize * self.size + x as usize] = class;
            }
        }
    }

    fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, class: u8) {
        let s = self.size as i64;
        let (xa, xb) = ((cx - rx).floor() as i64, (cx + rx).ceil() as i64);
        let (ya, yb) = ((cy - ry).floor() as i64, (cy + ry).ceil() as i64);
        for y in ya.max(0)..(yb + 1).min(s) {
            for x in xa.max(0)..(xb + 1).min(s) {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.labels.data[y as usize * self.size + x as usize] = class;
                }
            }
        }
    }

    /// Thick segment: every pixel whose center lies within `thickness / 2`
    /// of the segment.
    fn fill_segment(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, thickness: f64, class: u8) {
        let s = self.size as i64;
        let r = thickness / 2.0;
        let (xa, xb) = ((x0.min(x1) - r).floor() as i64, (x0.max(x1) + r).ceil() as i64);
        let (ya, yb) = ((y0.min(y1) - r).floor() as i64, (y0.max(y1) + r).ceil() as i64);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len_sq = (dx * dx + dy * dy).max(1e-12);
        for y in ya.max(0)..(yb + 1).min(s) {
            for x in xa.max(0)..(xb + 1).min(s) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = (((px - x0) * dx + (py - y0) * dy) / len_sq).clamp(0.0, 1.0);
                let (qx, qy) = (x0 + t * dx, y0 + t * dy);
                let d_sq = (px - qx) * (px - qx) + (py - qy) * (py - qy);
                if d_sq <= r * r {
                    self.labels.data[y as usize * self.size + x as usize] = class;
                }
            }
        }
    }
}

/// One attempt at a scene layout; drawing order decides occlusion
/// (peppers over wire, wire over foliage, cut marks on top).
fn draw_layout(labels: &mut LabelMap, size: usize, rng: &mut ChaCha12Rng) {
    labels.data.fill(0);
    let s = size as f64;
    let mut r = Raster { labels, size };

    // Stem: full-height vertical band.
    let stem_x = rng.random_range(0.30..0.70) * s;
    let stem_w = rng.random_range(0.045..0.08) * s;
    r.fill_rect(stem_x - stem_w / 2.0, 0.0, stem_x + stem_w / 2.0, s, 4);

    // Shoots: thin offshoots leaving the stem diagonally.
    for _ in 0..rng.random_range(2..4usize) {
        let y0 = rng.random_range(0.1..0.9) * s;
        let len = rng.random_range(0.18..0.30) * s;
        let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let slope = rng.random_range(-0.5..0.5);
        r.fill_segment(
            stem_x,
            y0,
            stem_x + dir * len,
            y0 + slope * len,
            (0.022 * s).max(1.5),
            5,
        );
    }

    // Leaves: ellipses scattered around the stem.
    for _ in 0..rng.random_range(3..6usize) {
        let cx = rng.random_range(0.1..0.9) * s;
        let cy = rng.random_range(0.1..0.9) * s;
        let rx = rng.random_range(0.09..0.17) * s;
        let ry = rng.random_range(0.06..0.12) * s;
        r.fill_ellipse(cx, cy, rx, ry, 1);
    }

    // Wires: two full-width horizontal support lines over the foliage.
    for band in [rng.random_range(0.12..0.40), rng.random_range(0.55..0.88)] {
        let y = band * s;
        r.fill_segment(0.0, y, s, y, (0.018 * s).max(1.5), 6);
    }

    // Peppers with a peduncle on top of each.
    for _ in 0..rng.random_range(2..5usize) {
        let rad = rng.random_range(0.055..0.105) * s;
        let cx = rng.random_range(0.12..0.88) * s;
        let cy = rng.random_range(0.18..0.85) * s;
        r.fill_ellipse(cx, cy, rad, rad, 2);
        let pw = (0.016 * s).max(1.0);
        let ph = rng.random_range(0.035..0.06) * s;
        r.fill_rect(cx - pw, cy - rad - ph, cx + pw, cy - rad + 1.0, 3);
    }

    // Cut marks: small bright squares, drawn last so they stay visible.
    for _ in 0..rng.random_range(1..3usize) {
        let side = rng.random_range(0.035..0.055) * s;
        let cx = rng.random_range(0.08..0.92) * s;
        let cy = rng.random_range(0.08..0.92) * s;
        r.fill_rect(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0, 7);
    }
}

fn class_presence(labels: &LabelMap) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for &c in &labels.data {
        counts[c as usize] += 1;
    }
    counts
}

/// Label geometry for one sample. Layouts where occlusion erased a class
/// are redrawn (the generator stream keeps advancing, so retries stay
/// deterministic).
pub fn generate_labels(cfg: &ToyConfig, index: u32) -> Result<LabelMap> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(cfg.seed, index, 0x67656f6d));
    let mut labels = LabelMap::new(cfg.size, cfg.size);
    for _ in 0..64 {
        draw_layout(&mut labels, cfg.size, &mut rng);
        if class_presence(&labels).iter().all(|&n| n > 0) {
            return Ok(labels);
        }
    }
    Err(Error::Internal(format!(
        "layout for seed {} index {index} kept losing a class to occlusion",
        cfg.seed
    )))
}

/// Renders one sample in one style. Both styles of the same (seed, index)
/// share the label map bit for bit.
pub fn generate_sample(cfg: &ToyConfig, index: u32, style: Style) -> Result<(ImageRgb, LabelMap)> {
    let labels = generate_labels(cfg, index)?;
    let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(cfg.seed, index, style.tag()));
    let size = cfg.size;
    let mut img = ImageRgb::new(size, size);

    match style {
        Style::Clean => {
            for y in 0..size {
                for x in 0..size {
                    let base = CLASS_COLORS[labels.data[y * size + x] as usize];
                    let px: [f64; 3] = std::array::from_fn(|c| {
                        let d = cfg.dither * (rng.random::<f64>() * 2.0 - 1.0);
                        (base[c] + d).clamp(0.0, 1.0)
                    });
                    img.set_pixel(x, y, px);
                }
            }
        }
        Style::Textured => {
            let shifted: [[f64; 3]; NUM_CLASSES] =
                std::array::from_fn(|c| shift_hue(CLASS_COLORS[c], HUE_SHIFT_DEGREES[c]));
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(cfg.ramp_min..=cfg.ramp_max);
            let (cos_t, sin_t) = (theta.cos(), theta.sin());
            let half = (size as f64 - 1.0) / 2.0;
            for y in 0..size {
                for x in 0..size {
                    let base = shifted[labels.data[y * size + x] as usize];
                    let u = (x as f64 - half) / (size as f64);
                    let v = (y as f64 - half) / (size as f64);
                    let light = 1.0 + amp * (u * cos_t + v * sin_t);
                    let px: [f64; 3] = std::array::from_fn(|c| {
                        let n = cfg.noise_amplitude * (rng.random::<f64>() * 2.0 - 1.0);
                        (base[c] * light + n).clamp(0.0, 1.0)
                    });
                    img.set_pixel(x, y, px);
                }
            }
        }
    }
    Ok((img, labels))
}

/// All samples of one style, indices 1..=n_images.
pub fn generate_set(cfg: &ToyConfig, style: Style) -> Result<(Vec<ImageRgb>, Vec<LabelMap>)> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(cfg.n_images);
    let mut labels = Vec::with_capacity(cfg.n_images);
    for index in 1..=cfg.n_images as u32 {
        let (img, lab) = generate_sample(cfg, index, style)?;
        images.push(img);
        labels.push(lab);
    }
    Ok((images, labels))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    style: Style,
    size: usize,
    n_images: usize,
    seed: u64,
    noise_amplitude: f64,
    dither: f64,
    ramp_min: f64,
    ramp_max: f64,
    first_index: u32,
    classes: Vec<String>,
    hue_shift_degrees: Vec<f64>,
}

/// Writes `rgb/NNNN.png`, `label/NNNN.png` (indices from 1), and a
/// `spec.json` manifest describing how the set was made.
pub fn write_dataset(cfg: &ToyConfig, style: Style, dir: &Path) -> Result<()> {
    use crate::dataset::image_name;
    use crate::imgproc::{save_labels, save_rgb};

    cfg.validate()?;
    let rgb_dir = dir.join("rgb");
    let label_dir = dir.join("label");
    std::fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    std::fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;

    for index in 1..=cfg.n_images as u32 {
        let (img, labels) = generate_sample(cfg, index, style)?;
        save_rgb(&rgb_dir.join(image_name(index)), &img)?;
        save_labels(&label_dir.join(image_name(index)), &labels)?;
    }

    let manifest = Manifest {
        kind: "toydata".into(),
        style,
        size: cfg.size,
        n_images: cfg.n_images,
        seed: cfg.seed,
        noise_amplitude: cfg.noise_amplitude,
        dither: cfg.dither,
        ramp_min: cfg.ramp_min,
        ramp_max: cfg.ramp_max,
        first_index: 1,
        classes: crate::CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        hue_shift_degrees: HUE_SHIFT_DEGREES.to_vec(),
    };
    let path = dir.join("spec.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&path, e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
