//! Image and label-map handling: in-memory types, hue conversion, crops,
//! resampling, and strict 8-bit PNG round trips.

use crate::error::{Error, Result};
use std::path::Path;

/// RGB image with f64 channels in [0,1], stored planar (all R, all G, all B).
/// `data[c * width * height + y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb { width, height, data: vec![0.0; 3 * width * height] }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[plane + i] = rgb[1];
        self.data[2 * plane + i] = rgb[2];
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Per-pixel class ids. `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap { width, height, data: vec![0; width * height] }
    }

    #[inline]
    pub fn class(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Hue angle in degrees [0, 360), or `None` for achromatic pixels (r=g=b),
/// which have no defined hue.
///
/// Uses the arccos form: theta = acos(((r-g)+(r-b)) / (2 sqrt((r-g)^2 +
/// (r-b)(g-b)))), with hue = theta when b <= g and 360 - theta otherwise.
pub fn rgb_to_hue(r: f64, g: f64, b: f64) -> Option<f64> {
    let num = 0.5 * ((r - g) + (r - b));
    let den_sq = (r - g) * (r - g) + (r - b) * (g - b);
    if den_sq <= 0.0 {
        return None;
    }
    let cos = (num / den_sq.sqrt()).clamp(-1.0, 1.0);
    let theta = cos.acos().to_degrees();
    let hue = if b <= g { theta } else { 360.0 - theta };
    // 360 - acos(-1)*180/pi can land exactly on 360; fold it back.
    Some(if hue >= 360.0 { 0.0 } else { hue })
}

fn check_rect(rect: CropRect, width: usize, height: usize) -> Result<()> {
    if rect.width == 0
        || rect.height == 0
        || rect.x + rect.width > width
        || rect.y + rect.height > height
    {
        return Err(Error::DimensionMismatch(format!(
            "crop {}x{}+{}+{} outside {}x{} image",
            rect.width, rect.height, rect.x, rect.y, width, height
        )));
    }
    Ok(())
}

pub fn crop_image(img: &ImageRgb, rect: CropRect) -> Result<ImageRgb> {
    check_rect(rect, img.width, img.height)?;
    let mut out = ImageRgb::new(rect.width, rect.height);
    for y in 0..rect.height {
        for x in 0..rect.width {
            out.set_pixel(x, y, img.pixel(rect.x + x, rect.y + y));
        }
    }
    Ok(out)
}

pub fn crop_labels(labels: &LabelMap, rect: CropRect) -> Result<LabelMap> {
    check_rect(rect, labels.width, labels.height)?;
    let mut out = LabelMap::new(rect.width, rect.height);
    for y in 0..rect.height {
        for x in 0..rect.width {
            out.data[y * rect.width + x] = labels.class(rect.x + x, rect.y + y);
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers: destination pixel `d` reads
/// source coordinate `(d + 0.5) * src/dst - 0.5`, edge-clamped. Upscaling a
/// `[0, 1]` row by 2 yields `[0.0, 0.25, 0.75, 1.0]`.
pub fn resample_bilinear(img: &ImageRgb, new_width: usize, new_height: usize) -> Result<ImageRgb> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::DimensionMismatch("resample target has zero extent".into()));
    }
    let mut out = ImageRgb::new(new_width, new_height);
    let sx = img.width as f64 / new_width as f64;
    let sy = img.height as f64 / new_height as f64;
    for dy in 0..new_height {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for dx in 0..new_width {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            let p00 = img.pixel(x0, y0);
            let p10 = img.pixel(x1, y0);
            let p01 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            let mut px = [0.0; 3];
            for c in 0..3 {
                let top = p00[c] * (1.0 - wx) + p10[c] * wx;
                let bot = p01[c] * (1.0 - wx) + p11[c] * wx;
                px[c] = top * (1.0 - wy) + bot * wy;
            }
            out.set_pixel(dx, dy, px);
        }
    }
    Ok(out)
}

/// Nearest-neighbor resampling for label maps; never invents class ids.
/// Destination pixel `d` reads source index `floor((d + 0.5) * src/dst)`.
pub fn resample_nearest_labels(
    labels: &LabelMap,
    new_width: usize,
    new_height: usize,
) -> Result<LabelMap> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::DimensionMismatch("resample target has zero extent".into()));
    }
    let mut out = LabelMap::new(new_width, new_height);
    let sx = labels.width as f64 / new_width as f64;
    let sy = labels.height as f64 / new_height as f64;
    for dy in 0..new_height {
        let y = (((dy as f64 + 0.5) * sy) as usize).min(labels.height - 1);
        for dx in 0..new_width {
            let x = (((dx as f64 + 0.5) * sx) as usize).min(labels.width - 1);
            out.data[dy * new_width + dx] = labels.class(x, y);
        }
    }
    Ok(out)
}

/// Loads an 8-bit RGB PNG. Any other layout (gray, palette, alpha, 16-bit)
/// is rejected rather than silently converted.
pub fn load_rgb(path: &Path) -> Result<ImageRgb> {
    let dynimg = image::open(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let image::DynamicImage::ImageRgb8(rgb) = dynimg else {
        return Err(Error::parse(path, "expected an 8-bit RGB image"));
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = ImageRgb::new(w, h);
    let plane = w * h;
    for (i, px) in rgb.pixels().enumerate() {
        out.data[i] = px.0[0] as f64 / 255.0;
        out.data[plane + i] = px.0[1] as f64 / 255.0;
        out.data[2 * plane + i] = px.0[2] as f64 / 255.0;
    }
    Ok(out)
}

/// Saves as 8-bit RGB PNG; channels are clamped to [0,1] and rounded.
pub fn save_rgb(path: &Path, img: &ImageRgb) -> Result<()> {
    let (w, h) = (img.width, img.height);
    let plane = w * h;
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = (img.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Loads a label map from an 8-bit grayscale PNG whose pixel values are
/// class ids; every id must be below `classes`.
pub fn load_labels(path: &Path, classes: usize) -> Result<LabelMap> {
    let dynimg = image::open(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let image::DynamicImage::ImageLuma8(gray) = dynimg else {
        return Err(Error::parse(path, "expected an 8-bit grayscale label image"));
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<u8> = gray.pixels().map(|p| p.0[0]).collect();
    if let Some(&bad) = data.iter().find(|&&v| v as usize >= classes) {
        return Err(Error::ClassRange { found: bad as usize, limit: classes });
    }
    Ok(LabelMap { width: w, height: h, data })
}

pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let buf = image::GrayImage::from_raw(
        labels.width as u32,
        labels.height as u32,
        labels.data.clone(),
    )
    .ok_or_else(|| Error::Internal("label buffer does not match its extents".into()))?;
    buf.save(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}
