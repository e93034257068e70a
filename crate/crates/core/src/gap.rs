//! Per-class visual gap measurement between image sets: hue histograms,
//! gray-level co-occurrence matrices, the four derived texture features, and
//! correlation reports.

use crate::error::{Error, Result};
use crate::imgproc::{rgb_to_hue, ImageRgb, LabelMap};
use crate::{CLASS_NAMES, NUM_CLASSES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hue angles are discretized to this many bins over [0, 360).
pub const HUE_BINS: usize = 256;

/// Normalized hue distribution of one class within one or more images.
/// Achromatic pixels (r = g = b) have no hue; they are excluded from the
/// bins and tallied separately.
#[derive(Debug, Clone, Serialize)]
pub struct HueHistogram {
    pub bins: Vec<f64>,
    pub pixel_count: u64,
    pub excluded_count: u64,
}

/// Raw bin counts, accumulated image by image before normalizing.
#[derive(Debug, Clone)]
pub struct HueAccumulator {
    counts: Vec<u64>,
    excluded: u64,
}

impl Default for HueAccumulator {
    fn default() -> Self {
        HueAccumulator { counts: vec![0; HUE_BINS], excluded: 0 }
    }
}

impl HueAccumulator {
    pub fn add(&mut self, img: &ImageRgb, labels: &LabelMap, class_id: u8) -> Result<()> {
        if img.width != labels.width || img.height != labels.height {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs labels {}x{}",
                img.width, img.height, labels.width, labels.height
            )));
        }
        for y in 0..img.height {
            for x in 0..img.width {
                if labels.class(x, y) != class_id {
                    continue;
                }
                let [r, g, b] = img.pixel(x, y);
                match rgb_to_hue(r, g, b) {
                    Some(h) => {
                        let bin = ((h / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
                        self.counts[bin] += 1;
                    }
                    None => self.excluded += 1,
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &HueAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.excluded += other.excluded;
    }

    /// Normalizes to a distribution; fails when the class contributed no
    /// chromatic pixel at all.
    pub fn finish(&self, class_id: u8) -> Result<HueHistogram> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            let reason = if self.excluded > 0 {
                "only achromatic pixels"
            } else {
                "no pixels with this class"
            };
            return Err(Error::ClassAbsent { class: class_id as usize, reason: reason.into() });
        }
        Ok(HueHistogram {
            bins: self.counts.iter().map(|&c| c as f64 / total as f64).collect(),
            pixel_count: total,
            excluded_count: self.excluded,
        })
    }
}

/// Hue distribution of one class in a single image.
pub fn hue_histogram(img: &ImageRgb, labels: &LabelMap, class_id: u8) -> Result<HueHistogram> {
    if class_id as usize >= NUM_CLASSES {
        return Err(Error::ClassRange { found: class_id as usize, limit: NUM_CLASSES });
    }
    let mut acc = HueAccumulator::default();
    acc.add(img, labels, class_id)?;
    acc.finish(class_id)
}

/// Normalized gray-level co-occurrence matrix for horizontally neighboring
/// pixel pairs, `cells[i * levels + j]`.
#[derive(Debug, Clone, Serialize)]
pub struct GlcmMatrix {
    pub levels: usize,
    pub cells: Vec<f64>,
    pub pair_count: u64,
}

/// Co-occurrence of quantized gray levels over ordered pairs (p, right
/// neighbor of p) where both pixels carry `class_id`. Gray is the unweighted
/// channel mean, quantized to `floor(gray * levels)` clamped to levels-1.
pub fn glcm(img: &ImageRgb, labels: &LabelMap, class_id: u8, levels: usize) -> Result<GlcmMatrix> {
    if levels < 2 {
        return Err(Error::Config(format!("glcm needs at least 2 gray levels, got {levels}")));
    }
    if img.width != labels.width || img.height != labels.height {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs labels {}x{}",
            img.width, img.height, labels.width, labels.height
        )));
    }
    let quantize = |x: usize, y: usize| -> usize {
        let [r, g, b] = img.pixel(x, y);
        let gray = (r + g + b) / 3.0;
        ((gray * levels as f64) as usize).min(levels - 1)
    };
    let mut counts = vec![0u64; levels * levels];
    let mut pairs = 0u64;
    for y in 0..img.height {
        for x in 0..img.width.saturating_sub(1) {
            if labels.class(x, y) != class_id || labels.class(x + 1, y) != class_id {
                continue;
            }
            counts[quantize(x, y) * levels + quantize(x + 1, y)] += 1;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::ClassAbsent {
            class: class_id as usize,
            reason: "no horizontally adjacent pixel pairs".into(),
        });
    }
    Ok(GlcmMatrix {
        levels,
        cells: counts.iter().map(|&c| c as f64 / pairs as f64).collect(),
        pair_count: pairs,
    })
}

/// Mean of per-image normalized matrices (each image weighs equally
/// regardless of its pair count); pair counts are summed for reporting.
pub fn average_glcm(mats: &[GlcmMatrix]) -> Result<GlcmMatrix> {
    let Some(first) = mats.first() else {
        return Err(Error::Config("no matrices to average".into()));
    };
    if mats.iter().any(|m| m.levels != first.levels) {
        return Err(Error::DimensionMismatch("mixed gray-level counts in average".into()));
    }
    let mut cells = vec![0.0; first.cells.len()];
    let mut pair_count = 0;
    for m in mats {
        for (a, &c) in cells.iter_mut().zip(&m.cells) {
            *a += c;
        }
        pair_count += m.pair_count;
    }
    for c in &mut cells {
        *c /= mats.len() as f64;
    }
    Ok(GlcmMatrix { levels: first.levels, cells, pair_count })
}

/// The four texture statistics read off a normalized GLCM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HaralickFeatures {
    pub contrast: f64,
    pub homogeneity: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl HaralickFeatures {
    pub const NAMES: [&'static str; 4] = ["contrast", "homogeneity", "energy", "entropy"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.contrast, self.homogeneity, self.energy, self.entropy]
    }
}

/// contrast = sum |i-j|^2 g; homogeneity = sum g/(1+|i-j|); energy = sum g^2;
/// entropy = sum -ln(g) g with 0 ln 0 = 0.
pub fn haralick(m: &GlcmMatrix) -> HaralickFeatures {
    let mut f = HaralickFeatures { contrast: 0.0, homogeneity: 0.0, energy: 0.0, entropy: 0.0 };
    for i in 0..m.levels {
        for j in 0..m.levels {
            let g = m.cells[i * m.levels + j];
            let d = (i as f64) - (j as f64);
            f.contrast += d * d * g;
            f.homogeneity += g / (1.0 + d.abs());
            f.energy += g * g;
            if g > 0.0 {
                f.entropy -= g.ln() * g;
            }
        }
    }
    f
}

/// Sample Pearson correlation coefficient. Constant inputs have no defined
/// correlation and are rejected.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "pearson over {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 {
        return Err(Error::ZeroVariance("first argument"));
    }
    if var_b == 0.0 {
        return Err(Error::ZeroVariance("second argument"));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// How per-class hue distributions are built for correlation: one pooled
/// histogram per set, or per-image histograms averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HueMode {
    Pooled,
    PerImageMean,
}

/// Per-(set, class) side of the report.
#[derive(Debug, Clone, Serialize)]
pub struct SetClassStats {
    pub set: String,
    pub present: bool,
    pub images_with_class: usize,
    pub pixel_count: u64,
    pub excluded_count: u64,
    pub features: Option<HaralickFeatures>,
    #[serde(skip)]
    hue: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCorrelation {
    pub set_a: String,
    pub set_b: String,
    pub hue_correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class_id: u8,
    pub class_name: String,
    pub per_set: Vec<SetClassStats>,
    pub correlations: Vec<PairCorrelation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMean {
    pub set_a: String,
    pub set_b: String,
    pub classes_counted: usize,
    pub mean_correlation: Option<f64>,
}

/// Full comparison of two or three image sets over all 8 classes.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub levels: usize,
    pub hue_mode: HueMode,
    pub n_images: usize,
    pub sets: Vec<String>,
    pub classes: Vec<ClassReport>,
    pub pair_means: Vec<PairMean>,
}

/// One named, already-loaded image set.
pub struct NamedSet<'a> {
    pub name: &'a str,
    pub images: &'a [(ImageRgb, LabelMap)],
}

fn set_class_stats(
    set: &NamedSet,
    class_id: u8,
    levels: usize,
    hue_mode: HueMode,
) -> Result<SetClassStats> {
    // Per-image jobs are pure; order is preserved by the indexed collect, so
    // the sequential reduction below is deterministic.
    let per_image: Vec<(Option<GlcmMatrix>, Option<HueHistogram>)> = set
        .images
        .par_iter()
        .map(|(img, labels)| {
            let m = match glcm(img, labels, class_id, levels) {
                Ok(m) => Some(m),
                Err(Error::ClassAbsent { .. }) => None,
                Err(e) => return Err(e),
            };
            let h = match hue_histogram(img, labels, class_id) {
                Ok(h) => Some(h),
                Err(Error::ClassAbsent { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok((m, h))
        })
        .collect::<Result<_>>()?;

    let mats: Vec<GlcmMatrix> = per_image.iter().filter_map(|(m, _)| m.clone()).collect();
    let hists: Vec<&HueHistogram> =
        per_image.iter().filter_map(|(_, h)| h.as_ref()).collect();
    let images_with_class = per_image.iter().filter(|(m, h)| m.is_some() || h.is_some()).count();

    let pixel_count: u64 = hists.iter().map(|h| h.pixel_count).sum();
    let excluded_count: u64 = hists.iter().map(|h| h.excluded_count).sum();

    let hue = if hists.is_empty() {
        None
    } else {
        let mut bins = vec![0.0; HUE_BINS];
        match hue_mode {
            HueMode::Pooled => {
                for h in &hists {
                    for (b, &v) in bins.iter_mut().zip(&h.bins) {
                        *b += v * h.pixel_count as f64;
                    }
                }
                for b in &mut bins {
                    *b /= pixel_count as f64;
                }
            }
            HueMode::PerImageMean => {
                for h in &hists {
                    for (b, &v) in bins.iter_mut().zip(&h.bins) {
                        *b += v;
                    }
                }
                for b in &mut bins {
                    *b /= hists.len() as f64;
                }
            }
        }
        Some(bins)
    };

    let features = if mats.is_empty() { None } else { Some(haralick(&average_glcm(&mats)?)) };
    Ok(SetClassStats {
        set: set.name.to_string(),
        present: features.is_some() || hue.is_some(),
        images_with_class,
        pixel_count,
        excluded_count,
        features,
        hue,
    })
}

/// Compares the sets class by class: averaged-GLCM texture features per set
/// and pairwise hue-distribution correlations, with per-pair means over the
/// classes present on both sides.
pub fn gap_report(sets: &[NamedSet], levels: usize, hue_mode: HueMode) -> Result<GapReport> {
    if sets.len() < 2 || sets.len() > 3 {
        return Err(Error::Config(format!("gap report compares 2 or 3 sets, got {}", sets.len())));
    }
    if sets.iter().any(|s| s.images.is_empty()) {
        return Err(Error::Dataset("empty image set in gap report".into()));
    }
    let n_images = sets.iter().map(|s| s.images.len()).min().unwrap();

    let mut classes = Vec::with_capacity(NUM_CLASSES);
    for class_id in 0..NUM_CLASSES as u8 {
        let per_set: Vec<SetClassStats> = sets
            .iter()
            .map(|s| set_class_stats(s, class_id, levels, hue_mode))
            .collect::<Result<_>>()?;
        let mut correlations = Vec::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let corr = match (&per_set[i].hue, &per_set[j].hue) {
                    (Some(a), Some(b)) => match pearson(a, b) {
                        Ok(c) => Some(c),
                        Err(Error::ZeroVariance(_)) => None,
                        Err(e) => return Err(e),
                    },
                    _ => None,
                };
                correlations.push(PairCorrelation {
                    set_a: sets[i].name.to_string(),
                    set_b: sets[j].name.to_string(),
                    hue_correlation: corr,
                });
            }
        }
        classes.push(ClassReport {
            class_id,
            class_name: CLASS_NAMES[class_id as usize].to_string(),
            per_set,
            correlations,
        });
    }

    let mut pair_means = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let pair_idx = pair_means.len();
            let vals: Vec<f64> = classes
                .iter()
                .filter_map(|c| c.correlations[pair_idx].hue_correlation)
                .collect();
            pair_means.push(PairMean {
                set_a: sets[i].name.to_string(),
                set_b: sets[j].name.to_string(),
                classes_counted: vals.len(),
                mean_correlation: if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                },
            });
        }
    }

    Ok(GapReport {
        levels,
        hue_mode,
        n_images,
        sets: sets.iter().map(|s| s.name.to_string()).collect(),
        classes,
        pair_means,
    })
}

impl GapReport {
    /// One row per (set, class); absent classes say so instead of carrying
    /// zeros.
    pub fn features_csv(&self) -> String {
        let mut out = String::from(
            "set,class_id,class_name,images_with_class,pixel_count,excluded_count,contrast,homogeneity,energy,entropy\n",
        );
        for set in &self.sets {
            for class in &self.classes {
                let s = class.per_set.iter().find(|s| &s.set == set).unwrap();
                match &s.features {
                    Some(f) => out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        set,
                        class.class_id,
                        class.class_name,
                        s.images_with_class,
                        s.pixel_count,
                        s.excluded_count,
                        f.contrast,
                        f.homogeneity,
                        f.energy,
                        f.entropy
                    )),
                    None => out.push_str(&format!(
                        "{},{},{},0,0,0,absent,absent,absent,absent\n",
                        set, class.class_id, class.class_name
                    )),
                }
            }
        }
        out
    }

    /// Per-class correlation for every set pair, with a final mean row over
    /// the classes present in both sets of each pair.
    pub fn correlations_csv(&self) -> String {
        let mut out = String::from("class_id,class_name");
        for pm in &self.pair_means {
            out.push_str(&format!(",corr_{}_vs_{}", pm.set_a, pm.set_b));
        }
        out.push('\n');
        for class in &self.classes {
            out.push_str(&format!("{},{}", class.class_id, class.class_name));
            for c in &class.correlations {
                match c.hue_correlation {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push_str(",absent"),
                }
            }
            out.push('\n');
        }
        out.push_str("mean,");
        for pm in &self.pair_means {
            match pm.mean_correlation {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push_str(",absent"),
            }
        }
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Mean correlation for a named pair (either order).
    pub fn pair_mean(&self, a: &str, b: &str) -> Option<f64> {
        self.pair_means
            .iter()
            .find(|p| (p.set_a == a && p.set_b == b) || (p.set_a == b && p.set_b == a))
            .and_then(|p| p.mean_correlation)
    }

    /// Per-feature mean over classes of |feature(set a) - feature(set b)|,
    /// counting classes present in both sets.
    pub fn feature_gaps(&self, a: &str, b: &str) -> Option<[f64; 4]> {
        let mut sums = [0.0; 4];
        let mut n = 0;
        for class in &self.classes {
            let fa = class.per_set.iter().find(|s| s.set == a)?.features;
            let fb = class.per_set.iter().find(|s| s.set == b)?.features;
            if let (Some(fa), Some(fb)) = (fa, fb) {
                for (k, (x, y)) in fa.as_array().iter().zip(fb.as_array()).enumerate() {
                    sums[k] += (x - y).abs();
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        Some(sums.map(|s| s / n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn uniform_image(w: usize, h: usize, rgb: [f64; 3]) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, rgb);
            }
        }
        img
    }

    fn all_class(w: usize, h: usize, class: u8) -> LabelMap {
        LabelMap { width: w, height: h, data: vec![class; w * h] }
    }

    #[test]
    fn all_red_image_is_a_unit_spike_at_bin_zero() {
        let img = uniform_image(4, 4, [1.0, 0.0, 0.0]);
        let h = hue_histogram(&img, &all_class(4, 4, 0), 0).unwrap();
        assert_eq!(h.bins[0], 1.0);
        assert_eq!(h.bins[1..].iter().sum::<f64>(), 0.0);
        assert_eq!(h.pixel_count, 16);
        assert_eq!(h.excluded_count, 0);
    }

    #[test]
    fn half_red_half_green_splits_between_bins_0_and_85() {
        // Green sits at 120 degrees: floor(120/360*256) = 85.
        let mut img = uniform_image(4, 2, [1.0, 0.0, 0.0]);
        for x in 0..4 {
            img.set_pixel(x, 1, [0.0, 1.0, 0.0]);
        }
        let h = hue_histogram(&img, &all_class(4, 2, 0), 0).unwrap();
        assert_eq!(h.bins[0], 0.5);
        assert_eq!(h.bins[85], 0.5);
    }

    #[test]
    fn absent_class_and_achromatic_only_are_distinct_errors() {
        let img = uniform_image(2, 2, [0.5, 0.5, 0.5]);
        let labels = all_class(2, 2, 0);
        match hue_histogram(&img, &labels, 3) {
            Err(Error::ClassAbsent { class: 3, reason }) => {
                assert!(reason.contains("no pixels"))
            }
            other => panic!("wanted class-absent, got {other:?}"),
        }
        match hue_histogram(&img, &labels, 0) {
            Err(Error::ClassAbsent { class: 0, reason }) => {
                assert!(reason.contains("achromatic"))
            }
            other => panic!("wanted achromatic-only, got {other:?}"),
        }
    }

    #[test]
    fn histogram_normalizes_over_chromatic_pixels_only() {
        let mut img = uniform_image(3, 1, [1.0, 0.0, 0.0]);
        img.set_pixel(2, 0, [0.7, 0.7, 0.7]);
        let h = hue_histogram(&img, &all_class(3, 1, 0), 0).unwrap();
        assert_eq!(h.pixel_count, 2);
        assert_eq!(h.excluded_count, 1);
        assert_relative_eq!(h.bins.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_gray_glcm_is_one_diagonal_cell() {
        let img = uniform_image(4, 4, [0.5, 0.5, 0.5]);
        let m = glcm(&img, &all_class(4, 4, 0), 0, 4).unwrap();
        assert_eq!(m.pair_count, 12);
        let q = 2; // floor(0.5 * 4)
        for i in 0..4 {
            for j in 0..4 {
                let want = if (i, j) == (q, q) { 1.0 } else { 0.0 };
                assert_eq!(m.cells[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn checkerboard_glcm_splits_between_the_two_off_diagonal_cells() {
        let mut img = ImageRgb::new(2, 2);
        img.set_pixel(0, 0, [0.0; 3]);
        img.set_pixel(1, 0, [1.0; 3]);
        img.set_pixel(0, 1, [1.0; 3]);
        img.set_pixel(1, 1, [0.0; 3]);
        let m = glcm(&img, &all_class(2, 2, 0), 0, 2).unwrap();
        assert_eq!(m.pair_count, 2);
        assert_eq!(m.cells, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn glcm_pairs_require_both_pixels_in_class() {
        let img = uniform_image(3, 1, [0.2, 0.2, 0.2]);
        let labels = LabelMap { width: 3, height: 1, data: vec![1, 1, 0] };
        let m = glcm(&img, &labels, 1, 8).unwrap();
        assert_eq!(m.pair_count, 1, "only the (0,1) pair is fully inside class 1");
        assert!(matches!(
            glcm(&img, &labels, 0, 8),
            Err(Error::ClassAbsent { class: 0, .. })
        ));
    }

    /// Brute-force oracle: enumerate every horizontal pair independently of
    /// the implementation's loop structure.
    fn glcm_oracle(img: &ImageRgb, labels: &LabelMap, class_id: u8, levels: usize) -> Vec<u64> {
        let mut counts = vec![0u64; levels * levels];
        for y in 0..img.height {
            for x in 0..img.width {
                if x + 1 >= img.width {
                    continue;
                }
                if labels.class(x, y) == class_id && labels.class(x + 1, y) == class_id {
                    let q = |x: usize| {
                        let [r, g, b] = img.pixel(x, y);
                        (((r + g + b) / 3.0 * levels as f64) as usize).min(levels - 1)
                    };
                    counts[q(x) * levels + q(x + 1)] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn glcm_matches_brute_force_oracle_on_random_images() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..100 {
            let (w, h) = (rng.random_range(2..17), rng.random_range(1..17));
            let mut img = ImageRgb::new(w, h);
            for v in &mut img.data {
                *v = rng.random_range(0.0..1.0);
            }
            let labels = LabelMap {
                width: w,
                height: h,
                data: (0..w * h).map(|_| rng.random_range(0..3u8)).collect(),
            };
            let levels = rng.random_range(2..9);
            let want = glcm_oracle(&img, &labels, 1, levels);
            let total: u64 = want.iter().sum();
            match glcm(&img, &labels, 1, levels) {
                Ok(m) => {
                    assert_eq!(m.pair_count, total);
                    for (cell, &cnt) in m.cells.iter().zip(&want) {
                        assert_eq!(*cell, cnt as f64 / total as f64, "exact, not approximate");
                    }
                }
                Err(Error::ClassAbsent { .. }) => assert_eq!(total, 0),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn haralick_hand_cases() {
        // Single diagonal cell.
        let point = GlcmMatrix { levels: 3, cells: {
            let mut c = vec![0.0; 9];
            c[4] = 1.0;
            c
        }, pair_count: 10 };
        let f = haralick(&point);
        assert_eq!((f.contrast, f.homogeneity, f.energy, f.entropy), (0.0, 1.0, 1.0, 0.0));

        // Checkerboard: half the mass on each off-diagonal cell of a 2x2.
        let checker =
            GlcmMatrix { levels: 2, cells: vec![0.0, 0.5, 0.5, 0.0], pair_count: 2 };
        let f = haralick(&checker);
        assert_relative_eq!(f.contrast, 1.0);
        assert_relative_eq!(f.homogeneity, 0.5);
        assert_relative_eq!(f.energy, 0.5);
        assert_relative_eq!(f.entropy, 2.0f64.ln(), epsilon = 1e-12);

        // Uniform 2x2: energy 1/N^2, entropy 2 ln N.
        let uniform = GlcmMatrix { levels: 2, cells: vec![0.25; 4], pair_count: 4 };
        let f = haralick(&uniform);
        assert_relative_eq!(f.energy, 0.25);
        assert_relative_eq!(f.entropy, 4.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(f.entropy, 1.3863, epsilon = 1e-4);
    }

    #[test]
    fn haralick_bounds_hold_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let levels = rng.random_range(2..17);
            let mut cells: Vec<f64> = (0..levels * levels).map(|_| rng.random_range(0.0..1.0)).collect();
            let sum: f64 = cells.iter().sum();
            for c in &mut cells {
                *c /= sum;
            }
            let f = haralick(&GlcmMatrix { levels, cells, pair_count: 1 });
            assert!(f.energy > 0.0 && f.energy <= 1.0);
            assert!(f.homogeneity > 0.0 && f.homogeneity <= 1.0);
            assert!(f.entropy >= 0.0 && f.entropy <= 2.0 * (levels as f64).ln() + 1e-12);
            assert!(f.contrast >= 0.0 && f.contrast <= ((levels - 1) * (levels - 1)) as f64);
        }
    }

    #[test]
    fn pearson_hand_cases() {
        let h: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_relative_eq!(pearson(&h, &h).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = h.iter().map(|&v| 3.0 - 2.0 * v).collect();
        assert_relative_eq!(pearson(&h, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert!(matches!(
            pearson(&h, &[1.0; 10]),
            Err(Error::ZeroVariance("second argument"))
        ));
    }

    #[test]
    fn pearson_matches_textbook_formula_on_random_vectors() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
            // Oracle: r = (n sum xy - sum x sum y) /
            //             sqrt(n sum x^2 - (sum x)^2) / sqrt(n sum y^2 - (sum y)^2)
            let n = 256.0;
            let (sx, sy): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let sxy: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let sxx: f64 = a.iter().map(|x| x * x).sum();
            let syy: f64 = b.iter().map(|y| y * y).sum();
            let want =
                (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
            let got = pearson(&a, &b).unwrap();
            assert_relative_eq!(got, want, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let a: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ab = pearson(&a, &b).unwrap();
        assert_relative_eq!(ab, pearson(&b, &a).unwrap(), epsilon = 1e-12);
        let scaled: Vec<f64> = a.iter().map(|&v| 4.5 * v + 2.0).collect();
        assert_relative_eq!(ab, pearson(&scaled, &b).unwrap(), epsilon = 1e-12);
    }

    fn one_class_set(rgb: [f64; 3]) -> Vec<(ImageRgb, LabelMap)> {
        vec![(uniform_image(4, 4, rgb), all_class(4, 4, 2))]
    }

    #[test]
    fn identical_sets_correlate_perfectly_with_zero_feature_gap() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut imgs = Vec::new();
        for _ in 0..3 {
            let mut img = ImageRgb::new(6, 6);
            for v in &mut img.data {
                *v = rng.random_range(0.1..0.9);
            }
            let labels = LabelMap {
                width: 6,
                height: 6,
                data: (0..36).map(|_| rng.random_range(0..8u8)).collect(),
            };
            imgs.push((img, labels));
        }
        let report = gap_report(
            &[
                NamedSet { name: "a", images: &imgs },
                NamedSet { name: "b", images: &imgs },
            ],
            16,
            HueMode::Pooled,
        )
        .unwrap();
        for class in &report.classes {
            if let Some(c) = class.correlations[0].hue_correlation {
                assert_relative_eq!(c, 1.0, epsilon = 1e-9);
            }
        }
        let gaps = report.feature_gaps("a", "b").unwrap();
        for g in gaps {
            assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn disjoint_unit_spikes_correlate_at_minus_one_over_255() {
        let red = one_class_set([1.0, 0.0, 0.0]);
        let green = one_class_set([0.0, 1.0, 0.0]);
        let report = gap_report(
            &[
                NamedSet { name: "red", images: &red },
                NamedSet { name: "green", images: &green },
            ],
            8,
            HueMode::Pooled,
        )
        .unwrap();
        let c = report.classes[2].correlations[0].hue_correlation.unwrap();
        assert_relative_eq!(c, -1.0 / 255.0, epsilon = 1e-12);
        // Every other class is absent from both sets.
        for class in &report.classes {
            if class.class_id != 2 {
                assert!(class.correlations[0].hue_correlation.is_none());
                assert!(!class.per_set[0].present);
            }
        }
        assert_eq!(report.pair_means[0].classes_counted, 1);
    }

    #[test]
    fn csv_output_marks_absent_classes() {
        let red = one_class_set([1.0, 0.0, 0.0]);
        let report = gap_report(
            &[
                NamedSet { name: "r1", images: &red },
                NamedSet { name: "r2", images: &red },
            ],
            8,
            HueMode::Pooled,
        )
        .unwrap();
        let features = report.features_csv();
        assert!(features.lines().count() == 1 + 16, "header plus 2 sets x 8 classes");
        assert!(features.contains("absent"));
        let corr = report.correlations_csv();
        assert!(corr.starts_with("class_id,class_name,corr_r1_vs_r2\n"));
        let mean_row = corr.trim_end().lines().last().unwrap();
        let mean: f64 = mean_row.strip_prefix("mean,,").unwrap().parse().unwrap();
        assert_relative_eq!(mean, 1.0, epsilon = 1e-9);
        let json = report.to_json();
        assert!(json.contains("\"pair_means\""));
    }
}
