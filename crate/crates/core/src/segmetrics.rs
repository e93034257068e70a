//! Pixel-level confusion matrix and intersection-over-union scoring.

use crate::error::{Error, Result};
use crate::imgproc::LabelMap;
use serde::Serialize;

/// Class-by-class pixel counts; row = ground-truth class, column = predicted
/// class. `counts[gt * classes + pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add_pair(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.width != pred.width || gt.height != pred.height {
            return Err(Error::DimensionMismatch(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.width, gt.height, pred.width, pred.height
            )));
        }
        for (&g, &p) in gt.data.iter().zip(&pred.data) {
            if g as usize >= self.classes {
                return Err(Error::ClassRange { found: g as usize, limit: self.classes });
            }
            if p as usize >= self.classes {
                return Err(Error::ClassRange { found: p as usize, limit: self.classes });
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Merges another matrix; counts are additive over dataset partitions.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::DimensionMismatch("merging matrices of different size".into()));
        }
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// The opposite row/column convention, for comparing against readings
    /// that treat rows as predictions.
    pub fn transpose(&self) -> ConfusionMatrix {
        let mut t = ConfusionMatrix::new(self.classes);
        for i in 0..self.classes {
            for j in 0..self.classes {
                t.counts[j * self.classes + i] = self.count(i, j);
            }
        }
        t
    }

    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("gt_class");
        for name in class_names {
            out.push_str(&format!(",pred_{name}"));
        }
        out.push('\n');
        for (i, name) in class_names.iter().enumerate().take(self.classes) {
            out.push_str(name);
            for j in 0..self.classes {
                out.push_str(&format!(",{}", self.count(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion counts pooled over a sequence of (ground truth, prediction)
/// map pairs.
pub fn confusion_matrix(pairs: &[(&LabelMap, &LabelMap)], classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(classes);
    for (gt, pred) in pairs {
        m.add_pair(gt, pred)?;
    }
    Ok(m)
}

/// Per-class and averaged intersection-over-union.
#[derive(Debug, Clone, Serialize)]
pub struct IouReport {
    /// `None` marks a class absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over present classes; `None` when nothing is present.
    pub mean: Option<f64>,
    /// Mean over all classes with absent classes contributing 0 (the
    /// divide-by-L-unconditionally reading).
    pub strict_mean: f64,
    pub present_classes: usize,
}

/// Per-class IOU = C_ii / (G_i + P_i - C_ii) where G_i is the row sum and
/// P_i the column sum. Classes with G_i + P_i = 0 are flagged absent and
/// excluded from `mean`.
pub fn mean_iou(c: &ConfusionMatrix) -> IouReport {
    let l = c.classes;
    let mut per_class = Vec::with_capacity(l);
    let mut sum = 0.0;
    let mut present = 0;
    for i in 0..l {
        let g: u64 = (0..l).map(|j| c.count(i, j)).sum();
        let p: u64 = (0..l).map(|j| c.count(j, i)).sum();
        if g + p == 0 {
            per_class.push(None);
            continue;
        }
        let inter = c.count(i, i);
        let union = g + p - inter;
        let iou = inter as f64 / union as f64;
        per_class.push(Some(iou));
        sum += iou;
        present += 1;
    }
    IouReport {
        per_class,
        mean: if present > 0 { Some(sum / present as f64) } else { None },
        strict_mean: sum / l as f64,
        present_classes: present,
    }
}

impl IouReport {
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut header = String::from("mean,strict_mean,present_classes");
        let mut row = format!(
            "{},{},{}",
            self.mean.map_or("absent".into(), |m| m.to_string()),
            self.strict_mean,
            self.present_classes
        );
        for (name, iou) in class_names.iter().zip(&self.per_class) {
            header.push_str(&format!(",{name}"));
            match iou {
                Some(v) => row.push_str(&format!(",{v}")),
                None => row.push_str(",absent"),
            }
        }
        format!("{header}\n{row}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn map(w: usize, h: usize, data: Vec<u8>) -> LabelMap {
        LabelMap { width: w, height: h, data }
    }

    #[test]
    fn equal_maps_give_a_diagonal_matrix_and_perfect_iou() {
        let m = map(2, 2, vec![0, 1, 2, 3]);
        let c = confusion_matrix(&[(&m, &m)], 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j && i < 4 { 1 } else { 0 };
                assert_eq!(c.count(i, j), want);
            }
        }
        let report = mean_iou(&c);
        assert_eq!(report.mean, Some(1.0));
        assert_eq!(report.present_classes, 4);
        assert_eq!(report.strict_mean, 0.5, "four absent classes count as zero");
    }

    #[test]
    fn hand_enumerated_four_pixel_case() {
        let gt = map(4, 1, vec![0, 0, 1, 1]);
        let pred = map(4, 1, vec![0, 1, 1, 1]);
        let c = confusion_matrix(&[(&gt, &pred)], 2).unwrap();
        assert_eq!(c.counts, vec![1, 1, 0, 2]);
        let report = mean_iou(&c);
        assert_eq!(report.per_class[0], Some(0.5));
        assert_eq!(report.per_class[1], Some(2.0 / 3.0));
        assert_relative_eq!(report.mean.unwrap(), 0.5833333333333333, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let gt = map(2, 1, vec![0, 0]);
        let pred = map(2, 1, vec![1, 1]);
        let report = mean_iou(&confusion_matrix(&[(&gt, &pred)], 2).unwrap());
        assert_eq!(report.mean, Some(0.0));
    }

    #[test]
    fn empty_pair_list_is_an_all_zero_matrix() {
        let c = confusion_matrix(&[], 8).unwrap();
        assert_eq!(c.total(), 0);
        let report = mean_iou(&c);
        assert_eq!(report.mean, None);
        assert_eq!(report.present_classes, 0);
        assert!(report.per_class.iter().all(Option::is_none));
    }

    #[test]
    fn dimension_mismatch_and_class_range_are_rejected() {
        let a = map(2, 1, vec![0, 0]);
        let b = map(1, 2, vec![0, 0]);
        assert!(confusion_matrix(&[(&a, &b)], 8).is_err());
        let big = map(2, 1, vec![0, 9]);
        assert!(matches!(
            confusion_matrix(&[(&a, &big)], 8),
            Err(Error::ClassRange { found: 9, limit: 8 })
        ));
    }

    #[test]
    fn counts_are_additive_over_partitions() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let rand_map = |rng: &mut ChaCha12Rng| {
            map(4, 3, (0..12).map(|_| rng.random_range(0..8u8)).collect())
        };
        let pairs: Vec<(LabelMap, LabelMap)> =
            (0..6).map(|_| (rand_map(&mut rng), rand_map(&mut rng))).collect();
        let refs: Vec<(&LabelMap, &LabelMap)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let whole = confusion_matrix(&refs, 8).unwrap();
        let mut merged = confusion_matrix(&refs[..2], 8).unwrap();
        merged.merge(&confusion_matrix(&refs[2..], 8).unwrap()).unwrap();
        assert_eq!(whole, merged);
    }

    #[test]
    fn transpose_swaps_the_conventions() {
        let gt = map(4, 1, vec![0, 0, 1, 1]);
        let pred = map(4, 1, vec![0, 1, 1, 1]);
        let c = confusion_matrix(&[(&gt, &pred)], 2).unwrap();
        assert_eq!(c.transpose().counts, vec![1, 0, 1, 2]);
        assert_eq!(c.transpose().transpose(), c);
    }

    /// Set-theoretic oracle: per-class |intersection| / |union| taken
    /// directly from the pixel sets.
    fn iou_oracle(pairs: &[(&LabelMap, &LabelMap)], classes: usize) -> Vec<Option<f64>> {
        (0..classes as u8)
            .map(|c| {
                let mut inter = 0u64;
                let mut union = 0u64;
                for (gt, pred) in pairs {
                    for (&g, &p) in gt.data.iter().zip(&pred.data) {
                        if g == c && p == c {
                            inter += 1;
                        }
                        if g == c || p == c {
                            union += 1;
                        }
                    }
                }
                if union == 0 { None } else { Some(inter as f64 / union as f64) }
            })
            .collect()
    }

    #[test]
    fn iou_matches_the_set_theoretic_oracle_on_random_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for trial in 0..100 {
            let (w, h) = (rng.random_range(1..9), rng.random_range(1..9));
            let classes = rng.random_range(2..9);
            let rand_map = |rng: &mut ChaCha12Rng| {
                map(w, h, (0..w * h).map(|_| rng.random_range(0..classes as u8)).collect())
            };
            let pairs: Vec<(LabelMap, LabelMap)> =
                (0..rng.random_range(1..4)).map(|_| (rand_map(&mut rng), rand_map(&mut rng))).collect();
            let refs: Vec<(&LabelMap, &LabelMap)> = pairs.iter().map(|(a, b)| (a, b)).collect();

            let want = iou_oracle(&refs, classes);
            let got = mean_iou(&confusion_matrix(&refs, classes).unwrap());
            assert_eq!(got.per_class.len(), want.len());
            for (g, w) in got.per_class.iter().zip(&want) {
                match (g, w) {
                    (Some(g), Some(w)) => assert_relative_eq!(g, w, epsilon = 1e-12),
                    (None, None) => {}
                    other => panic!("trial {trial}: presence mismatch {other:?}"),
                }
            }
            let oracle_vals: Vec<f64> = want.iter().flatten().copied().collect();
            if oracle_vals.is_empty() {
                assert_eq!(got.mean, None);
            } else {
                let want_mean = oracle_vals.iter().sum::<f64>() / oracle_vals.len() as f64;
                assert_relative_eq!(got.mean.unwrap(), want_mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn iou_is_invariant_under_consistent_relabeling() {
        let gt = map(4, 2, vec![0, 0, 1, 1, 2, 2, 0, 1]);
        let pred = map(4, 2, vec![0, 1, 1, 1, 2, 0, 0, 2]);
        let perm = |m: &LabelMap| {
            // swap classes 0 and 2
            map(m.width, m.height, m.data.iter().map(|&v| [2u8, 1, 0][v as usize]).collect())
        };
        let a = mean_iou(&confusion_matrix(&[(&gt, &pred)], 3).unwrap());
        let b = mean_iou(&confusion_matrix(&[(&perm(&gt), &perm(&pred))], 3).unwrap());
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.per_class[0], b.per_class[2]);
    }

    #[test]
    fn csv_layout_is_stable() {
        let gt = map(4, 1, vec![0, 0, 1, 1]);
        let pred = map(4, 1, vec![0, 1, 1, 1]);
        let c = confusion_matrix(&[(&gt, &pred)], 2).unwrap();
        assert_eq!(c.to_csv(&["bg", "fg"]), "gt_class,pred_bg,pred_fg\nbg,1,1\nfg,0,2\n");
        let report = mean_iou(&c);
        let csv = report.to_csv(&["bg", "fg"]);
        assert!(csv.starts_with("mean,strict_mean,present_classes,bg,fg\n"));
        assert!(csv.contains("0.5833333333333333"));
    }
}
