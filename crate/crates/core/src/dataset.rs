//! On-disk dataset layout and range expressions.
//!
//! A dataset directory holds `rgb/NNNN.png` and `label/NNNN.png` pairs with
//! 1-based, 4-digit, zero-padded indices. Commands select images with range
//! expressions like `empirical[1-30]` (inclusive on both ends); the name
//! resolves to a directory through configuration.

use crate::error::{Error, Result};
use crate::imgproc::{self, ImageRgb, LabelMap};
use std::path::PathBuf;

/// File name for a 1-based image index: `42` becomes `0042.png`.
pub fn image_name(index: u32) -> String {
    format!("{index:04}.png")
}

/// A resolved set of images: a directory plus the selected indices.
#[derive(Debug, Clone)]
pub struct DatasetRef {
    pub root: PathBuf,
    pub indices: Vec<u32>,
}

impl DatasetRef {
    pub fn new(root: PathBuf, first: u32, last: u32) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::Dataset(format!("bad index range {first}-{last}")));
        }
        Ok(DatasetRef { root, indices: (first..=last).collect() })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn rgb_path(&self, index: u32) -> PathBuf {
        self.root.join("rgb").join(image_name(index))
    }

    pub fn label_path(&self, index: u32) -> PathBuf {
        self.root.join("label").join(image_name(index))
    }

    pub fn load_image(&self, index: u32) -> Result<ImageRgb> {
        imgproc::load_rgb(&self.rgb_path(index))
    }

    pub fn load_labels(&self, index: u32, classes: usize) -> Result<LabelMap> {
        imgproc::load_labels(&self.label_path(index), classes)
    }

    /// Checks that every selected file exists before any long-running work
    /// touches the set. With `require_labels` the label files must be
    /// present too.
    pub fn validate(&self, require_labels: bool) -> Result<()> {
        for &i in &self.indices {
            let rgb = self.rgb_path(i);
            if !rgb.is_file() {
                return Err(Error::Dataset(format!("missing image {}", rgb.display())));
            }
            if require_labels {
                let lab = self.label_path(i);
                if !lab.is_file() {
                    return Err(Error::Dataset(format!("missing label map {}", lab.display())));
                }
            }
        }
        Ok(())
    }
}

/// Splits `name[a-b]` into the set name and its inclusive 1-based range.
pub fn parse_range(expr: &str) -> Result<(String, u32, u32)> {
    let bad = || Error::Dataset(format!("'{expr}' is not of the form name[first-last]"));
    let open = expr.find('[').ok_or_else(bad)?;
    let name = &expr[..open];
    let rest = &expr[open + 1..];
    let close = rest.find(']').ok_or_else(bad)?;
    if !rest[close + 1..].is_empty() || name.is_empty() {
        return Err(bad());
    }
    let (a, b) = rest[..close].split_once('-').ok_or_else(bad)?;
    let first: u32 = a.parse().map_err(|_| bad())?;
    let last: u32 = b.parse().map_err(|_| bad())?;
    if first == 0 || last < first {
        return Err(Error::Dataset(format!(
            "range in '{expr}' must be 1-based with first <= last"
        )));
    }
    Ok((name.to_string(), first, last))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_become_zero_padded_names() {
        assert_eq!(image_name(1), "0001.png");
        assert_eq!(image_name(42), "0042.png");
        assert_eq!(image_name(1234), "1234.png");
    }

    #[test]
    fn range_expressions_parse() {
        assert_eq!(parse_range("empirical[1-30]").unwrap(), ("empirical".into(), 1, 30));
        assert_eq!(parse_range("x[7-7]").unwrap(), ("x".into(), 7, 7));
        for bad in ["empirical", "emp[1-30", "[1-3]", "x[0-3]", "x[5-2]", "x[a-b]", "x[1-2]z"] {
            assert!(parse_range(bad).is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn validate_reports_the_missing_file() {
        let dir = std::env::temp_dir().join("domaingap-dataset-tests");
        std::fs::create_dir_all(dir.join("rgb")).unwrap();
        std::fs::create_dir_all(dir.join("label")).unwrap();
        let img = ImageRgb::new(2, 2);
        imgproc::save_rgb(&dir.join("rgb").join("0001.png"), &img).unwrap();
        imgproc::save_labels(&dir.join("label").join("0001.png"), &LabelMap::new(2, 2)).unwrap();

        let ok = DatasetRef::new(dir.clone(), 1, 1).unwrap();
        ok.validate(true).unwrap();
        let missing = DatasetRef::new(dir.clone(), 1, 2).unwrap();
        assert!(matches!(missing.validate(false), Err(Error::Dataset(_))));
    }
}
