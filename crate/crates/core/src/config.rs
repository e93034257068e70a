//! TOML configuration: one file collects the knobs of every stage plus a
//! table naming dataset directories. [`Config::EXAMPLE`] is the annotated
//! schema reference; every field is optional and falls back to the toy
//! defaults baked into each stage's config type.

use crate::dataset::{parse_range, DatasetRef};
use crate::error::{Error, Result};
use crate::gap::HueMode;
use crate::segnet::SegConfig;
use crate::toydata::ToyConfig;
use crate::translator::TranslatorConfig;
use crate::NUM_CLASSES;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Gap report knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSettings {
    /// Gray levels for the co-occurrence matrices.
    pub levels: usize,
    /// Images per set to include; 0 means every selected image.
    pub n_images: usize,
    pub hue_mode: HueMode,
    /// Class ids to report; empty means all 8.
    pub classes: Vec<u8>,
}

impl Default for GapSettings {
    fn default() -> Self {
        GapSettings { levels: 16, n_images: 0, hue_mode: HueMode::Pooled, classes: Vec::new() }
    }
}

impl GapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!("gap levels {} must be at least 2", self.levels)));
        }
        for &c in &self.classes {
            if c as usize >= NUM_CLASSES {
                return Err(Error::ClassRange { found: c as usize, limit: NUM_CLASSES });
            }
        }
        Ok(())
    }

    /// The class ids to report, in order.
    pub fn class_list(&self) -> Vec<u8> {
        if self.classes.is_empty() {
            (0..NUM_CLASSES as u8).collect()
        } else {
            self.classes.clone()
        }
    }
}

/// Which schemes to run, with which seeds, on which set expressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub schemes: Vec<String>,
    pub seeds: Vec<u64>,
    pub emp_train: String,
    pub emp_test: String,
    pub syn_train: String,
    pub syn_test: String,
    pub trans_train: String,
    pub trans_test: String,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        // Index ranges keep every test-set layout out of every training
        // set: geometry is shared across styles per index, so the test
        // indices 91-100 appear in no training range.
        ExperimentSettings {
            schemes: ["A", "B", "C", "D", "E", "F", "G"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2],
            emp_train: "textured[1-30]".into(),
            emp_test: "textured[91-100]".into(),
            syn_train: "clean[31-90]".into(),
            syn_test: "clean[91-100]".into(),
            trans_train: "translated[31-90]".into(),
            trans_test: "translated[91-100]".into(),
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiments.seeds must not be empty".into()));
        }
        for s in &self.schemes {
            crate::experiments::Scheme::parse(s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub toydata: ToyConfig,
    pub gap: GapSettings,
    pub translator: TranslatorConfig,
    pub segnet: SegConfig,
    /// Set name to directory. Relative directories resolve against the
    /// output directory, so one config works for any --out.
    pub datasets: BTreeMap<String, String>,
    pub experiments: ExperimentSettings,
}

/// Annotated configuration schema; `--config` files may set any subset.
pub const EXAMPLE: &str = r#"# Every key is optional; unset keys use the toy defaults shown here.

[toydata]
size = 64              # square image extent, >= 32 and divisible by 4
n_images = 100         # images per domain
seed = 0
noise_amplitude = 0.08 # additive noise in the textured style
dither = 0.01          # faint per-pixel dither in the clean style
ramp_min = 0.25        # illumination ramp strength range (textured)
ramp_max = 0.45

[gap]
levels = 16            # gray levels for co-occurrence statistics
n_images = 0           # images per set in reports; 0 = all selected
hue_mode = "pooled"    # or "per_image_mean"
classes = []           # class ids to report; [] = all 8

[translator]
nf = 16                # base feature width (full-scale preset: 50)
n_res_blocks = 2       # residual blocks (full-scale preset: 6)
lr = 2e-4
beta1 = 0.5
lambda_cycle_xy = 10.0
lambda_cycle_yx = 10.0
identity_weight = 0.0  # 0 disables the identity term
replay_buffer = false  # feed discriminators from a pool of past fakes
iterations = 2000
batch = 1
image_size = 64        # must be divisible by 4
seed = 0
checkpoint_every = 0   # 0 = only the final checkpoint

[segnet]
nf = 8
dropout = 0.5
lr = 1e-3
beta1 = 0.9
iterations = 600
finetune_iterations = 0  # 0 = iterations / 4
batch = 4
seed = 0

# Set names used in range expressions like "textured[1-30]". Relative
# paths resolve against the --out directory.
[datasets]
clean = "data/clean"
textured = "data/textured"
translated = "translated"

[experiments]
schemes = ["A", "B", "C", "D", "E", "F", "G"]
seeds = [0, 1, 2]
emp_train = "textured[1-30]"
emp_test = "textured[91-100]"
syn_train = "clean[31-90]"
syn_test = "clean[91-100]"
trans_train = "translated[31-90]"
trans_test = "translated[91-100]"
"#;

impl Config {
    /// The built-in defaults, including the standard dataset names.
    pub fn toy_default() -> Config {
        let mut datasets = BTreeMap::new();
        datasets.insert("clean".to_string(), "data/clean".to_string());
        datasets.insert("textured".to_string(), "data/textured".to_string());
        datasets.insert("translated".to_string(), "translated".to_string());
        Config { datasets, ..Config::default() }
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        // A config that names no datasets still gets the standard names.
        for (name, dir) in Config::toy_default().datasets {
            cfg.datasets.entry(name).or_insert(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.toydata.validate()?;
        self.gap.validate()?;
        self.translator.validate()?;
        self.segnet.validate()?;
        self.experiments.validate()
    }

    fn dataset_dir(&self, name: &str, out_dir: &Path) -> PathBuf {
        let raw = self.datasets.get(name).map_or(name, String::as_str);
        let p = Path::new(raw);
        if p.is_absolute() {
            p.to_path_buf()
        } else if self.datasets.contains_key(name) {
            out_dir.join(p)
        } else {
            // A literal path given on the command line stays relative to
            // the working directory.
            p.to_path_buf()
        }
    }

    /// Resolves `name[first-last]` through the datasets table, or a bare
    /// directory by scanning consecutive indices from 1.
    pub fn resolve_set(&self, expr: &str, out_dir: &Path) -> Result<DatasetRef> {
        if expr.contains('[') {
            let (name, first, last) = parse_range(expr)?;
            return DatasetRef::new(self.dataset_dir(&name, out_dir), first, last);
        }
        let root = self.dataset_dir(expr, out_dir);
        let mut last = 0u32;
        while root.join("rgb").join(crate::dataset::image_name(last + 1)).is_file() {
            last += 1;
        }
        if last == 0 {
            return Err(Error::Dataset(format!(
                "no rgb/0001.png under {}; nothing to select",
                root.display()
            )));
        }
        DatasetRef::new(root, 1, last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses_and_equals_defaults() {
        let parsed: Config = toml::from_str(EXAMPLE).unwrap();
        parsed.validate().unwrap();
        let dflt = Config::toy_default();
        assert_eq!(toml::to_string(&parsed).unwrap(), toml::to_string(&dflt).unwrap());
    }

    #[test]
    fn checked_in_example_file_matches_the_embedded_schema() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config.example.toml");
        let on_disk = std::fs::read_to_string(path).unwrap();
        assert_eq!(on_disk, EXAMPLE, "config.example.toml drifted from config::EXAMPLE");
    }

    #[test]
    fn empty_config_gets_toy_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg.gap.levels, 16);
        assert_eq!(cfg.translator.nf, 16);
        assert_eq!(cfg.segnet.batch, 4);
        assert_eq!(cfg.toydata.n_images, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[gap]\nlevles = 16\n").is_err());
        assert!(toml::from_str::<Config>("[transaltor]\nnf = 4\n").is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let cfg: Config = toml::from_str("[gap]\nlevels = 1\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg: Config = toml::from_str("[gap]\nclasses = [8]\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ClassRange { .. })));
        let cfg: Config = toml::from_str("[experiments]\nschemes = [\"H\"]\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: Config = toml::from_str("[translator]\nimage_size = 50\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn named_sets_resolve_against_the_output_directory() {
        let cfg = Config::toy_default();
        let out = Path::new("/tmp/run");
        let ds = cfg.resolve_set("textured[1-30]", out).unwrap();
        assert_eq!(ds.root, Path::new("/tmp/run/data/textured"));
        assert_eq!(ds.indices.len(), 30);
        assert_eq!((ds.indices[0], *ds.indices.last().unwrap()), (1, 30));
    }

    #[test]
    fn unnamed_ranged_sets_are_working_directory_paths() {
        let cfg = Config::toy_default();
        let ds = cfg.resolve_set("some/dir[2-3]", Path::new("/tmp/run")).unwrap();
        assert_eq!(ds.root, Path::new("some/dir"));
        assert_eq!(ds.indices, vec![2, 3]);
    }

    #[test]
    fn bare_directory_scan_counts_consecutive_files() {
        let dir = std::env::temp_dir().join("domaingap-config-tests/scan");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(dir.join("rgb")).unwrap();
        for i in [1u32, 2, 3, 5] {
            let img = crate::imgproc::ImageRgb::new(2, 2);
            crate::imgproc::save_rgb(
                &dir.join("rgb").join(crate::dataset::image_name(i)),
                &img,
            )
            .unwrap();
        }
        let cfg = Config::toy_default();
        let ds = cfg.resolve_set(dir.to_str().unwrap(), Path::new("/nowhere")).unwrap();
        // The gap at index 4 ends the scan; 0005.png is not selected.
        assert_eq!(ds.indices, vec![1, 2, 3]);

        let empty = std::env::temp_dir().join("domaingap-config-tests/none");
        std::fs::create_dir_all(empty.join("rgb")).unwrap();
        assert!(cfg.resolve_set(empty.to_str().unwrap(), Path::new("/nowhere")).is_err());
    }
}
