//! The seven-scheme evaluation protocol: segmentation networks trained on
//! synthetic, translated, or sensor-style sets, optionally fine-tuned, and
//! scored by mean IOU on a held-out set. Scheme letters follow the fixed
//! table in [`Scheme::spec`].

use crate::dataset::DatasetRef;
use crate::error::{Error, Result};
use crate::imgproc::{ImageRgb, LabelMap};
use crate::segmetrics::{confusion_matrix, mean_iou, ConfusionMatrix, IouReport};
use crate::segnet::{SegConfig, SegModel};
use crate::translator::{Direction, TranslatorPair};
use crate::{CLASS_NAMES, NUM_CLASSES};
use std::fmt::Write as _;

/// Images with pixel-aligned label maps.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub images: Vec<ImageRgb>,
    pub labels: Vec<LabelMap>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads every indexed image/label pair of a dataset directory.
    pub fn from_dataset(ds: &DatasetRef) -> Result<Self> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for &index in &ds.indices {
            images.push(ds.load_image(index)?);
            labels.push(ds.load_labels(index, NUM_CLASSES)?);
        }
        Ok(LabeledSet { images, labels })
    }
}

/// Runs every image of `set` through the translator, keeping the original
/// label maps: translation changes style, never geometry.
pub fn translate_set(
    pair: &mut TranslatorPair,
    set: &LabeledSet,
    dir: Direction,
) -> Result<LabeledSet> {
    let mut images = Vec::with_capacity(set.len());
    for img in &set.images {
        images.push(pair.translate(img, dir)?);
    }
    Ok(LabeledSet { images, labels: set.labels.clone() })
}

/// The six roles a set can play in the scheme table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKey {
    SynTrain,
    SynTest,
    EmpTrain,
    EmpTest,
    TransTrain,
    TransTest,
}

impl SetKey {
    pub fn as_str(self) -> &'static str {
        match self {
            SetKey::SynTrain => "syn_train",
            SetKey::SynTest => "syn_test",
            SetKey::EmpTrain => "emp_train",
            SetKey::EmpTest => "emp_test",
            SetKey::TransTrain => "trans_train",
            SetKey::TransTest => "trans_test",
        }
    }
}

/// All sets one full run needs. The translated sets only exist after a
/// translator has been trained, so they are optional until then.
#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    pub syn_train: LabeledSet,
    pub syn_test: LabeledSet,
    pub emp_train: LabeledSet,
    pub emp_test: LabeledSet,
    pub trans_train: Option<LabeledSet>,
    pub trans_test: Option<LabeledSet>,
}

impl ExperimentData {
    pub fn set(&self, key: SetKey) -> Result<&LabeledSet> {
        let found = match key {
            SetKey::SynTrain => Some(&self.syn_train),
            SetKey::SynTest => Some(&self.syn_test),
            SetKey::EmpTrain => Some(&self.emp_train),
            SetKey::EmpTest => Some(&self.emp_test),
            SetKey::TransTrain => self.trans_train.as_ref(),
            SetKey::TransTest => self.trans_test.as_ref(),
        };
        match found {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(Error::Config(format!(
                "scheme needs the {} set, which is missing or empty",
                key.as_str()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

/// One row of the scheme table: what to train on, optionally adapt to, and
/// score against.
#[derive(Debug, Clone, Copy)]
pub struct SchemeSpec {
    pub id: Scheme,
    pub train: SetKey,
    pub finetune: Option<SetKey>,
    pub test: SetKey,
}

impl Scheme {
    pub const ALL: [Scheme; 7] =
        [Scheme::A, Scheme::B, Scheme::C, Scheme::D, Scheme::E, Scheme::F, Scheme::G];

    pub fn letter(self) -> char {
        match self {
            Scheme::A => 'A',
            Scheme::B => 'B',
            Scheme::C => 'C',
            Scheme::D => 'D',
            Scheme::E => 'E',
            Scheme::F => 'F',
            Scheme::G => 'G',
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scheme::A),
            "B" => Ok(Scheme::B),
            "C" => Ok(Scheme::C),
            "D" => Ok(Scheme::D),
            "E" => Ok(Scheme::E),
            "F" => Ok(Scheme::F),
            "G" => Ok(Scheme::G),
            other => Err(Error::Config(format!("unknown scheme {other}"))),
        }
    }

    pub fn spec(self) -> SchemeSpec {
        let (train, finetune, test) = match self {
            Scheme::A => (SetKey::EmpTrain, None, SetKey::EmpTest),
            Scheme::B => (SetKey::SynTrain, None, SetKey::SynTest),
            Scheme::C => (SetKey::SynTrain, None, SetKey::EmpTest),
            Scheme::D => (SetKey::SynTrain, Some(SetKey::EmpTrain), SetKey::EmpTest),
            Scheme::E => (SetKey::TransTrain, None, SetKey::TransTest),
            Scheme::F => (SetKey::TransTrain, None, SetKey::EmpTest),
            Scheme::G => (SetKey::TransTrain, Some(SetKey::EmpTrain), SetKey::EmpTest),
        };
        SchemeSpec { id: self, train, finetune, test }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scheme::A => "sensor-style baseline: train and test on sensor-style images",
            Scheme::B => "synthetic baseline: train and test on synthetic images",
            Scheme::C => "synthetic bootstrap tested on sensor-style images",
            Scheme::D => "synthetic bootstrap fine-tuned on sensor-style images",
            Scheme::E => "translated baseline: train and test on translated images",
            Scheme::F => "translated bootstrap tested on sensor-style images",
            Scheme::G => "translated bootstrap fine-tuned on sensor-style images",
        }
    }
}

/// Outcome of one (scheme, seed) run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub report: IouReport,
    pub train_iterations: u64,
    pub finetune_iterations: u64,
    /// Reported to stderr only; result files stay byte-stable.
    pub wall_seconds: f64,
}

/// Predicts every image of `set` and pools the confusion counts.
pub fn evaluate(model: &mut SegModel, set: &LabeledSet) -> Result<(ConfusionMatrix, IouReport)> {
    if set.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut confusion = ConfusionMatrix::new(NUM_CLASSES);
    for (img, lab) in set.images.iter().zip(&set.labels) {
        let pred = model.predict(img)?;
        confusion.merge(&confusion_matrix(&[(lab, &pred)], NUM_CLASSES)?)?;
    }
    let report = mean_iou(&confusion);
    Ok((confusion, report))
}

/// Trains a fresh network per the scheme's row and scores it.
pub fn run_experiment(
    scheme: Scheme,
    data: &ExperimentData,
    cfg: &SegConfig,
) -> Result<ExperimentResult> {
    let spec = scheme.spec();
    let train = data.set(spec.train)?;
    let test = data.set(spec.test)?;
    let finetune = spec.finetune.map(|k| data.set(k)).transpose()?;

    let started = std::time::Instant::now();
    let mut model = SegModel::new(cfg.clone())?;
    let label = format!("scheme {}", scheme.letter());
    model.train(&train.images, &train.labels, cfg.iterations, &label)?;
    let mut finetune_iterations = 0;
    if let Some(ft) = finetune {
        model.finetune(&ft.images, &ft.labels)?;
        finetune_iterations = cfg.effective_finetune_iterations();
    }
    let (_, report) = evaluate(&mut model, test)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    eprintln!(
        "[experiment] scheme {} seed {} mean IOU {} ({:.1}s)",
        scheme.letter(),
        cfg.seed,
        report.mean.map_or_else(|| "n/a".into(), |m| format!("{m:.4}")),
        wall_seconds
    );
    Ok(ExperimentResult {
        scheme,
        seed: cfg.seed,
        report,
        train_iterations: cfg.iterations,
        finetune_iterations,
        wall_seconds,
    })
}

/// Runs the requested schemes in order with one shared seed.
pub fn run_schemes(
    schemes: &[Scheme],
    data: &ExperimentData,
    cfg: &SegConfig,
) -> Result<Vec<ExperimentResult>> {
    schemes.iter().map(|&s| run_experiment(s, data, cfg)).collect()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per (scheme, seed) plus per-scheme mean rows (seed column
/// `mean`). Cells for classes absent from both maps stay empty.
pub fn results_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("scheme,seed,mean_iou");
    for name in CLASS_NAMES {
        let _ = write!(out, ",iou_{name}");
    }
    out.push('\n');

    for r in results {
        let _ = write!(out, "{},{},{}", r.scheme.letter(), r.seed, opt_cell(r.report.mean));
        for c in 0..NUM_CLASSES {
            let _ = write!(out, ",{}", opt_cell(r.report.per_class[c]));
        }
        out.push('\n');
    }

    for scheme in Scheme::ALL {
        let rows: Vec<&ExperimentResult> =
            results.iter().filter(|r| r.scheme == scheme).collect();
        if rows.is_empty() {
            continue;
        }
        let mean_of = |f: &dyn Fn(&ExperimentResult) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let _ = write!(
            out,
            "{},mean,{}",
            scheme.letter(),
            opt_cell(mean_of(&|r| r.report.mean))
        );
        for c in 0..NUM_CLASSES {
            let _ = write!(out, ",{}", opt_cell(mean_of(&|r| r.report.per_class[c])));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn blocky_set(seed: u64, n: usize, size: usize) -> LabeledSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut set = LabeledSet::default();
        for _ in 0..n {
            let mut img = ImageRgb::new(size, size);
            let mut lab = LabelMap::new(size, size);
            let split = rng.random_range(size / 4..3 * size / 4);
            for y in 0..size {
                for x in 0..size {
                    let left = x < split;
                    let base = if left { [0.1, 0.8, 0.2] } else { [0.9, 0.2, 0.1] };
                    let px: [f64; 3] = std::array::from_fn(|c| {
                        (base[c] + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0)
                    });
                    img.set_pixel(x, y, px);
                    lab.data[y * size + x] = if left { 1 } else { 2 };
                }
            }
            set.images.push(img);
            set.labels.push(lab);
        }
        set
    }

    fn micro_cfg() -> SegConfig {
        SegConfig { nf: 4, iterations: 30, batch: 2, dropout: 0.0, ..Default::default() }
    }

    #[test]
    fn scheme_table_is_fixed() {
        let expect = [
            ('A', SetKey::EmpTrain, None, SetKey::EmpTest),
            ('B', SetKey::SynTrain, None, SetKey::SynTest),
            ('C', SetKey::SynTrain, None, SetKey::EmpTest),
            ('D', SetKey::SynTrain, Some(SetKey::EmpTrain), SetKey::EmpTest),
            ('E', SetKey::TransTrain, None, SetKey::TransTest),
            ('F', SetKey::TransTrain, None, SetKey::EmpTest),
            ('G', SetKey::TransTrain, Some(SetKey::EmpTrain), SetKey::EmpTest),
        ];
        for (scheme, (letter, train, ft, test)) in Scheme::ALL.into_iter().zip(expect) {
            let spec = scheme.spec();
            assert_eq!(scheme.letter(), letter);
            assert_eq!(spec.train, train);
            assert_eq!(spec.finetune, ft);
            assert_eq!(spec.test, test);
        }
        assert!(
            Scheme::ALL.iter().all(|s| s.spec().finetune.is_some() == matches!(s, Scheme::D | Scheme::G))
        );
    }

    #[test]
    fn scheme_letters_parse_and_h_is_rejected() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::parse(&s.letter().to_string()).unwrap(), s);
            assert_eq!(Scheme::parse(&s.letter().to_ascii_lowercase().to_string()).unwrap(), s);
        }
        assert!(matches!(Scheme::parse("H"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_translated_set_is_a_config_error() {
        let data = ExperimentData {
            syn_train: blocky_set(1, 2, 8),
            syn_test: blocky_set(2, 2, 8),
            emp_train: blocky_set(3, 2, 8),
            emp_test: blocky_set(4, 2, 8),
            trans_train: None,
            trans_test: None,
        };
        let err = run_experiment(Scheme::E, &data, &micro_cfg()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn identical_train_and_test_overfits_past_ninety_percent() {
        let set = blocky_set(10, 4, 16);
        let data = ExperimentData {
            emp_train: set.clone(),
            emp_test: set,
            ..Default::default()
        };
        let mut cfg = micro_cfg();
        cfg.nf = 8;
        cfg.iterations = 300;
        cfg.batch = 4;
        let result = run_experiment(Scheme::A, &data, &cfg).unwrap();
        let mean = result.report.mean.expect("classes present");
        assert!(mean > 0.9, "overfit mean IOU {mean}");
        assert_eq!(result.finetune_iterations, 0);
    }

    #[test]
    fn finetuned_scheme_reports_its_budget() {
        let data = ExperimentData {
            syn_train: blocky_set(20, 2, 8),
            emp_train: blocky_set(21, 2, 8),
            emp_test: blocky_set(22, 2, 8),
            ..Default::default()
        };
        let mut cfg = micro_cfg();
        cfg.iterations = 8;
        cfg.finetune_iterations = 3;
        let result = run_experiment(Scheme::D, &data, &cfg).unwrap();
        assert_eq!(result.train_iterations, 8);
        assert_eq!(result.finetune_iterations, 3);
    }

    #[test]
    fn results_csv_has_data_rows_and_scheme_means() {
        let set = blocky_set(30, 2, 8);
        let data = ExperimentData {
            emp_train: set.clone(),
            emp_test: set.clone(),
            syn_train: set.clone(),
            syn_test: set,
            ..Default::default()
        };
        let mut results = Vec::new();
        for seed in [0u64, 1] {
            let cfg = SegConfig { seed, ..micro_cfg() };
            results.extend(run_schemes(&[Scheme::A, Scheme::B], &data, &cfg).unwrap());
        }
        let csv = results_csv(&results);
        let lines: Vec<&str> = csv.lines().collect();
        let want_header = "scheme,seed,mean_iou,iou_background,iou_leaf,iou_pepper,\
                           iou_peduncle,iou_stem,iou_shoot,iou_wire,iou_cut";
        assert_eq!(lines[0], want_header.replace(" ", ""));
        assert_eq!(lines.len(), 1 + 4 + 2, "header, four data rows, two mean rows");
        assert!(lines[1].starts_with("A,0,"));
        assert!(lines[5].starts_with("A,mean,"));
        assert!(lines[6].starts_with("B,mean,"));
        // The scheme mean equals the average of that scheme's seeds.
        let mean_cell = |line: &str| line.split(',').nth(2).unwrap().parse::<f64>().unwrap();
        let want = (mean_cell(lines[1]) + mean_cell(lines[3])) / 2.0;
        assert!((mean_cell(lines[5]) - want).abs() < 1e-12);
    }

    #[test]
    fn translate_set_keeps_labels_and_count() {
        use crate::translator::TranslatorConfig;
        let mut pair = TranslatorPair::new(TranslatorConfig {
            nf: 2,
            n_res_blocks: 1,
            image_size: 8,
            ..Default::default()
        })
        .unwrap();
        let set = blocky_set(40, 3, 8);
        let out = translate_set(&mut pair, &set, Direction::XToY).unwrap();
        assert_eq!(out.len(), 3);
        for (a, b) in out.labels.iter().zip(&set.labels) {
            assert_eq!(a.data, b.data);
        }
        assert!(out.images.iter().all(|i| (i.width, i.height) == (8, 8)));
    }
}
