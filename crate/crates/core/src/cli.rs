//! Command-line front end. Every subcommand resolves and validates its
//! inputs before any long-running work starts, and all report files are
//! byte-stable for a fixed command line (progress chatter goes to stderr).

use crate::config::{Config, GapSettings};
use crate::dataset::DatasetRef;
use crate::error::{Error, Result};
use crate::experiments::{
    self, evaluate, run_experiment, ExperimentData, ExperimentResult, LabeledSet, Scheme,
};
use crate::gap::{gap_report, GapReport, HueMode, NamedSet};
use crate::imgproc::{
    crop_image, crop_labels, resample_bilinear, resample_nearest_labels, save_labels, save_rgb,
    CropRect, ImageRgb, LabelMap,
};
use crate::segnet::{SegConfig, SegModel};
use crate::toydata::{self, Style};
use crate::translator::{Direction, TranslatorPair};
use crate::NUM_CLASSES;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "domaingap",
    version,
    about = "Measure, narrow, and evaluate the visual gap between two image domains"
)]
struct Cli {
    /// Seed override applied to every stage this command touches.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file (see config.example.toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for generated data, models, and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-domain toy datasets.
    Toydata {
        #[command(subcommand)]
        cmd: ToydataCmd,
    },
    /// Crop and/or resample a dataset into a new directory.
    Preprocess(PreprocessArgs),
    /// Hue and texture statistics with between-set correlations.
    Gap {
        #[command(subcommand)]
        cmd: GapCmd,
    },
    /// Train the translator or run images through it.
    Translate {
        #[command(subcommand)]
        cmd: TranslateCmd,
    },
    /// Train or evaluate a segmentation network.
    Seg {
        #[command(subcommand)]
        cmd: SegCmd,
    },
    /// Train/fine-tune/test evaluation schemes.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Full chain: data, gap before, translator, gap after, experiments,
    /// summary.
    PaperPipeline,
}

#[derive(Subcommand)]
enum ToydataCmd {
    /// Write toy datasets under <out>/data/<style>.
    Gen {
        /// clean, textured, or both.
        #[arg(long, default_value = "both")]
        style: String,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
}

#[derive(Args)]
struct PreprocessArgs {
    /// Source set expression (name[a-b] or a directory).
    #[arg(long)]
    set: String,
    /// Destination dataset directory.
    #[arg(long)]
    dest: PathBuf,
    /// Crop rectangle x,y,width,height applied before resampling.
    #[arg(long)]
    crop: Option<String>,
    /// Target size WIDTHxHEIGHT (bilinear for images, nearest for labels).
    #[arg(long)]
    resize: Option<String>,
    /// Process images only, even if label maps exist.
    #[arg(long)]
    no_labels: bool,
}

#[derive(Subcommand)]
enum GapCmd {
    /// Compare two or three sets; writes CSV and JSON reports.
    Report {
        #[arg(long)]
        set_a: String,
        #[arg(long)]
        set_b: String,
        #[arg(long)]
        set_c: Option<String>,
        /// Gray levels for co-occurrence statistics.
        #[arg(long)]
        levels: Option<usize>,
        /// Images per set; 0 means all selected.
        #[arg(long)]
        n_images: Option<usize>,
        /// Comma-separated class ids (default: all 8).
        #[arg(long)]
        classes: Option<String>,
        /// pooled or per-image-mean.
        #[arg(long)]
        hue_mode: Option<String>,
        /// Subdirectory of --out for the report files.
        #[arg(long, default_value = "gap")]
        report_dir: String,
    },
}

#[derive(Subcommand)]
enum TranslateCmd {
    /// Train the translator between two unpaired sets.
    Train {
        /// Domain X set expression (translated towards --to).
        #[arg(long)]
        from: String,
        /// Domain Y set expression.
        #[arg(long)]
        to: String,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Run a trained translator over a set, keeping label maps.
    Apply {
        /// Checkpoint path (default <out>/translator/translator.dgck).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        set: String,
        /// Destination dataset directory (default <out>/translated).
        #[arg(long)]
        dest: Option<PathBuf>,
        /// xy (X to Y, default) or yx.
        #[arg(long, default_value = "xy")]
        direction: String,
        /// Translate images only, even if label maps exist.
        #[arg(long)]
        no_labels: bool,
    },
}

#[derive(Subcommand)]
enum SegCmd {
    /// Train a segmentation network on a labeled set.
    Train {
        #[arg(long)]
        train: String,
        #[arg(long)]
        iterations: Option<u64>,
        /// Checkpoint path (default <out>/seg/model.dgck).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a trained network on a labeled set.
    Eval {
        /// Checkpoint path (default <out>/seg/model.dgck).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: String,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// One scheme with the configured seed.
    Run {
        /// Scheme letter A..G.
        #[arg(long)]
        scheme: String,
    },
    /// Every configured scheme over every configured seed.
    All {
        /// Comma-separated scheme letters (default from config).
        #[arg(long)]
        schemes: Option<String>,
        /// Comma-separated seeds (default from config).
        #[arg(long)]
        seeds: Option<String>,
    },
}

/// Parses and runs one command line; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_thread_pool();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// DOMAINGAP_THREADS caps the worker pool for parallel per-image jobs.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("DOMAINGAP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::toy_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.toydata.seed = seed;
        cfg.translator.seed = seed;
        cfg.segnet.seed = seed;
        cfg.experiments.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Toydata { cmd } => match cmd {
            ToydataCmd::Gen { style, n_images, size } => {
                toydata_gen(&cfg, &out, &style, n_images, size)
            }
        },
        Command::Preprocess(args) => preprocess(&cfg, &out, &args),
        Command::Gap { cmd } => match cmd {
            GapCmd::Report {
                set_a,
                set_b,
                set_c,
                levels,
                n_images,
                classes,
                hue_mode,
                report_dir,
            } => {
                let mut settings = cfg.gap.clone();
                if let Some(l) = levels {
                    settings.levels = l;
                }
                if let Some(n) = n_images {
                    settings.n_images = n;
                }
                if let Some(cs) = classes {
                    settings.classes = parse_u8_list(&cs)?;
                }
                if let Some(m) = hue_mode {
                    settings.hue_mode = parse_hue_mode(&m)?;
                }
                settings.validate()?;
                let mut exprs = vec![set_a, set_b];
                exprs.extend(set_c);
                gap_command(&cfg, &out, &exprs, &settings, &report_dir).map(|_| ())
            }
        },
        Command::Translate { cmd } => match cmd {
            TranslateCmd::Train { from, to, iterations } => {
                translate_train(&cfg, &out, &from, &to, iterations)
            }
            TranslateCmd::Apply { model, set, dest, direction, no_labels } => {
                let model = model.unwrap_or_else(|| out.join("translator/translator.dgck"));
                let dest = dest.unwrap_or_else(|| out.join("translated"));
                translate_apply(&cfg, &out, &model, &set, &dest, &direction, no_labels)
            }
        },
        Command::Seg { cmd } => match cmd {
            SegCmd::Train { train, iterations, model } => {
                let model = model.unwrap_or_else(|| out.join("seg/model.dgck"));
                seg_train(&cfg, &out, &train, iterations, &model)
            }
            SegCmd::Eval { model, test } => {
                let model = model.unwrap_or_else(|| out.join("seg/model.dgck"));
                seg_eval(&cfg, &out, &model, &test)
            }
        },
        Command::Experiment { cmd } => match cmd {
            ExperimentCmd::Run { scheme } => {
                let scheme = Scheme::parse(&scheme)?;
                experiment_run_cmd(&cfg, &out, scheme)
            }
            ExperimentCmd::All { schemes, seeds } => {
                let schemes = match schemes {
                    Some(list) => parse_schemes(&list)?,
                    None => parse_scheme_names(&cfg.experiments.schemes)?,
                };
                let seeds = match seeds {
                    Some(list) => parse_u64_list(&list)?,
                    None => cfg.experiments.seeds.clone(),
                };
                experiment_all(&cfg, &out, &schemes, &seeds).map(|_| ())
            }
        },
        Command::PaperPipeline => paper_pipeline(&cfg, &out),
    }
}

fn parse_u8_list(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .map_err(|_| Error::Config(format!("'{p}' is not a class id")))
        })
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<u64>().map_err(|_| Error::Config(format!("'{p}' is not a seed")))
        })
        .collect()
}

fn parse_schemes(s: &str) -> Result<Vec<Scheme>> {
    s.split(',').map(Scheme::parse).collect()
}

fn parse_scheme_names(names: &[String]) -> Result<Vec<Scheme>> {
    names.iter().map(|n| Scheme::parse(n)).collect()
}

fn parse_hue_mode(s: &str) -> Result<HueMode> {
    match s.replace('-', "_").as_str() {
        "pooled" => Ok(HueMode::Pooled),
        "per_image_mean" => Ok(HueMode::PerImageMean),
        other => Err(Error::Config(format!(
            "hue mode '{other}' must be pooled or per-image-mean"
        ))),
    }
}

fn parse_style(s: &str) -> Result<Vec<Style>> {
    match s {
        "clean" => Ok(vec![Style::Clean]),
        "textured" => Ok(vec![Style::Textured]),
        "both" => Ok(vec![Style::Clean, Style::Textured]),
        other => Err(Error::Config(format!(
            "style '{other}' must be clean, textured, or both"
        ))),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn toydata_gen(
    cfg: &Config,
    out: &Path,
    style: &str,
    n_images: Option<usize>,
    size: Option<usize>,
) -> Result<()> {
    let styles = parse_style(style)?;
    let mut tcfg = cfg.toydata.clone();
    if let Some(n) = n_images {
        tcfg.n_images = n;
    }
    if let Some(s) = size {
        tcfg.size = s;
    }
    tcfg.validate()?;
    for style in styles {
        let dir = out.join("data").join(style.as_str());
        toydata::write_dataset(&tcfg, style, &dir)?;
        println!(
            "wrote {} {} images ({}x{}) to {}",
            tcfg.n_images,
            style.as_str(),
            tcfg.size,
            tcfg.size,
            dir.display()
        );
    }
    Ok(())
}

fn parse_crop(s: &str) -> Result<CropRect> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::Config(format!("crop '{s}' must be x,y,width,height"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let mut vals = [0usize; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(CropRect { x: vals[0], y: vals[1], width: vals[2], height: vals[3] })
}

fn parse_resize(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("resize '{s}' must be WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn preprocess(cfg: &Config, out: &Path, args: &PreprocessArgs) -> Result<()> {
    let crop = args.crop.as_deref().map(parse_crop).transpose()?;
    let resize = args.resize.as_deref().map(parse_resize).transpose()?;
    let ds = cfg.resolve_set(&args.set, out)?;
    let with_labels = !args.no_labels;
    ds.validate(with_labels)?;

    let rgb_dir = args.dest.join("rgb");
    std::fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    let label_dir = args.dest.join("label");
    if with_labels {
        std::fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
    }

    for &index in &ds.indices {
        let name = crate::dataset::image_name(index);
        let mut img = ds.load_image(index)?;
        if let Some(rect) = crop {
            img = crop_image(&img, rect)?;
        }
        if let Some((w, h)) = resize {
            img = resample_bilinear(&img, w, h)?;
        }
        save_rgb(&rgb_dir.join(&name), &img)?;

        if with_labels {
            let mut labels = ds.load_labels(index, NUM_CLASSES)?;
            if let Some(rect) = crop {
                labels = crop_labels(&labels, rect)?;
            }
            if let Some((w, h)) = resize {
                labels = resample_nearest_labels(&labels, w, h)?;
            }
            save_labels(&label_dir.join(&name), &labels)?;
        }
    }
    println!("preprocessed {} images into {}", ds.len(), args.dest.display());
    Ok(())
}

fn load_labeled(ds: &DatasetRef, limit: usize) -> Result<Vec<(ImageRgb, LabelMap)>> {
    let mut pairs = Vec::new();
    for &index in &ds.indices {
        if limit > 0 && pairs.len() >= limit {
            break;
        }
        pairs.push((ds.load_image(index)?, ds.load_labels(index, NUM_CLASSES)?));
    }
    Ok(pairs)
}

fn load_images(ds: &DatasetRef) -> Result<Vec<ImageRgb>> {
    ds.indices.iter().map(|&i| ds.load_image(i)).collect()
}

/// Shared by `gap report` and the pipeline; returns the report it wrote.
fn gap_command(
    cfg: &Config,
    out: &Path,
    exprs: &[String],
    settings: &GapSettings,
    report_dir: &str,
) -> Result<GapReport> {
    let mut sets = Vec::new();
    for expr in exprs {
        let ds = cfg.resolve_set(expr, out)?;
        ds.validate(true)?;
        sets.push((expr.clone(), load_labeled(&ds, settings.n_images)?));
    }
    let named: Vec<NamedSet> =
        sets.iter().map(|(name, images)| NamedSet { name, images }).collect();
    let mut report = gap_report(&named, settings.levels, settings.hue_mode)?;
    if !settings.classes.is_empty() {
        let keep = settings.class_list();
        report.classes.retain(|c| keep.contains(&c.class_id));
    }

    let dir = out.join(report_dir);
    write_file(&dir.join("features.csv"), &report.features_csv())?;
    write_file(&dir.join("correlations.csv"), &report.correlations_csv())?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    for pm in &report.pair_means {
        println!(
            "mean hue correlation {} vs {}: {}",
            pm.set_a,
            pm.set_b,
            pm.mean_correlation
                .map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
        );
    }
    println!("gap report written to {}", dir.display());
    Ok(report)
}

fn translate_train(
    cfg: &Config,
    out: &Path,
    from: &str,
    to: &str,
    iterations: Option<u64>,
) -> Result<()> {
    let mut tcfg = cfg.translator.clone();
    if let Some(n) = iterations {
        tcfg.iterations = n;
    }
    tcfg.validate()?;

    let from_ds = cfg.resolve_set(from, out)?;
    from_ds.validate(false)?;
    let to_ds = cfg.resolve_set(to, out)?;
    to_ds.validate(false)?;

    let xs = load_images(&from_ds)?;
    let ys = load_images(&to_ds)?;
    let mut pair = TranslatorPair::new(tcfg)?;
    println!("{}", pair.summary());

    let dir = out.join("translator");
    pair.train(&xs, &ys, Some(&dir))?;
    println!(
        "trained {} iterations; checkpoint at {}",
        pair.iteration,
        dir.join("translator.dgck").display()
    );
    Ok(())
}

fn parse_direction(s: &str) -> Result<Direction> {
    match s {
        "xy" => Ok(Direction::XToY),
        "yx" => Ok(Direction::YToX),
        other => Err(Error::Config(format!("direction '{other}' must be xy or yx"))),
    }
}

fn translate_apply(
    cfg: &Config,
    out: &Path,
    model: &Path,
    set: &str,
    dest: &Path,
    direction: &str,
    no_labels: bool,
) -> Result<()> {
    let dir = parse_direction(direction)?;
    let ds = cfg.resolve_set(set, out)?;
    let with_labels = !no_labels;
    ds.validate(with_labels)?;
    let mut pair = TranslatorPair::load(model)?;

    let rgb_dir = dest.join("rgb");
    std::fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    let label_dir = dest.join("label");
    if with_labels {
        std::fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
    }

    for &index in &ds.indices {
        let name = crate::dataset::image_name(index);
        let img = ds.load_image(index)?;
        let translated = pair.translate(&img, dir)?;
        save_rgb(&rgb_dir.join(&name), &translated)?;
        if with_labels {
            // Geometry is untouched by translation, so the source labels
            // stay valid; rewrite them so the destination is standalone.
            let labels = ds.load_labels(index, NUM_CLASSES)?;
            save_labels(&label_dir.join(&name), &labels)?;
        }
    }
    println!("translated {} images into {}", ds.len(), dest.display());
    Ok(())
}

fn seg_train(
    cfg: &Config,
    out: &Path,
    train: &str,
    iterations: Option<u64>,
    model_path: &Path,
) -> Result<()> {
    let mut scfg = cfg.segnet.clone();
    if let Some(n) = iterations {
        scfg.iterations = n;
    }
    scfg.validate()?;

    let ds = cfg.resolve_set(train, out)?;
    ds.validate(true)?;
    let set = LabeledSet::from_dataset(&ds)?;

    let mut model = SegModel::new(scfg.clone())?;
    model.train(&set.images, &set.labels, scfg.iterations, "train")?;
    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(model_path)?;
    write_file(&out.join("seg/train_loss.csv"), &model.history_csv())?;
    println!("trained {} iterations; checkpoint at {}", model.iteration, model_path.display());
    Ok(())
}

fn seg_eval(cfg: &Config, out: &Path, model_path: &Path, test: &str) -> Result<()> {
    let ds = cfg.resolve_set(test, out)?;
    ds.validate(true)?;
    let set = LabeledSet::from_dataset(&ds)?;
    let mut model = SegModel::load(model_path)?;

    let (confusion, report) = evaluate(&mut model, &set)?;
    write_file(&out.join("seg/confusion.csv"), &confusion.to_csv(&crate::CLASS_NAMES))?;
    write_file(&out.join("seg/iou.csv"), &report.to_csv(&crate::CLASS_NAMES))?;
    println!(
        "mean IOU {}",
        report.mean.map_or_else(|| "n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

/// Loads the six configured sets; translated sets become None when their
/// directory has not been produced yet.
fn assemble_experiment_data(cfg: &Config, out: &Path) -> Result<ExperimentData> {
    let load = |expr: &str| -> Result<LabeledSet> {
        let ds = cfg.resolve_set(expr, out)?;
        ds.validate(true)?;
        LabeledSet::from_dataset(&ds)
    };
    let load_optional = |expr: &str| -> Result<Option<LabeledSet>> {
        let ds = match cfg.resolve_set(expr, out) {
            Ok(ds) => ds,
            Err(_) => return Ok(None),
        };
        if ds.validate(true).is_err() {
            return Ok(None);
        }
        LabeledSet::from_dataset(&ds).map(Some)
    };
    let e = &cfg.experiments;
    Ok(ExperimentData {
        syn_train: load(&e.syn_train)?,
        syn_test: load(&e.syn_test)?,
        emp_train: load(&e.emp_train)?,
        emp_test: load(&e.emp_test)?,
        trans_train: load_optional(&e.trans_train)?,
        trans_test: load_optional(&e.trans_test)?,
    })
}

fn experiment_run_cmd(cfg: &Config, out: &Path, scheme: Scheme) -> Result<()> {
    let data = assemble_experiment_data(cfg, out)?;
    let result = run_experiment(scheme, &data, &cfg.segnet)?;
    let csv = experiments::results_csv(std::slice::from_ref(&result));
    let path = out.join(format!(
        "experiments/result_{}_{}.csv",
        scheme.letter(),
        cfg.segnet.seed
    ));
    write_file(&path, &csv)?;
    println!(
        "scheme {} seed {} mean IOU {}",
        scheme.letter(),
        cfg.segnet.seed,
        result.report.mean.map_or_else(|| "n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

fn experiment_all(
    cfg: &Config,
    out: &Path,
    schemes: &[Scheme],
    seeds: &[u64],
) -> Result<Vec<ExperimentResult>> {
    if schemes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("experiment all needs at least one scheme and seed".into()));
    }
    let data = assemble_experiment_data(cfg, out)?;
    // Fail before any training if a requested scheme lacks its sets.
    for scheme in schemes {
        let spec = scheme.spec();
        data.set(spec.train)?;
        data.set(spec.test)?;
        if let Some(ft) = spec.finetune {
            data.set(ft)?;
        }
    }

    let mut results = Vec::new();
    for &seed in seeds {
        let scfg = SegConfig { seed, ..cfg.segnet.clone() };
        for &scheme in schemes {
            results.push(run_experiment(scheme, &data, &scfg)?);
        }
    }
    let csv = experiments::results_csv(&results);
    write_file(&out.join("experiments/results.csv"), &csv)?;
    println!("results written to {}", out.join("experiments/results.csv").display());
    Ok(results)
}

fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

/// One command chaining the full study: generate both domains, measure the
/// gap, train and apply the translator, measure again, run the schemes,
/// and summarize.
fn paper_pipeline(cfg: &Config, out: &Path) -> Result<()> {
    let e = cfg.experiments.clone();

    eprintln!("[pipeline] 1/6 generating toy data");
    toydata_gen(cfg, out, "both", None, None)?;

    eprintln!("[pipeline] 2/6 measuring the gap before translation");
    let pre = gap_command(
        cfg,
        out,
        &[e.syn_train.clone(), e.emp_train.clone()],
        &cfg.gap,
        "gap_pre",
    )?;

    eprintln!("[pipeline] 3/6 training the translator");
    translate_train(cfg, out, &e.syn_train, &e.emp_train, None)?;

    eprintln!("[pipeline] 4/6 translating the synthetic sets");
    let model = out.join("translator/translator.dgck");
    let dest = out.join("translated");
    translate_apply(cfg, out, &model, &e.syn_train, &dest, "xy", false)?;
    translate_apply(cfg, out, &model, &e.syn_test, &dest, "xy", false)?;

    eprintln!("[pipeline] 5/6 measuring the gap after translation");
    let post = gap_command(
        cfg,
        out,
        &[e.trans_train.clone(), e.emp_train.clone()],
        &cfg.gap,
        "gap_post",
    )?;

    eprintln!("[pipeline] 6/6 running the evaluation schemes");
    let schemes = parse_scheme_names(&e.schemes)?;
    let results = experiment_all(cfg, out, &schemes, &e.seeds)?;

    // Summary: hue correlation movement, texture gap movement, and the
    // per-scheme mean IOUs.
    let pre_corr = pre.pair_mean(&e.syn_train, &e.emp_train);
    let post_corr = post.pair_mean(&e.trans_train, &e.emp_train);
    let pre_gaps = pre.feature_gaps(&e.syn_train, &e.emp_train);
    let post_gaps = post.feature_gaps(&e.trans_train, &e.emp_train);

    let mut summary = serde_json::Map::new();
    let mut hue = serde_json::Map::new();
    hue.insert("pre".into(), pre_corr.map_or(serde_json::Value::Null, json_f64));
    hue.insert("post".into(), post_corr.map_or(serde_json::Value::Null, json_f64));
    if let (Some(a), Some(b)) = (pre_corr, post_corr) {
        hue.insert("gain".into(), json_f64(b - a));
    }
    summary.insert("hue_mean_correlation".into(), hue.into());

    let mut texture = serde_json::Map::new();
    texture.insert(
        "features".into(),
        crate::gap::HaralickFeatures::NAMES
            .iter()
            .map(|n| serde_json::Value::String((*n).into()))
            .collect::<Vec<_>>()
            .into(),
    );
    if let (Some(pre_g), Some(post_g)) = (pre_gaps, post_gaps) {
        texture.insert("pre".into(), pre_g.iter().copied().map(json_f64).collect::<Vec<_>>().into());
        texture
            .insert("post".into(), post_g.iter().copied().map(json_f64).collect::<Vec<_>>().into());
        let improved = pre_g.iter().zip(&post_g).filter(|(a, b)| *b < *a).count();
        summary_number(&mut texture, "features_improved", improved as f64);
    }
    summary.insert("haralick_mean_abs_gap".into(), texture.into());

    let mut schemes_json = serde_json::Map::new();
    for scheme in Scheme::ALL {
        let means: Vec<f64> = results
            .iter()
            .filter(|r| r.scheme == scheme)
            .filter_map(|r| r.report.mean)
            .collect();
        if !means.is_empty() {
            schemes_json.insert(
                scheme.letter().to_string(),
                json_f64(means.iter().sum::<f64>() / means.len() as f64),
            );
        }
    }
    summary.insert("scheme_mean_iou".into(), schemes_json.into());

    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))
        .expect("summary serializes");
    text.push('\n');
    write_file(&out.join("summary.json"), &text)?;
    println!("pipeline complete; summary at {}", out.join("summary.json").display());
    Ok(())
}

fn summary_number(map: &mut serde_json::Map<String, serde_json::Value>, key: &str, v: f64) {
    map.insert(key.into(), json_f64(v));
}
