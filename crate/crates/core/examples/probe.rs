//! TEMPORARY tuning probe - not part of the deliverable.
use domaingap::experiments::{run_experiment, ExperimentData, LabeledSet, Scheme};
use domaingap::gap::{gap_report, HueMode, NamedSet};
use domaingap::imgproc::{ImageRgb, LabelMap};
use domaingap::segnet::SegConfig;
use domaingap::toydata::{generate_set, Style, ToyConfig};
use domaingap::translator::{Direction, TranslatorConfig, TranslatorPair};
use std::time::Instant;

fn slice(imgs: &[ImageRgb], labs: &[LabelMap], lo: usize, hi: usize) -> Vec<(ImageRgb, LabelMap)> {
    (lo..hi).map(|i| (imgs[i].clone(), labs[i].clone())).collect()
}

fn measure(a: &[(ImageRgb, LabelMap)], b: &[(ImageRgb, LabelMap)]) -> (f64, [f64; 4]) {
    let r = gap_report(
        &[NamedSet { name: "a", images: a }, NamedSet { name: "b", images: b }],
        16,
        HueMode::Pooled,
    )
    .unwrap();
    (r.pair_mean("a", "b").unwrap(), r.feature_gaps("a", "b").unwrap())
}

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_iters: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let tcfg = ToyConfig { size: 64, n_images: 100, seed: 0, ..ToyConfig::default() };
    let t0 = Instant::now();
    let (clean_imgs, clean_labs) = generate_set(&tcfg, Style::Clean).unwrap();
    let (tex_imgs, tex_labs) = generate_set(&tcfg, Style::Textured).unwrap();
    eprintln!("[{:6.1}s] toydata done", t0.elapsed().as_secs_f64());

    // X = clean indices 31-90 (slots 30..90), Y = textured 1-30 (0..30).
    let x_set = slice(&clean_imgs, &clean_labs, 30, 90);
    let y_set = slice(&tex_imgs, &tex_labs, 0, 30);
    let (pre_corr, pre_gaps) = measure(&x_set, &y_set);
    eprintln!(
        "[{:6.1}s] PRE  corr {:+.4}  gaps {:?}",
        t0.elapsed().as_secs_f64(),
        pre_corr,
        pre_gaps.map(|g| (g * 1e4).round() / 1e4)
    );

    let xs: Vec<ImageRgb> = x_set.iter().map(|(i, _)| i.clone()).collect();
    let ys: Vec<ImageRgb> = y_set.iter().map(|(i, _)| i.clone()).collect();

    let mut cfg = TranslatorConfig { seed, iterations: 0, ..TranslatorConfig::default() };
    cfg.iterations = 0;
    let mut pair = TranslatorPair::new(cfg).unwrap();
    let mut checkpoints: Vec<u64> = vec![200, 400, 600, 1000, 1400, 2000];
    checkpoints.retain(|&c| c <= max_iters);
    for &stop in &checkpoints {
        pair.cfg.iterations = stop;
        pair.train(&xs, &ys, None).unwrap();
        let trans_set: Vec<(ImageRgb, LabelMap)> = x_set
            .iter()
            .map(|(img, lab)| (pair.translate(img, Direction::XToY).unwrap(), lab.clone()))
            .collect();
        let (corr, gaps) = measure(&trans_set, &y_set);
        let shrunk = pre_gaps.iter().zip(&gaps).filter(|(p, q)| q < p).count();
        let last = pair.history.last().unwrap();
        eprintln!(
            "[{:6.1}s] iter {:4}  corr {:+.4} (gain {:+.4})  gaps {:?} shrunk {}/4  d_x {:.3} d_y {:.3} adv {:.3}/{:.3} cyc {:.4}/{:.4}",
            t0.elapsed().as_secs_f64(),
            stop,
            corr,
            corr - pre_corr,
            gaps.map(|g| (g * 1e4).round() / 1e4),
            shrunk,
            last.d_x_loss,
            last.d_y_loss,
            last.adv_xy,
            last.adv_yx,
            last.cyc_xy,
            last.cyc_yx
        );
    }
    let n = pair.history.len();
    if n >= 200 {
        let mean_cyc = |r: std::ops::Range<usize>| {
            pair.history[r.clone()].iter().map(|h| h.cyc_xy + h.cyc_yx).sum::<f64>()
                / (2.0 * r.len() as f64)
        };
        eprintln!(
            "cycle first-100 {:.4} last-100 {:.4}",
            mean_cyc(0..100),
            mean_cyc(n - 100..n)
        );
    }

    if std::env::args().nth(3).as_deref() == Some("seg") {
        // Downstream probe: C (syn->emp) vs F (trans->emp) with test idx 91-100.
        let trans_train: Vec<(ImageRgb, LabelMap)> = x_set
            .iter()
            .map(|(img, lab)| (pair.translate(img, Direction::XToY).unwrap(), lab.clone()))
            .collect();
        let trans_test: Vec<(ImageRgb, LabelMap)> = (90..100)
            .map(|i| {
                (
                    pair.translate(&clean_imgs[i], Direction::XToY).unwrap(),
                    clean_labs[i].clone(),
                )
            })
            .collect();
        let to_set = |v: Vec<(ImageRgb, LabelMap)>| LabeledSet {
            images: v.iter().map(|(i, _)| i.clone()).collect(),
            labels: v.iter().map(|(_, l)| l.clone()).collect(),
        };
        let data = ExperimentData {
            syn_train: to_set(slice(&clean_imgs, &clean_labs, 30, 90)),
            syn_test: to_set(slice(&clean_imgs, &clean_labs, 90, 100)),
            emp_train: to_set(slice(&tex_imgs, &tex_labs, 0, 30)),
            emp_test: to_set(slice(&tex_imgs, &tex_labs, 90, 100)),
            trans_train: Some(to_set(trans_train)),
            trans_test: Some(to_set(trans_test)),
        };
        for seg_seed in [0u64, 1, 2] {
            let scfg = SegConfig { seed: seg_seed, ..SegConfig::default() };
            for scheme in [Scheme::A, Scheme::C, Scheme::F, Scheme::D, Scheme::G] {
                let t = Instant::now();
                let r = run_experiment(scheme, &data, &scfg).unwrap();
                eprintln!(
                    "seg seed {} scheme {} mean IOU {:?}  ({:.1}s)",
                    seg_seed,
                    scheme.letter(),
                    r.report.mean,
                    t.elapsed().as_secs_f64()
                );
            }
        }
    }
}
