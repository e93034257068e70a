//! Exercises every exported symbol through its C signature and checks the
//! generated header ships the same surface.

use domaingap::gap;
use domaingap::imgproc::{ImageRgb, LabelMap};
use domaingap::translator::{TranslatorConfig, TranslatorPair};
use domaingap_ffi::*;
use std::ffi::{c_char, CStr, CString};

fn planar(img: &ImageRgb) -> Vec<f64> {
    img.data.clone()
}

fn message() -> String {
    unsafe { CStr::from_ptr(dg_last_error_message()).to_string_lossy().into_owned() }
}

/// 4x4 image: left half solid red (class 1), right half solid blue
/// (class 2).
fn two_class_image() -> (ImageRgb, LabelMap) {
    let mut img = ImageRgb::new(4, 4);
    let mut labels = LabelMap::new(4, 4);
    for y in 0..4 {
        for x in 0..4 {
            if x < 2 {
                img.set_pixel(x, y, [1.0, 0.0, 0.0]);
                labels.data[y * 4 + x] = 1;
            } else {
                img.set_pixel(x, y, [0.0, 0.0, 1.0]);
                labels.data[y * 4 + x] = 2;
            }
        }
    }
    (img, labels)
}

#[test]
fn version_is_a_nonempty_c_string() {
    let v = unsafe { CStr::from_ptr(dg_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn constants_match_the_library() {
    assert_eq!(dg_hue_bins(), gap::HUE_BINS);
    assert_eq!(dg_num_classes(), domaingap::NUM_CLASSES);
}

#[test]
fn hue_histogram_matches_direct_call() {
    let (img, labels) = two_class_image();
    let rgb = planar(&img);
    let mut bins = vec![0.0; dg_hue_bins()];
    let mut pixels = 0u64;
    let mut excluded = 0u64;
    let status = unsafe {
        dg_hue_histogram(
            rgb.as_ptr(),
            labels.data.as_ptr(),
            4,
            4,
            1,
            bins.as_mut_ptr(),
            &mut pixels,
            &mut excluded,
        )
    };
    assert_eq!(status, dg_status::DG_OK);
    let direct = gap::hue_histogram(&img, &labels, 1).unwrap();
    assert_eq!(bins, direct.bins);
    assert_eq!(pixels, direct.pixel_count);
    assert_eq!(excluded, direct.excluded_count);
    // Pure red sits in the first hue bin.
    assert_eq!(bins[0], 1.0);
    assert_eq!(pixels, 8);
}

#[test]
fn hue_histogram_rejects_null_and_bad_class() {
    let (img, labels) = two_class_image();
    let rgb = planar(&img);
    let mut bins = vec![0.0; dg_hue_bins()];
    let status = unsafe {
        dg_hue_histogram(
            std::ptr::null(),
            labels.data.as_ptr(),
            4,
            4,
            1,
            bins.as_mut_ptr(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, dg_status::DG_ERR_NULL_ARGUMENT);
    assert!(!message().is_empty());

    let status = unsafe {
        dg_hue_histogram(
            rgb.as_ptr(),
            labels.data.as_ptr(),
            4,
            4,
            200,
            bins.as_mut_ptr(),
            std::ptr::null_mut(),
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, dg_status::DG_ERR_DATA);
    assert!(message().contains("class id 200"));
}

#[test]
fn haralick_of_a_constant_region_is_exact() {
    let (img, labels) = two_class_image();
    let rgb = planar(&img);
    let mut features = [0.0f64; 4];
    let status = unsafe {
        dg_haralick(rgb.as_ptr(), labels.data.as_ptr(), 4, 4, 1, 16, features.as_mut_ptr())
    };
    assert_eq!(status, dg_status::DG_OK);
    // One occupied co-occurrence cell: contrast 0, homogeneity 1,
    // energy 1, entropy 0.
    assert_eq!(features, [0.0, 1.0, 1.0, 0.0]);

    // Class 5 never appears: data error, not a crash.
    let status = unsafe {
        dg_haralick(rgb.as_ptr(), labels.data.as_ptr(), 4, 4, 5, 16, features.as_mut_ptr())
    };
    assert_eq!(status, dg_status::DG_ERR_DATA);

    // One gray level is a parameter error.
    let status = unsafe {
        dg_haralick(rgb.as_ptr(), labels.data.as_ptr(), 4, 4, 1, 1, features.as_mut_ptr())
    };
    assert_eq!(status, dg_status::DG_ERR_CONFIG);
}

#[test]
fn pearson_matches_known_values() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [2.0, 4.0, 6.0, 8.0];
    let mut r = 0.0f64;
    let status = unsafe { dg_pearson(a.as_ptr(), b.as_ptr(), 4, &mut r) };
    assert_eq!(status, dg_status::DG_OK);
    assert!((r - 1.0).abs() < 1e-12);

    let c = [5.0, 5.0, 5.0, 5.0];
    let status = unsafe { dg_pearson(a.as_ptr(), c.as_ptr(), 4, &mut r) };
    assert_eq!(status, dg_status::DG_ERR_DATA);
    assert!(message().contains("zero variance"));
}

#[test]
fn mean_iou_matches_hand_confusion() {
    // truth [0,0,1,1] vs pred [0,1,1,1]: class 0 iou 1/2, class 1 iou 2/3.
    let truth = [0u8, 0, 1, 1];
    let pred = [0u8, 1, 1, 1];
    let mut per_class = [0.0f64; 2];
    let mut mean = 0.0f64;
    let status = unsafe {
        dg_mean_iou(pred.as_ptr(), truth.as_ptr(), 4, 2, per_class.as_mut_ptr(), &mut mean)
    };
    assert_eq!(status, dg_status::DG_OK);
    assert!((per_class[0] - 0.5).abs() < 1e-15);
    assert!((per_class[1] - 2.0 / 3.0).abs() < 1e-15);
    assert!((mean - 7.0 / 12.0).abs() < 1e-15);

    // A class absent from both sides comes back NaN and leaves the mean
    // unchanged.
    let mut per3 = [0.0f64; 3];
    let status = unsafe {
        dg_mean_iou(pred.as_ptr(), truth.as_ptr(), 4, 3, per3.as_mut_ptr(), &mut mean)
    };
    assert_eq!(status, dg_status::DG_OK);
    assert!(per3[2].is_nan());
    assert!((mean - 7.0 / 12.0).abs() < 1e-15);

    // Out-of-range ids in the buffers are data errors.
    let bad = [0u8, 9, 1, 1];
    let status = unsafe {
        dg_mean_iou(bad.as_ptr(), truth.as_ptr(), 4, 2, per_class.as_mut_ptr(), &mut mean)
    };
    assert_eq!(status, dg_status::DG_ERR_DATA);
}

#[test]
fn translator_round_trips_through_the_handle() {
    let dir = std::env::temp_dir().join("domaingap-ffi-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tiny.dgck");

    let cfg = TranslatorConfig {
        nf: 4,
        n_res_blocks: 1,
        image_size: 8,
        seed: 11,
        ..TranslatorConfig::default()
    };
    TranslatorPair::new(cfg).unwrap().save(&path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut dg_translator = std::ptr::null_mut();
    let status = unsafe { dg_translator_load(c_path.as_ptr(), &mut handle) };
    assert_eq!(status, dg_status::DG_OK, "{}", message());
    assert!(!handle.is_null());

    let mut size = 0usize;
    let status = unsafe { dg_translator_image_size(handle, &mut size) };
    assert_eq!(status, dg_status::DG_OK);
    assert_eq!(size, 8);

    let n = 3 * size * size;
    let input: Vec<f64> = (0..n).map(|i| (i % 97) as f64 / 96.0).collect();
    let mut output = vec![-1.0f64; n];
    let status =
        unsafe { dg_translate(handle, input.as_ptr(), size, size, 0, output.as_mut_ptr()) };
    assert_eq!(status, dg_status::DG_OK, "{}", message());
    assert!(output.iter().all(|v| (0.0..=1.0).contains(v)));

    // Same input, other direction: a different network, so (generically)
    // different output.
    let mut output_yx = vec![-1.0f64; n];
    let status =
        unsafe { dg_translate(handle, input.as_ptr(), size, size, 1, output_yx.as_mut_ptr()) };
    assert_eq!(status, dg_status::DG_OK);
    assert_ne!(output, output_yx);

    // Wrong extents and bad directions are rejected.
    let status =
        unsafe { dg_translate(handle, input.as_ptr(), 4, 4, 0, output.as_mut_ptr()) };
    assert_eq!(status, dg_status::DG_ERR_DATA);
    let status =
        unsafe { dg_translate(handle, input.as_ptr(), size, size, 7, output.as_mut_ptr()) };
    assert_eq!(status, dg_status::DG_ERR_CONFIG);

    unsafe { dg_translator_free(handle) };
    unsafe { dg_translator_free(std::ptr::null_mut()) };

    // Loading a missing file is an i/o-class failure.
    let missing = CString::new(dir.join("absent.dgck").to_str().unwrap()).unwrap();
    let status = unsafe { dg_translator_load(missing.as_ptr(), &mut handle) };
    assert_eq!(status, dg_status::DG_ERR_IO);
}

#[test]
fn generated_header_covers_the_surface() {
    let header_path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/domaingap.h");
    let header = std::fs::read_to_string(header_path).expect("header generated by build.rs");
    for symbol in [
        "dg_status",
        "DG_ERR_NULL_ARGUMENT",
        "dg_last_error_message",
        "dg_version",
        "dg_hue_bins",
        "dg_num_classes",
        "dg_hue_histogram",
        "dg_haralick",
        "dg_pearson",
        "dg_mean_iou",
        "dg_translator_load",
        "dg_translator_image_size",
        "dg_translate",
        "dg_translator_free",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
    // Opaque handle: declared, never defined.
    assert!(header.contains("typedef struct dg_translator dg_translator;"));
    assert!(!header.contains("struct dg_translator {"));
    // usize crosses the boundary as size_t.
    assert!(header.contains("size_t"));
    let _unused: *const c_char = std::ptr::null();
}
