use std::path::Path;

use alda_core::data::{
    apply_shift, batch_iter, gen_blobs, gen_two_moons, load_idx, read_idx_images, read_idx_labels, DataError, Domain,
    ShiftSpec, Standardizer,
};
use proptest::prelude::*;

fn be(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = be(&[0x0000_0803, count, rows, cols]);
    b.extend_from_slice(pixels);
    b
}

fn label_file(labels: &[u8]) -> Vec<u8> {
    let mut b = be(&[0x0000_0801, labels.len() as u32]);
    b.extend_from_slice(labels);
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

/// Two 28x28 images: all zeros, and a single 255 pixel at (3, 5).
fn two_image_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut pixels = vec![0u8; 2 * 784];
    pixels[784 + 3 * 28 + 5] = 255;
    let images = write(dir, "img.idx", &image_file(2, 28, 28, &pixels));
    let labels = write(dir, "lbl.idx", &label_file(&[7, 1]));
    (images, labels)
}

#[test]
fn two_image_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = two_image_fixture(dir.path());
    let (set, stats) = load_idx(&images, &labels, None, 0, None).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(set.labels(), [7, 1]);
    assert_eq!(set.classes(), 10);
    assert_eq!(set.dim(), 784);

    // One pixel of value 1 among 1568 values.
    let n: f64 = 1568.0;
    let mean = 1.0 / n;
    let std = (mean * (1.0 - mean)).sqrt();
    assert!((stats.mean - mean).abs() < 1e-15);
    assert!((stats.std - std).abs() < 1e-15);

    let zero = -mean / std;
    let row0 = set.features().row(0);
    assert!(row0.iter().all(|&v| (v - zero).abs() < 1e-12));
    let row1 = set.features().row(1);
    for (i, &v) in row1.iter().enumerate() {
        let expected = if i == 3 * 28 + 5 { (1.0 - mean) / std } else { zero };
        assert!((v - expected).abs() < 1e-12, "pixel {i}");
    }
}

#[test]
fn raw_headers_parse() {
    let img = read_idx_images(&image_file(1, 2, 3, &[0, 1, 2, 3, 4, 255])).unwrap();
    assert_eq!((img.count, img.rows, img.cols), (1, 2, 3));
    assert_eq!(img.pixels, [0, 1, 2, 3, 4, 255]);
    assert_eq!(read_idx_labels(&label_file(&[3, 9])).unwrap(), [3, 9]);
}

#[test]
fn bad_magic_and_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = two_image_fixture(dir.path());
    assert!(matches!(
        load_idx(&labels, &labels, None, 0, None),
        Err(DataError::Format(_))
    ));
    assert!(matches!(
        load_idx(&images, &images, None, 0, None),
        Err(DataError::Format(_))
    ));
    let three = write(dir.path(), "three.idx", &label_file(&[1, 2, 3]));
    assert!(matches!(
        load_idx(&images, &three, None, 0, None),
        Err(DataError::Consistency(_))
    ));
    let truncated = write(dir.path(), "short.idx", &image_file(2, 28, 28, &[0; 100]));
    assert!(matches!(
        load_idx(&truncated, &labels, None, 0, None),
        Err(DataError::Format(_))
    ));
    assert!(matches!(
        load_idx(&dir.path().join("missing"), &labels, None, 0, None),
        Err(DataError::Io(_))
    ));
}

#[test]
fn limit_subsamples_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let count = 1000usize;
    let pixels: Vec<u8> = (0..count * 16).map(|i| (i % 251) as u8).collect();
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    let images = write(dir.path(), "img.idx", &image_file(count as u32, 4, 4, &pixels));
    let labels = write(dir.path(), "lbl.idx", &label_file(&labels));
    let (a, _) = load_idx(&images, &labels, Some(100), 5, None).unwrap();
    let (b, _) = load_idx(&images, &labels, Some(100), 5, None).unwrap();
    assert_eq!(a.len(), 100);
    assert_eq!(a.dim(), 784);
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.features(), b.features());
    // Each class has p = 0.1: mean 10, sd 3; allow five sd.
    for class in 0..10 {
        let k = a.labels().iter().filter(|&&l| l == class).count();
        assert!(k <= 25, "class {class}: {k}");
    }
    let (all, _) = load_idx(&images, &labels, Some(5000), 5, None).unwrap();
    assert_eq!(all.len(), count);
}

#[test]
fn small_images_are_upscaled_and_share_source_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let images = write(dir.path(), "usps.idx", &image_file(1, 16, 16, &[255; 256]));
    let labels = write(dir.path(), "usps_lbl.idx", &label_file(&[4]));
    let stats = Standardizer { mean: 0.5, std: 0.25 };
    let (set, used) = load_idx(&images, &labels, None, 0, Some(&stats)).unwrap();
    assert_eq!(used, stats);
    assert_eq!(set.dim(), 784);
    assert!(set.features().data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
}

#[test]
fn moons_and_blobs_contracts() {
    assert!(matches!(gen_two_moons(7, 0.1, 0), Err(DataError::Contract(_))));
    let m = gen_two_moons(10, 0.0, 3).unwrap();
    assert_eq!(m, gen_two_moons(10, 0.0, 3).unwrap());
    assert_eq!(m.domain(), Domain::Source);
    let b = gen_blobs(101, 4, 1, 0.5, 2).unwrap();
    assert_eq!(b, gen_blobs(101, 4, 1, 0.5, 2).unwrap());
    let mut counts = [0usize; 4];
    for &l in b.labels() {
        counts[l] += 1;
    }
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
}

#[test]
fn dataset_csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let set = gen_two_moons(4, 0.0, 0).unwrap();
    let path = dir.path().join("nested").join("moons.csv");
    set.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x0,x1,label,domain");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.ends_with(",source")));
}

#[test]
fn batches_hide_target_labels() {
    let s = gen_two_moons(40, 0.1, 0).unwrap();
    let t = gen_two_moons(30, 0.1, 1).unwrap().with_domain(Domain::Target);
    let batch = batch_iter(&s, &t, 8, 0).unwrap().next().unwrap();
    assert_eq!(batch.xs.shape(), [8, 2]);
    assert_eq!(batch.ys.len(), 8);
    assert_eq!(batch.xt.shape(), [8, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_never_alters_labels(
        rotation in -3.2f64..3.2,
        tx in -2.0f64..2.0,
        ty in -2.0f64..2.0,
        scale in 0.1f64..3.0,
        noise in 0.0f64..0.5,
        seed in 0u64..1000,
    ) {
        let s = gen_two_moons(40, 0.1, seed).unwrap();
        let spec = ShiftSpec { rotation, translation: vec![tx, ty], scale, noise_std: noise };
        let t = apply_shift(&s, &spec, seed + 1).unwrap();
        prop_assert_eq!(t.labels(), s.labels());
        prop_assert_eq!(t.domain(), Domain::Target);
        prop_assert!(t.features().all_finite());
    }

    #[test]
    fn noiseless_shift_is_affine(rotation in -3.2f64..3.2, scale in 0.1f64..3.0, tx in -2.0f64..2.0) {
        let s = gen_two_moons(20, 0.0, 0).unwrap();
        let spec = ShiftSpec { rotation, translation: vec![tx, 0.0], scale, noise_std: 0.0 };
        let t = apply_shift(&s, &spec, 0).unwrap();
        let (sin, cos) = rotation.sin_cos();
        for i in 0..s.len() {
            let x = s.features().row(i);
            let y = t.features().row(i);
            prop_assert!((y[0] - (scale * (cos * x[0] - sin * x[1]) + tx)).abs() < 1e-12);
            prop_assert!((y[1] - scale * (sin * x[0] + cos * x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_stream_is_seed_deterministic(seed in 0u64..500, batch in 1usize..20) {
        let s = gen_two_moons(40, 0.1, 0).unwrap();
        let t = gen_two_moons(24, 0.1, 1).unwrap();
        let a: Vec<_> = batch_iter(&s, &t, batch, seed).unwrap().take(5).collect();
        let b: Vec<_> = batch_iter(&s, &t, batch, seed).unwrap().take(5).collect();
        prop_assert_eq!(a, b);
    }
}
