mod common;

use std::path::Path;

use mmformer::data::{
    decode_raster, encode_raster, extract_patch, load_raster, split, synth_scene, synth_scene_with, write_raster, Cube,
    PatchSet, Preset, RasterPair, SplitSpec, SynthConfig, TrainAmount, PATCH, PATCH_OFFSET, WINDOW,
};
use mmformer::model::Modality;
use mmformer::Error;
use proptest::prelude::*;

/// Scene whose HSI value encodes (band, row, col) and whose LiDAR is a ramp.
fn coded_scene(h: usize, w: usize) -> RasterPair {
    let hsi: Vec<f64> = (0..2 * h * w)
        .map(|i| {
            let (b, p) = (i / (h * w), i % (h * w));
            (b * 10_000 + (p / w) * 100 + p % w) as f64
        })
        .collect();
    let lidar: Vec<f64> = (0..h * w).map(|p| p as f64 * 0.5).collect();
    let labels: Vec<u16> = (0..h * w).map(|p| (p % 3) as u16).collect();
    RasterPair::new(Cube::new(2, h, w, hsi).unwrap(), Cube::new(1, h, w, lidar).unwrap(), labels, 2).unwrap()
}

/// Mirror sequence 0, 1, …, n-1, n-2, …, 1 repeated, indexed from `i` (may be negative).
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let cycle: Vec<usize> = (0..n).chain((1..n - 1).rev()).collect();
    cycle[i.rem_euclid(cycle.len() as isize) as usize]
}

#[test]
fn patch_places_reflected_window_inside_zero_frame() {
    let rp = coded_scene(5, 7);
    let half = (WINDOW / 2) as isize;
    for (r, c) in rp.labeled_pixels() {
        let s = extract_patch(&rp, r, c).unwrap();
        assert_eq!(s.hsi.len(), 2 * PATCH * PATCH);
        assert_eq!(s.label, rp.label(r, c) as usize - 1);
        for b in 0..2 {
            for y in 0..PATCH {
                for x in 0..PATCH {
                    let got = s.hsi[(b * PATCH + y) * PATCH + x];
                    let inside = (PATCH_OFFSET..PATCH_OFFSET + WINDOW).contains(&y)
                        && (PATCH_OFFSET..PATCH_OFFSET + WINDOW).contains(&x);
                    let want = if inside {
                        let sr = mirror(r as isize + (y - PATCH_OFFSET) as isize - half, 5);
                        let sc = mirror(c as isize + (x - PATCH_OFFSET) as isize - half, 7);
                        rp.hsi.at(b, sr, sc)
                    } else {
                        0.0
                    };
                    assert_eq!(got, want, "band {b} ({y}, {x}) for pixel ({r}, {c})");
                }
            }
        }
        // Centre of the window is the pixel itself.
        let centre = (PATCH_OFFSET + WINDOW / 2) * PATCH + PATCH_OFFSET + WINDOW / 2;
        assert_eq!(s.lidar[centre], rp.lidar.at(0, r, c));
    }
}

#[test]
fn single_row_scene_repeats_its_only_row() {
    let h = 1;
    let rp = RasterPair::new(
        Cube::new(1, h, 3, vec![1.0, 2.0, 3.0]).unwrap(),
        Cube::new(1, h, 3, vec![0.0; 3]).unwrap(),
        vec![1, 1, 1],
        1,
    )
    .unwrap();
    let s = extract_patch(&rp, 0, 1).unwrap();
    let row = |y: usize| &s.hsi[y * PATCH + PATCH_OFFSET..][..WINDOW];
    for y in PATCH_OFFSET..PATCH_OFFSET + WINDOW {
        assert_eq!(row(y), row(PATCH_OFFSET));
    }
}

#[test]
fn unlabeled_or_outside_pixels_are_contract_errors() {
    let rp = coded_scene(5, 7);
    assert!(matches!(extract_patch(&rp, 0, 0), Err(Error::Contract(_))));
    assert!(matches!(extract_patch(&rp, 5, 1), Err(Error::Contract(_))));
    assert!(matches!(extract_patch(&rp, 0, 7), Err(Error::Contract(_))));
}

#[test]
fn batches_gather_requested_modalities() {
    let rp = coded_scene(5, 7);
    let coords = rp.labeled_pixels();
    let set = PatchSet::from_coords(&rp, &coords).unwrap();
    assert_eq!(set.len(), coords.len());
    let (h, l, y) = set.batch(&[2, 0], Modality::Multimodal);
    let (h, l) = (h.unwrap(), l.unwrap());
    assert_eq!(h.shape(), &[2, 2, PATCH, PATCH]);
    assert_eq!(l.shape(), &[2, 1, PATCH, PATCH]);
    let first = extract_patch(&rp, coords[2].0, coords[2].1).unwrap();
    assert_eq!(&h.data()[..first.hsi.len()], first.hsi.as_slice());
    assert_eq!(y[0], first.label);
    let (h, l, _) = set.batch(&[1], Modality::LidarOnly);
    assert!(h.is_none() && l.is_some());
    let (h, l, _) = set.batch(&[1], Modality::HsiOnly);
    assert!(h.is_some() && l.is_none());
}

#[test]
fn normalization_maps_bands_to_unit_range() {
    let mut rp = coded_scene(4, 6);
    rp.lidar.data.fill(7.5);
    rp.normalize();
    for b in 0..2 {
        let band = rp.hsi.band(b);
        assert_eq!(band.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(band.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }
    assert!(rp.lidar.data.iter().all(|&v| v == 0.0));
}

#[test]
fn raster_round_trip_is_lossless_for_f32_values() {
    let mut rp = synth_scene_with(&small_synth(3)).unwrap();
    rp.band_names[0] = "blue ë".into();
    let bytes = encode_raster(&rp);
    let back = decode_raster(&bytes, Path::new("mem")).unwrap();
    assert_eq!(back, rp);
    assert_eq!(encode_raster(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.rsrf");
    write_raster(&path, &rp).unwrap();
    let loaded = load_raster(&path).unwrap();
    let mut normalized = rp.clone();
    normalized.normalize();
    assert_eq!(loaded, normalized);
}

fn expect_corrupt(bytes: &[u8], needle: &str) {
    match decode_raster(bytes, Path::new("scene.rsrf")) {
        Err(e @ Error::Corrupt { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains(needle) && msg.contains("scene.rsrf"), "{msg}");
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected corrupt-file error, got {other:?}"),
    }
}

#[test]
fn malformed_containers_are_rejected() {
    let rp = coded_scene(3, 4);
    let good = encode_raster(&rp);

    let mut bad = good.clone();
    bad[0] = b'X';
    expect_corrupt(&bad, "magic");

    let mut bad = good.clone();
    bad[4] = 9;
    expect_corrupt(&bad, "version");

    expect_corrupt(&good[..good.len() - 1], "truncated");
    expect_corrupt(&good[..10], "truncated");

    let mut bad = good.clone();
    bad.push(0);
    expect_corrupt(&bad, "trailing");

    // First HSI value sits right after the 32-byte header (no band names).
    let mut bad = good.clone();
    bad[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
    expect_corrupt(&bad, "non-finite");
}

#[test]
fn label_grid_must_match_the_image() {
    let rp = coded_scene(3, 4);
    let mut bytes = encode_raster(&rp);
    let at = bytes.len() - 2 * 12 - 8;
    bytes[at..at + 4].copy_from_slice(&4u32.to_le_bytes());
    bytes[at + 4..at + 8].copy_from_slice(&3u32.to_le_bytes());
    let e = decode_raster(&bytes, Path::new("x")).unwrap_err();
    assert!(matches!(e, Error::CoRegistration(_)), "{e}");
    assert_eq!(e.exit_code(), 2);

    let lidar = Cube::new(1, 4, 3, vec![0.0; 12]).unwrap();
    assert!(matches!(RasterPair::new(rp.hsi.clone(), lidar, rp.labels.clone(), 2), Err(Error::CoRegistration(_))));
    assert!(matches!(
        RasterPair::new(rp.hsi.clone(), rp.lidar.clone(), vec![0; 11], 2),
        Err(Error::CoRegistration(_))
    ));
}

#[test]
fn labels_above_class_count_are_rejected() {
    let rp = coded_scene(3, 4);
    let mut labels = rp.labels.clone();
    labels[5] = 3;
    assert!(matches!(RasterPair::new(rp.hsi, rp.lidar, labels, 2), Err(Error::Label(_))));
}

#[test]
fn missing_file_names_the_path() {
    let e = load_raster("/no/such/scene.rsrf").unwrap_err();
    assert!(e.to_string().contains("/no/such/scene.rsrf"));
    assert_eq!(e.exit_code(), 2);
}

fn small_synth(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::preset(Preset::Trento, 6, seed);
    (cfg.height, cfg.width) = (60, 80);
    cfg
}

#[test]
fn synthetic_scenes_are_seed_deterministic() {
    let a = encode_raster(&synth_scene_with(&small_synth(4)).unwrap());
    let b = encode_raster(&synth_scene_with(&small_synth(4)).unwrap());
    let c = encode_raster(&synth_scene_with(&small_synth(5)).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn presets_have_the_published_shapes() {
    let t = synth_scene(Preset::Trento, 6, 0).unwrap();
    assert_eq!((t.hsi.bands, t.lidar.bands, t.height(), t.width(), t.num_classes), (63, 1, 166, 600, 6));
    assert!(t.class_pixels().iter().all(|c| c.len() > 500));
    assert_eq!(Preset::Muufl.dims(), (64, 2, 325, 220, 11));
    assert!(matches!("nowhere".parse::<Preset>(), Err(Error::Config { .. })));
}

fn class_means(cube: &Cube, rp: &RasterPair) -> Vec<Vec<f64>> {
    rp.class_pixels()
        .iter()
        .map(|px| {
            (0..cube.bands)
                .map(|b| px.iter().map(|&(r, c)| cube.at(b, r, c)).sum::<f64>() / px.len() as f64)
                .collect()
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / (a.len() as f64).sqrt()
}

/// Nearest-class-mean accuracy on pixel vectors of one cube.
fn centroid_accuracy(cube: &Cube, rp: &RasterPair) -> Vec<f64> {
    let means = class_means(cube, rp);
    rp.class_pixels()
        .iter()
        .enumerate()
        .map(|(k, px)| {
            let hits = px
                .iter()
                .filter(|&&(r, c)| {
                    let v: Vec<f64> = (0..cube.bands).map(|b| cube.at(b, r, c)).collect();
                    let best = (0..means.len())
                        .min_by(|&i, &j| dist(&v, &means[i]).total_cmp(&dist(&v, &means[j])))
                        .unwrap();
                    best == k
                })
                .count();
            hits as f64 / px.len() as f64
        })
        .collect()
}

#[test]
fn confusable_pairs_need_the_other_modality() {
    let mut rp = synth_scene_with(&small_synth(7)).unwrap();
    rp.normalize();
    let hsi_means = class_means(&rp.hsi, &rp);
    let lidar_means = class_means(&rp.lidar, &rp);
    // Classes 1 and 2 share a spectrum; classes 3 and 4 share an elevation.
    assert!(dist(&hsi_means[0], &hsi_means[1]) < 0.02);
    assert!(dist(&lidar_means[0], &lidar_means[1]) > 0.1);
    assert!(dist(&lidar_means[2], &lidar_means[3]) < 0.02);
    assert!(dist(&hsi_means[2], &hsi_means[3]) > 0.05);

    let by_hsi = centroid_accuracy(&rp.hsi, &rp);
    let by_lidar = centroid_accuracy(&rp.lidar, &rp);
    let pair = |acc: &[f64], a: usize, b: usize| (acc[a] + acc[b]) / 2.0;
    assert!(pair(&by_lidar, 0, 1) - pair(&by_hsi, 0, 1) > 0.2);
    assert!(pair(&by_hsi, 2, 3) - pair(&by_lidar, 2, 3) > 0.2);
}

#[test]
fn oversized_per_class_request_is_a_config_error() {
    let rp = synth_scene_with(&small_synth(1)).unwrap();
    let smallest = rp.class_pixels().iter().map(Vec::len).min().unwrap();
    let spec = SplitSpec {
        train: TrainAmount::PerClass(smallest + 1),
        test_cap: None,
        seed: 0,
    };
    assert!(matches!(split(&rp, &spec), Err(Error::Config { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_are_stratified_disjoint_and_seeded(seed in any::<u64>(), per in 1usize..30, cap in prop::option::of(1usize..60)) {
        let rp = synth_scene_with(&small_synth(2)).unwrap();
        let spec = SplitSpec { train: TrainAmount::PerClass(per), test_cap: cap, seed };
        let s = split(&rp, &spec).unwrap();
        prop_assert_eq!(&s, &split(&rp, &spec).unwrap());
        let classes = rp.class_pixels();
        for (k, px) in classes.iter().enumerate() {
            let label = k as u16 + 1;
            let n_train = s.train.iter().filter(|&&(r, c)| rp.label(r, c) == label).count();
            let n_test = s.test.iter().filter(|&&(r, c)| rp.label(r, c) == label).count();
            prop_assert_eq!(n_train, per);
            let rest = px.len() - per;
            prop_assert_eq!(n_test, cap.map_or(rest, |c| c.min(rest)));
        }
        prop_assert!(s.train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.test.iter().all(|p| s.train.binary_search(p).is_err()));
    }

    #[test]
    fn fraction_splits_keep_both_sides(seed in any::<u64>(), f in 0.01f64..0.99) {
        let rp = synth_scene_with(&small_synth(3)).unwrap();
        let spec = SplitSpec { train: TrainAmount::Fraction(f), test_cap: None, seed };
        let s = split(&rp, &spec).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), rp.labeled_pixels().len());
        for (k, px) in rp.class_pixels().iter().enumerate() {
            let n_train = s.train.iter().filter(|&&(r, c)| rp.label(r, c) as usize == k + 1).count();
            prop_assert!(n_train >= 1 && n_train < px.len());
            prop_assert!((n_train as f64 - f * px.len() as f64).abs() <= 1.0);
        }
    }
}
