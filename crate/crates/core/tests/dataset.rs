use proptest::prelude::*;
use rgnet_core::config::Task;
use rgnet_core::dataset::synth::{
    find_squares, generate_synthetic, hue_distance, render_all, rgb_hue, single_square_baseline, SynthSpec, SynthTask,
    BACKGROUND,
};
use rgnet_core::dataset::{binarize_ava, decode_ppm, encode_ppm, load_image, Manifest, Record, Samples, Target};
use rgnet_tensor::image::{hflip, resize_bilinear};
use rgnet_tensor::Tensor;

#[test]
fn ppm_decodes_channels() {
    let bytes = encode_ppm(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255], 2, 2);
    let t: Tensor<f64> = decode_ppm(&bytes).unwrap();
    assert_eq!(t.shape(), &[3, 2, 2]);
    // channel-major: R plane, G plane, B plane
    assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn ppm_header_comments_and_errors() {
    let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
    bytes.extend([10, 20, 30]);
    let t: Tensor<f64> = decode_ppm(&bytes).unwrap();
    assert_eq!(t.data(), &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    assert!(decode_ppm::<f64>(b"P5\n1 1\n255\n\0").is_err());
    assert!(decode_ppm::<f64>(b"P6\n2 2\n255\n\0\0\0").is_err());
    assert!(decode_ppm::<f64>(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    assert!(decode_ppm::<f64>(b"P6\nx 1\n255\n\0\0\0").is_err());
}

#[test]
fn resize_keeps_constants_and_ramps() {
    let c = Tensor::<f64>::full(vec![3, 7, 5], 0.37);
    let r = resize_bilinear(&c, 300, 300).unwrap();
    assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));

    // I(y, x) = a + b y + c x, sampled on an 11 x 17 grid
    let (h, w) = (11usize, 17usize);
    let ramp = Tensor::<f64>::from_fn(vec![1, h, w], |i| 0.1 + 0.02 * (i / w) as f64 + 0.03 * (i % w) as f64);
    for (oh, ow) in [(300, 300), (6, 9), (23, 40)] {
        let r = resize_bilinear(&ramp, oh, ow).unwrap();
        for y in 0..oh {
            for x in 0..ow {
                let sy = y as f64 * (h - 1) as f64 / (oh - 1) as f64;
                let sx = x as f64 * (w - 1) as f64 / (ow - 1) as f64;
                let want = 0.1 + 0.02 * sy + 0.03 * sx;
                assert!((r.data()[y * ow + x] - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn load_image_resizes_to_side() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ppm");
    std::fs::write(&path, encode_ppm(&[51; 3 * 4 * 6], 6, 4)).unwrap();
    let t: Tensor<f64> = load_image(&path, 300).unwrap();
    assert_eq!(t.shape(), &[3, 300, 300]);
    assert!(t.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    assert!(load_image::<f64>(&dir.path().join("missing.ppm"), 300).is_err());
}

#[test]
fn ava_binarization() {
    assert_eq!(binarize_ava(4.99).unwrap(), 0);
    assert_eq!(binarize_ava(5.0).unwrap(), 1);
    assert_eq!(binarize_ava(9.3).unwrap(), 1);
    assert!(binarize_ava(0.5).is_err());
    assert!(binarize_ava(10.5).is_err());
    let mut prev = 0;
    for i in 0..=900 {
        let l = binarize_ava(1.0 + i as f64 * 0.01).unwrap();
        assert!(l >= prev);
        prev = l;
    }
}

#[test]
fn manifest_parsing() {
    let m = Manifest::parse(
        "{\"path\": \"a.ppm\", \"mean_score\": 6.2}\n\n{\"path\": \"b.ppm\", \"mean_score\": 3.1}\n",
        "/data",
    )
    .unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.records()[0].target.label().unwrap(), 1);
    assert_eq!(m.records()[1].target.label().unwrap(), 0);
    assert!((m.records()[0].target.loss_target(Task::Regress).unwrap() - 5.2 / 9.0).abs() < 1e-15);
    assert_eq!(m.resolve(&m.records()[0]), std::path::Path::new("/data/a.ppm"));

    for bad in [
        "{\"path\": \"a.ppm\", \"label\": 2}",
        "{\"path\": \"a.ppm\"}",
        "{\"path\": \"a.ppm\", \"label\": 1, \"score\": 0.3}",
        "{\"path\": \"a.ppm\", \"score\": 1.5}",
        "{\"path\": \"a.ppm\", \"label\": 1, \"extra\": 3}",
        "{\"path\": \"a.ppm\", \"label\": 1}\n{\"path\": \"a.ppm\", \"label\": 0}",
        "{\"path\": \"a.ppm\", \"label\": 1}\n{\"path\": \"b.ppm\", \"score\": 0.2}",
        "not json",
    ] {
        assert!(Manifest::parse(bad, ".").is_err(), "{bad}");
    }
}

fn target() -> impl Strategy<Value = Target> {
    prop_oneof![
        (0u8..2).prop_map(Target::Label),
        (1.0f64..=10.0).prop_map(Target::MeanScore),
        (0.0f64..=1.0).prop_map(Target::Score),
    ]
}

proptest! {
    #[test]
    fn manifest_round_trip(kind in 0usize..3, targets in prop::collection::vec(target(), 1..20)) {
        let records: Vec<Record> = targets
            .into_iter()
            .filter(|t| t.kind() as usize == kind)
            .enumerate()
            .map(|(i, target)| Record { path: format!("img/{i}.ppm"), target })
            .collect();
        prop_assume!(!records.is_empty());
        let m = Manifest::new("/root", records).unwrap();
        let back = Manifest::parse(&m.to_jsonl(), "/root").unwrap();
        prop_assert_eq!(back, m);
    }
}

fn longrange(count: usize, side: usize, seed: u64) -> SynthSpec {
    SynthSpec { task: SynthTask::Longrange, count, side, seed, ..SynthSpec::default() }
}

#[test]
fn generation_is_deterministic_and_balanced() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = longrange(10, 96, 3);
    let ma = generate_synthetic(&spec, a.path()).unwrap();
    generate_synthetic(&spec, b.path()).unwrap();
    for r in ma.records() {
        let fa = std::fs::read(ma.resolve(r)).unwrap();
        let fb = std::fs::read(b.path().join(&r.path)).unwrap();
        assert_eq!(fa, fb);
    }
    assert_eq!(
        std::fs::read(a.path().join("manifest.jsonl")).unwrap(),
        std::fs::read(b.path().join("manifest.jsonl")).unwrap()
    );
    let loaded = Manifest::load(&a.path().join("manifest.jsonl")).unwrap();
    let samples = Samples::<f32>::load(&loaded, 64, Task::Classify).unwrap();
    assert_eq!(samples.len(), 10);
    assert_eq!(samples.images[0].shape(), &[3, 64, 64]);

    for task in [SynthTask::Easy, SynthTask::Longrange] {
        for count in [2, 7, 64] {
            let spec = SynthSpec { task, count, side: 64, seed: 1, ..SynthSpec::default() };
            let imgs = render_all(&spec).unwrap();
            let pos = imgs.iter().filter(|i| i.label == 1).count();
            assert_eq!(pos, count / 2);
        }
    }
    assert_ne!(render_all(&longrange(8, 96, 1)).unwrap(), render_all(&longrange(8, 96, 2)).unwrap());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(render_all(&longrange(1, 300, 0)).is_err());
    assert!(render_all(&SynthSpec { min_distance: Some(150.0), ..longrange(8, 100, 0) }).is_err());
    let spec = SynthSpec { min_distance: Some(1000.0), ..longrange(8, 300, 0) };
    assert!(render_all(&spec).is_err());
}

#[test]
fn longrange_images_follow_the_rule() {
    let spec = longrange(200, 300, 7);
    for img in render_all(&spec).unwrap() {
        let squares = find_squares(&img.rgb, 300);
        assert_eq!(squares.len(), 2);
        let ((c1, x1, y1), (c2, x2, y2)) = (squares[0], squares[1]);
        let dist = ((x1 as f64 - x2 as f64).powi(2) + (y1 as f64 - y2 as f64).powi(2)).sqrt();
        assert!(dist >= 150.0);
        let gap = hue_distance(rgb_hue(c1), rgb_hue(c2));
        // 8-bit quantization moves hue by well under a degree at s = v = 0.9
        if img.label == 1 {
            assert!(gap <= 10.0 + 1.0, "{gap}");
        } else {
            assert!(gap >= 60.0 - 1.0, "{gap}");
        }
        let background = img.rgb.chunks(3).filter(|p| p == &[BACKGROUND; 3]).count();
        assert_eq!(background, 300 * 300 - 2 * 24 * 24);
    }
}

#[test]
fn single_square_features_carry_no_label_signal() {
    let imgs = render_all(&longrange(1000, 300, 11)).unwrap();
    let acc = single_square_baseline(&imgs, 300);
    assert!(acc <= 0.55, "{acc}");
}

#[test]
fn labels_survive_horizontal_flip() {
    let side = 128;
    for img in render_all(&longrange(40, side, 5)).unwrap() {
        let t: Tensor<f64> = decode_ppm(&encode_ppm(&img.rgb, side, side)).unwrap();
        let f = hflip(&t).unwrap();
        let rgb: Vec<u8> = (0..side * side)
            .flat_map(|p| (0..3).map(move |c| (c, p)))
            .map(|(c, p)| (f.data()[c * side * side + p] * 255.0).round() as u8)
            .collect();
        let sq = find_squares(&rgb, side);
        assert_eq!(sq.len(), 2);
        let gap = hue_distance(rgb_hue(sq[0].0), rgb_hue(sq[1].0));
        assert_eq!(u8::from(gap <= 11.0), img.label);
    }
}
