use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spnas::data::{split_indices, synth_classification, Dataset, SynthConfig};
use spnas::nas::{train_fixed, TrainConfig};
use spnas::space::{Architecture, MBConvType, SearchSpaceConfig};
use spnas::{Error, Tensor};

fn fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3];
    images.extend_from_slice(&[0, 255, 128, 1, 2, 3]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 1, 3];
    (images, labels)
}

#[test]
fn one_image_fixture() {
    let (images, labels) = fixture();
    let d = Dataset::from_idx_bytes(&images, &labels, 0).unwrap();
    assert_eq!(d.images.shape(), &[1, 1, 2, 3]);
    assert_eq!(d.images.data()[0], 0.0);
    assert_eq!(d.images.data()[1], 1.0);
    assert_eq!(d.images.data()[2], 128.0 / 255.0);
    assert_eq!(d.labels, vec![3]);
    assert_eq!(d.classes, 4);
}

#[test]
fn truncation_reports_the_file_end() {
    let (images, labels) = fixture();
    for cut in [2, 6, 15, 17, images.len() - 1] {
        match Dataset::from_idx_bytes(&images[..cut], &labels, 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut as u64, "cut at {cut}"),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut bad = images.clone();
    bad[3] = 0x01;
    assert!(matches!(
        Dataset::from_idx_bytes(&bad, &labels, 0),
        Err(Error::Format { offset: 0, .. })
    ));
}

#[test]
fn idx_round_trip_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 37;
    let pixels: Vec<f64> = (0..n * 5 * 4).map(|_| rng.gen_range(0..=255u8) as f64 / 255.0).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
    let d = Dataset::new(Tensor::new(vec![n, 1, 5, 4], pixels).unwrap(), labels, 7, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    d.save_idx(&ip, &lp).unwrap();
    let back = Dataset::load_idx(&ip, &lp, 11).unwrap();
    // `classes` is inferred from the labels on load
    assert_eq!(back.images, d.images);
    assert_eq!(back.labels, d.labels);
    assert_eq!(back.train, d.train);
    assert_eq!(back.valid, d.valid);
}

#[test]
fn synthetic_determinism_and_class_coverage() {
    let cfg = SynthConfig {
        n: 64,
        image_size: 10,
        ..Default::default()
    };
    let a = synth_classification(&cfg, 5).unwrap();
    let b = synth_classification(&cfg, 5).unwrap();
    assert!(a.images.data().iter().zip(b.images.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a, b);
    assert_ne!(a.images, synth_classification(&cfg, 6).unwrap().images);
    let one = synth_classification(
        &SynthConfig {
            n: 4,
            classes: 4,
            image_size: 8,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    assert_eq!(one.class_counts(), vec![1, 1, 1, 1]);
    assert!(synth_classification(&SynthConfig { classes: 1, ..cfg }, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_are_disjoint_exhaustive_and_seeded(n in 1usize..300, seed in any::<u64>()) {
        let (train, valid) = split_indices(n, 0.2, seed);
        let mut all: Vec<usize> = train.iter().chain(&valid).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!((train, valid), split_indices(n, 0.2, seed));
    }

    #[test]
    fn synthetic_values_and_labels_in_range(seed in 0u64..1000, classes in 2usize..6) {
        let d = synth_classification(&SynthConfig { n: 20, classes, image_size: 6, ..Default::default() }, seed).unwrap();
        prop_assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(d.labels.iter().all(|&l| l < classes));
        prop_assert_eq!(d.class_counts().iter().sum::<usize>(), 20);
    }
}

#[test]
fn two_layer_net_learns_the_default_task() {
    let space = SearchSpaceConfig::default();
    let two = SearchSpaceConfig {
        layers: space.layers[..2].to_vec(),
        ..space
    };
    let data = synth_classification(&SynthConfig::default(), 0).unwrap();
    let arch = Architecture(vec![MBConvType::MIN; 2]);
    let (report, _) = train_fixed::<f64>(&two, &arch, &data, &TrainConfig { epochs: 5, ..Default::default() }).unwrap();
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
}
