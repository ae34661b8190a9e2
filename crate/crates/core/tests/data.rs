use cosprune::data::{dataset_checksum, generate, load_dataset, save_dataset, split, DatasetConfig};
use proptest::prelude::*;

fn cfg(seed: u64, n: usize) -> DatasetConfig {
    DatasetConfig {
        n_samples: n,
        height: 16,
        width: 16,
        ..DatasetConfig::desk(seed)
    }
}

#[test]
fn generation_is_bitwise_deterministic() {
    let a = generate(&cfg(4, 6)).unwrap();
    let b = generate(&cfg(4, 6)).unwrap();
    assert_eq!(a, b);
    assert_eq!(dataset_checksum(&a), dataset_checksum(&b));
    assert_ne!(dataset_checksum(&a), dataset_checksum(&generate(&cfg(5, 6)).unwrap()));
}

#[test]
fn default_desk_split_is_512_128() {
    let d = DatasetConfig::desk(0);
    let (train, val) = split(d.n_samples, 0.2, 0).unwrap();
    assert_eq!((train.len(), val.len()), (512, 128));
}

#[test]
fn stored_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(2, 10);
    let samples = generate(&c).unwrap();
    let (train, val) = split(samples.len(), 0.2, 1).unwrap();
    let manifest = save_dataset(dir.path(), &c, &samples, 0.2, &train, &val).unwrap();
    let (stored, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(stored.samples, samples);
    assert_eq!((stored.train, stored.val), (train, val));
    assert_eq!(loaded.checksum, manifest.checksum);
    assert_eq!(loaded.checksum, dataset_checksum(&samples));
}

#[test]
fn invalid_config_is_rejected() {
    assert!(generate(&DatasetConfig { classes: 1, ..cfg(0, 2) }).is_err());
    assert!(generate(&DatasetConfig { d_min: 0.0, ..cfg(0, 2) }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_sample_satisfies_invariants(seed in any::<u64>()) {
        let c = cfg(seed, 3);
        for s in generate(&c).unwrap() {
            let hw = s.height * s.width;
            prop_assert_eq!(s.image.len(), 3 * hw);
            prop_assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(s.seg.iter().all(|&l| (l as usize) < c.classes));
            prop_assert!(s.depth.iter().all(|&d| d as f64 >= c.d_min - 1e-6 && d <= 1.0));
            for p in 0..hw {
                let n = (0..3).map(|k| (s.normals[k * hw + p] as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-5, "normal norm {}", n);
            }
        }
    }
}
