use std::collections::HashMap;
use std::path::PathBuf;

use petreid_core::pairs::{assign_folds, pair_stream};
use petreid_core::{ImageRecord, Label, Manifest, Split};
use proptest::prelude::*;

fn manifest(sources_per_pet: &[usize]) -> Manifest {
    let mut records = Vec::new();
    for (p, &n) in sources_per_pet.iter().enumerate() {
        for s in 0..n {
            for v in 0..3u8 {
                let source_id = format!("p{p}/{s}.png");
                records.push(ImageRecord {
                    pet_id: format!("p{p}"),
                    image_id: format!("{source_id}#{v}"),
                    source_id,
                    variant: v,
                    path: format!("images/p{p}/{s}_v{v}.png"),
                    split: Split::Train,
                });
            }
        }
    }
    Manifest::new(PathBuf::new(), records).unwrap()
}

#[test]
fn ten_thousand_balanced_pairs() {
    let m = manifest(&[2, 3, 4, 1, 5, 2]);
    let pairs = pair_stream(&m, Split::Train, 0.5, 11, 10_000).unwrap();
    let same = pairs.iter().filter(|p| p.label == Label::Same).count() as f64 / 1e4;
    assert!((0.48..=0.52).contains(&same), "same fraction {same}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn labels_agree_with_pets(
        sources in prop::collection::vec(1usize..5, 2..7),
        seed in any::<u64>(),
        p_same in 0.0f64..=1.0,
    ) {
        prop_assume!(sources.iter().any(|&n| n >= 2) || p_same == 0.0);
        let m = manifest(&sources);
        let by_id: HashMap<&str, &ImageRecord> =
            m.records().iter().map(|r| (r.image_id.as_str(), r)).collect();
        for p in pair_stream(&m, Split::Train, p_same, seed, 200).unwrap() {
            let (a, b) = (by_id[p.a.as_str()], by_id[p.b.as_str()]);
            prop_assert_ne!(&a.source_id, &b.source_id);
            prop_assert_eq!(p.label == Label::Same, a.pet_id == b.pet_id);
        }
    }

    #[test]
    fn folds_partition(count in 2usize..500, k in 2usize..10) {
        prop_assume!(count >= k);
        let folds = assign_folds(count, k).unwrap().folds();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
