//! Property tests over the tensor core, data pipeline and stylizer.

mod common;

use common::{check_adain, check_grad_reverse, random_image};
use proptest::prelude::*;
use rand::Rng;

use shapebias::data::{
    augment_base, augment_stylized, build_cue_conflict_set, split_indices, split_sizes, AugmentPipeline, DatasetSpec,
    SplitSpec,
};
use shapebias::seed;
use shapebias::tensor::softmax_rows;

#[test]
fn split_floor_rule_for_every_class_size() {
    let spec = SplitSpec::default();
    for n in 1..=1000usize {
        let (test, val, train) = split_sizes(n, &spec);
        assert_eq!(test, n / 5, "n = {n}");
        assert_eq!(val, (n - test) / 5, "n = {n}");
        assert_eq!(train, n - test - val, "n = {n}");
        let labels = vec![0usize; n];
        let idx = split_indices(&labels, &spec);
        assert_eq!((idx.test.len(), idx.val.len(), idx.train.len()), (test, val, train));
        let mut all: Vec<usize> = idx.test.iter().chain(&idx.val).chain(&idx.train).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>(), "n = {n}");
    }
}

proptest! {
    #[test]
    fn stratified_split_is_disjoint_exhaustive_and_per_class(
        counts in prop::collection::vec(1usize..200, 1..7),
        seed in any::<u64>(),
    ) {
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, n));
        }
        // Interleave so class members are not contiguous.
        let mut rng = seed::stream(seed, "labels", 0);
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let spec = SplitSpec { seed, ..Default::default() };
        let idx = split_indices(&labels, &spec);
        let mut all: Vec<usize> = idx.test.iter().chain(&idx.val).chain(&idx.train).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            let count = |part: &[usize]| part.iter().filter(|&&i| labels[i] == c).count();
            let (t, v, r) = split_sizes(n, &spec);
            prop_assert_eq!((count(&idx.test), count(&idx.val), count(&idx.train)), (t, v, r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn augmentation_stays_in_range_and_size(
        h in 8usize..72,
        w in 8usize..72,
        stream in any::<u64>(),
        stylized in any::<bool>(),
        rotation in any::<bool>(),
        jitter in any::<bool>(),
    ) {
        let img = random_image(h, w, stream);
        let mut p = if rotation { AugmentPipeline::with_rotation() } else { AugmentPipeline::default() };
        p.jitter = jitter;
        p.size = 32;
        let mut rng = seed::stream(stream, "prop-augment", 0);
        let out = if stylized { augment_stylized(&img, &p, &mut rng) } else { augment_base(&img, &p, &mut rng) };
        prop_assert_eq!((out.height(), out.width()), (32, 32));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn adain_matches_style_statistics(
        ch in 4usize..40,
        cw in 4usize..40,
        sh in 4usize..40,
        sw in 4usize..40,
        stream in any::<u64>(),
    ) {
        let r = check_adain((ch, cw), (sh, sw), stream);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn grad_reverse_negates_exactly(
        len in 1usize..64,
        before in prop::collection::vec(any::<u8>(), 0..5),
        after in prop::collection::vec(any::<u8>(), 0..5),
        stream in any::<u64>(),
    ) {
        let r = check_grad_reverse(len, &before, &after, stream);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..8,
        cols in 1usize..12,
        scale in 0.1f32..50.0,
        stream in any::<u64>(),
    ) {
        let mut rng = seed::stream(stream, "prop-softmax", 0);
        let logits: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let p = softmax_rows(&logits, cols);
        for r in p.chunks_exact(cols) {
            let s: f64 = r.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "row sums to {}", s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cue_conflict_labels_always_disagree(
        classes in 2usize..=6,
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let spec = DatasetSpec { num_shape_classes: classes, num_texture_classes: classes, per_class: 5, size: 32, seed, ..Default::default() };
        let set = build_cue_conflict_set(&spec, n).unwrap();
        prop_assert_eq!(set.len(), n);
        prop_assert!(set.iter().all(|s| s.texture_class.is_some_and(|t| t != s.shape_class)));
    }
}
