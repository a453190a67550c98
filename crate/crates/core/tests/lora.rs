use hyperview::lora::{additive_fuse, merge, AdapterSet, LoraAdapter, ModelSpec, ToyModel};
use hyperview::rng::seeded;
use hyperview::Tensor;
use proptest::prelude::*;

const TARGETS: [(&str, usize, usize); 3] = [("text.0", 16, 16), ("text.1", 16, 16), ("unet.1", 32, 32)];

fn adapter_set(name: &str, seed: u64, rank: usize) -> AdapterSet {
    let mut rng = seeded(seed);
    let adapters = TARGETS
        .iter()
        .map(|&(layer, d, k)| {
            let b = Tensor::randn(&[d, rank], 0.3, &mut rng);
            let a = Tensor::randn(&[rank, k], 0.3, &mut rng);
            LoraAdapter::new(layer, b, a, 1.0).unwrap()
        })
        .collect();
    AdapterSet::new(name, adapters)
}

fn max_diff(a: &ToyModel, b: &ToyModel) -> f64 {
    a.flat_weights()
        .iter()
        .zip(b.flat_weights())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fusion_ignores_adapter_order(
        seed in any::<u64>(),
        rank in 1usize..5,
        order in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let base = ToyModel::base(&ModelSpec::default(), seed).unwrap();
        let sets: Vec<AdapterSet> = (0..3).map(|i| adapter_set(&format!("s{i}"), seed ^ (i as u64 + 1), rank)).collect();
        let shuffled: Vec<AdapterSet> = order.iter().map(|&i| sets[i].clone()).collect();
        let a = additive_fuse(&base, &sets).unwrap();
        let b = additive_fuse(&base, &shuffled).unwrap();
        prop_assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn fusion_groups_freely(seed in any::<u64>(), rank in 1usize..5) {
        let base = ToyModel::base(&ModelSpec::default(), seed).unwrap();
        let sets: Vec<AdapterSet> = (0..3).map(|i| adapter_set(&format!("s{i}"), seed ^ (i as u64 + 11), rank)).collect();
        let flat = additive_fuse(&base, &sets).unwrap();
        let nested = additive_fuse(&additive_fuse(&base, &sets[..2]).unwrap(), &sets[2..]).unwrap();
        prop_assert!(max_diff(&flat, &nested) <= 1e-12);
    }

    #[test]
    fn zero_adapters_merge_to_base(seed in any::<u64>(), rank in 1usize..5) {
        let base = ToyModel::base(&ModelSpec::default(), seed).unwrap();
        let zeros = AdapterSet::new(
            "zero",
            TARGETS
                .iter()
                .map(|&(l, d, k)| LoraAdapter::new(l, Tensor::zeros(&[d, rank]), Tensor::zeros(&[rank, k]), 1.0).unwrap())
                .collect(),
        );
        let merged = merge(&base, &zeros).unwrap();
        let same = base
            .flat_weights()
            .iter()
            .zip(merged.flat_weights())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}
