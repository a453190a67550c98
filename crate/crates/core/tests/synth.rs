use hyperview::hypergraph::{hsv_mask, HsvThresholds};
use hyperview::synth::{render_view, EncodedScene, SceneSpec, ToyEncoder, ViewKind};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scene_to_latents_is_bit_reproducible(seed in any::<u64>()) {
        let scene = SceneSpec::random(seed);
        let enc = ToyEncoder::new(8, 0).unwrap();
        let views = [ViewKind::Front, ViewKind::Up];
        let a = EncodedScene::render(&scene, &views, 32, &enc).unwrap();
        let b = EncodedScene::render(&SceneSpec::random(seed), &views, 32, &ToyEncoder::new(8, 0).unwrap()).unwrap();
        let same = a
            .latents
            .stacked()
            .data()
            .iter()
            .zip(b.latents.stacked().data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn hsv_mask_recovers_coverage(seed in any::<u64>(), res in 16usize..64, up in any::<bool>()) {
        let view = if up { ViewKind::Up } else { ViewKind::Front };
        let (img, coverage) = render_view(&SceneSpec::random(seed), view, res);
        prop_assert_eq!(hsv_mask(&img, HsvThresholds::default()), coverage);
    }
}
