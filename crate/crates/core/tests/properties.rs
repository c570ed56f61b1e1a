mod common;

use aims_core::data::{Image, MaskPrompt, PromptType};
use aims_core::eval::metrics::{association_recall_at_k, average_precision, ImageLinks};
use aims_core::inference::{keep_predictions, Letterbox, RawOutput};
use aims_core::training::{hungarian_match, TrainConfig};
use aims_core::{Level, Mask, Rle};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask::from_bits(h, w, bits).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rle_round_trips(mask in mask_strategy(24)) {
        let rle: Rle = mask.to_rle();
        prop_assert_eq!(rle.decode().unwrap(), mask.clone());
        let json = serde_json::to_string(&rle).unwrap();
        let back: Rle = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.decode().unwrap(), mask);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::oracles::random_box(&mut rng);
        let y = common::oracles::random_box(&mut rng);
        let (p, q) = (x.iou(&y).unwrap(), y.iou(&x).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, q);
        prop_assert_eq!(x.iou(&x).unwrap(), 1.0);
    }

    #[test]
    fn average_precision_is_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = common::oracles::random_detections(&mut rng);
        if let Some(r) = average_precision(&images) {
            for v in [r.ap, r.ap50, r.ap75] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn association_recall_grows_with_k(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<ImageLinks> = common::oracles::random_links(&mut rng);
        let mut last = 0.0;
        for k in [0, 1, 2, 5, 100] {
            if let Some(r) = association_recall_at_k(&images, k) {
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert!(r >= last);
                last = r;
            }
        }
    }

    #[test]
    fn hungarian_beats_identity_assignment(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0));
        let m = hungarian_match(&cost).unwrap();
        prop_assert_eq!(m.pairs.len(), rows.min(cols));
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(r, c) in &m.pairs {
            prop_assert!(!seen_r[r] && !seen_c[c]);
            seen_r[r] = true;
            seen_c[c] = true;
        }
        let diagonal: f64 = (0..rows.min(cols)).map(|i| cost[[i, i]]).sum();
        prop_assert!(m.total_cost(&cost) <= diagonal + 1e-9);
    }

    #[test]
    fn kept_predictions_respect_prompt_and_threshold(seed in any::<u64>(), thr in 0.0f64..0.9) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, n) = (8, 8, 6);
        let raw = RawOutput {
            ness: std::array::from_fn(|_| (0..n).map(|_| rng.random_range(-4.0..4.0)).collect()),
            masks: std::array::from_fn(|_| Array2::from_shape_fn((h * w, n), |_| rng.random_range(-2.0..2.0))),
            assoc: std::array::from_fn(|_| Array2::zeros((n, n))),
        };
        let prompt = Mask::from_fn(h, w, |_, _| rng.random_bool(0.6));
        for level in Level::ALL {
            let low = keep_predictions(&raw, level, &prompt, thr);
            let high = keep_predictions(&raw, level, &prompt, thr + 0.1);
            for (i, m) in low.masks.iter().enumerate() {
                prop_assert!(m.is_subset_of(&prompt) && !m.is_empty());
                prop_assert!(low.scores[i] > 0.0 && low.scores[i] <= 1.0);
                if i > 0 {
                    prop_assert!(low.scores[i - 1] >= low.scores[i]);
                }
            }
            prop_assert!(high.queries.iter().all(|q| low.queries.contains(q)));
        }
    }

    #[test]
    fn letterbox_maps_full_masks_to_content(h in 1usize..200, w in 1usize..200) {
        let lb = Letterbox::new(h, w, 64, 64);
        prop_assert!(lb.content_h <= 64 && lb.content_w <= 64);
        prop_assert!(lb.content_h == 64 || lb.content_w == 64);
        let inside = lb.mask_to_model(&Mask::full(h, w));
        prop_assert_eq!(inside.count(), lb.content_h * lb.content_w);
        prop_assert_eq!(lb.mask_from_model(&Mask::full(64, 64)), Mask::full(h, w));
        let image = lb.apply(&Image::filled(h, w, [200, 10, 30]));
        prop_assert_eq!((image.height(), image.width()), (64, 64));
        prop_assert_eq!(image.pixel(63, 63) == [0, 0, 0], lb.content_h < 64 || lb.content_w < 64);
    }

    #[test]
    fn prompt_validation_rejects_empty_and_mismatched(h in 1usize..16, w in 1usize..16) {
        prop_assert!(MaskPrompt::new(Mask::empty(h, w), PromptType::PartialImage, h, w).is_err());
        prop_assert!(MaskPrompt::new(Mask::full(h, w), PromptType::PartialImage, h + 1, w).is_err());
        prop_assert!(MaskPrompt::new(Mask::full(h, w), PromptType::OneEntity, h, w).is_ok());
    }

    #[test]
    fn learning_rate_schedule_is_piecewise_constant(step in 0usize..2000) {
        let c = TrainConfig::toy();
        let drops = c.milestones.iter().filter(|&&m| step >= m).count() as i32;
        let want = c.learning_rate * c.decay_factor.powi(drops);
        prop_assert!((c.learning_rate_at(step) - want).abs() <= 1e-15);
    }
}
