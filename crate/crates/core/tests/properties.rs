use proptest::prelude::*;
use vsrkit_core::sosr::wmse_value;
use vsrkit_core::{Shape, Tensor};

fn images(h: usize, w: usize) -> impl Strategy<Value = (Tensor, Tensor, Tensor)> {
    let n = h * w;
    (
        prop::collection::vec(0.0f32..1.0, n),
        prop::collection::vec(0.0f32..1.0, n),
        prop::collection::vec(0.0f32..4.0, n),
    )
        .prop_map(move |(a, b, m)| {
            let s = Shape::new(1, 1, h, w);
            (Tensor::from_vec(s, a).unwrap(), Tensor::from_vec(s, b).unwrap(), Tensor::from_vec(s, m).unwrap())
        })
}

proptest! {
    #[test]
    fn wmse_is_symmetric_and_nonnegative((sr, hr, w) in images(5, 7)) {
        let ab = wmse_value(&sr, &hr, &w).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, wmse_value(&hr, &sr, &w).unwrap());
        prop_assert_eq!(wmse_value(&sr, &sr, &w).unwrap(), 0.0);
    }

    #[test]
    fn wmse_scales_with_the_weight_map((sr, hr, w) in images(4, 4), k in 0.0f32..8.0) {
        let base = wmse_value(&sr, &hr, &w).unwrap();
        let scaled = wmse_value(&sr, &hr, &w.map(|v| v * k)).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-5 * (1.0 + k * base));
    }
}
