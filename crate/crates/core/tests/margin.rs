mod common;

use common::*;
use proptest::prelude::*;
use sdmix::margin::{boundary_distance_linear, margin_loss_on_tape, select_hinges, MarginConfig, MarginTerm};
use sdmix::numerics::{Tape, Tensor};

#[test]
fn first_order_ratio_is_exact_for_affine_scores() {
    for seed in 0..300 {
        let inst = affine_instance(seed, None);
        let ratio = inst.first_order_ratio();
        let closed = inst.closed_form();
        assert!((ratio.abs() - closed).abs() <= 1e-10, "seed {seed}: {ratio} vs {closed}");
        let lib = boundary_distance_linear(&inst.w, &inst.b, &inst.x, inst.c, inst.y).unwrap();
        assert!((lib - closed).abs() <= 1e-12);
    }
}

#[test]
fn grid_minimizer_agrees_in_two_dimensions() {
    let mut checked = 0;
    for seed in 0..20 {
        let inst = affine_instance(seed, Some(2));
        let closed = inst.closed_form();
        match inst.grid_distance(1e-3, 1.0) {
            Some(d) => {
                assert!((d - closed).abs() <= 2e-3, "seed {seed}: grid {d} vs {closed}");
                checked += 1;
            }
            None => assert!(closed > 1.0 - 2e-3, "seed {seed}: grid missed a line at {closed}"),
        }
    }
    assert!(checked >= 5);
}

#[test]
fn hinge_is_signed_distance_plus_margin() {
    // h = (1, 3), y = 0: h_1 − h_0 = 2 over ‖∇‖ = 4 gives 0.5, plus γ.
    let cfg = MarginConfig {
        gamma: 1.0,
        ..MarginConfig::default()
    };
    let mut hits = 0;
    let h = select_hinges(&[1.0, 3.0], 0, |_| 4.0, &cfg, &mut hits);
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].class, 1);
    assert_eq!(h[0].value, 1.5);
    // Correct side by more than γ: inactive.
    assert!(select_hinges(&[10.0, 3.0], 0, |_| 1.0, &cfg, &mut hits).is_empty());
    assert_eq!(hits, 0);
    select_hinges(&[0.0, 0.0], 0, |_| 0.0, &cfg, &mut hits);
    assert_eq!(hits, 1);
}

#[test]
fn margin_terms_weight_each_label() {
    // Two rows of 3-class scores; unit denominators; γ = 1, top 1.
    let cfg = MarginConfig {
        gamma: 1.0,
        ..MarginConfig::default()
    };
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::new(vec![2, 3], vec![0.0, 0.5, -1.0, 2.0, 0.0, 0.0]).unwrap());
    let terms = [
        MarginTerm { row: 0, label: 0, weight: 0.3 },
        MarginTerm { row: 0, label: 2, weight: 0.7 },
        MarginTerm { row: 1, label: 0, weight: 1.0 },
    ];
    let mut hits = 0;
    let loss = margin_loss_on_tape(&mut tape, h, &terms, &|_, _, _| 1.0, &cfg, &mut hits).unwrap();
    // Row 0, y = 0: max over {0.5, −1} → 1 + 0.5. Row 0, y = 2: 1 + 1.5.
    // Row 1, y = 0: 1 − 2 < 0, inactive.
    let want = 0.3 * 1.5 + 0.7 * 2.5;
    assert!((tape.value(loss).unwrap().item().unwrap() - want).abs() < 1e-15);
    let g = tape.backward(loss).unwrap();
    let expect = [-0.3, 0.3 + 0.7, -0.7, 0.0, 0.0, 0.0];
    for (a, b) in g.get(h).unwrap().data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn selected_hinges_are_top_c_and_positive(
        scores in prop::collection::vec(-5.0f64..5.0, 2..8),
        top_c in 1usize..4,
        gamma in 0.1f64..5.0,
        seed in 0usize..100,
    ) {
        let y = seed % scores.len();
        let cfg = MarginConfig { gamma, top_c, ..MarginConfig::default() };
        let mut hits = 0;
        let h = select_hinges(&scores, y, |c| 1.0 + c as f64, &cfg, &mut hits);
        prop_assert!(h.len() <= top_c);
        prop_assert!(h.iter().all(|x| x.value > 0.0 && x.class != y));
        for pair in h.windows(2) {
            prop_assert!(pair[0].value >= pair[1].value);
        }
        let all: Vec<f64> = (0..scores.len())
            .filter(|&c| c != y)
            .map(|c| gamma + (scores[c] - scores[y]) / (1.0 + c as f64))
            .collect();
        if let Some(first) = h.first() {
            prop_assert!(all.iter().all(|&v| v <= first.value + 1e-12));
        }
    }

    #[test]
    fn affine_ratio_is_scale_free(seed in 0u64..10_000, k in 0.1f64..10.0) {
        let mut inst = affine_instance(seed, None);
        let before = inst.first_order_ratio();
        inst.w.data_mut().iter_mut().for_each(|v| *v *= k);
        inst.b.iter_mut().for_each(|v| *v *= k);
        prop_assert!((inst.first_order_ratio() - before).abs() <= 1e-9 * before.abs().max(1.0));
    }
}
