mod common;

use std::collections::BTreeMap;

use classaid_core::decision::{
    decide_mode, error_severity, intervention_score, mode_inclination, response_total, InterventionComponents,
    InterventionConfig, InterventionWeights, ModeComponents, ModeWeights, ResponseComponents, ResponseWeights,
};
use classaid_core::domain::FeedbackStyle;
use common::triggers::{check_sequence, kind_from, Op, CATEGORIES};
use proptest::prelude::*;

fn op() -> impl Strategy<Value = Op> {
    (
        prop_oneof![0i64..5_000, 5_000i64..60_000, 60_000i64..250_000, 250_000i64..400_000],
        0u8..8,
        0u8..5,
    )
        .prop_map(|(gap_ms, k, c)| Op { gap_ms, kind: kind_from(k, c) })
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trigger_invariants_hold(ops in prop::collection::vec(op(), 1..120)) {
        if let Err(e) = check_sequence(&ops) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn intervention_grows_with_each_component(e in unit(), c in unit(), h in unit(), d in 0.0..=0.5f64) {
        let w = InterventionWeights::default();
        let base = intervention_score(&InterventionComponents { error_severity: e, cognitive_need: c, history_need: h }, &w);
        let bumped = [
            InterventionComponents { error_severity: (e + d).min(1.0), cognitive_need: c, history_need: h },
            InterventionComponents { error_severity: e, cognitive_need: (c + d).min(1.0), history_need: h },
            InterventionComponents { error_severity: e, cognitive_need: c, history_need: (h + d).min(1.0) },
        ];
        for b in bumped {
            prop_assert!(intervention_score(&b, &w) >= base);
        }
    }

    #[test]
    fn weighted_sums_scale_linearly(a in unit(), b in unit(), c in unit(), k in 0.0..=1.0f64) {
        let w = ModeWeights::default();
        let m = |x: f64| ModeComponents { cognitive_vote: a * x, error_vote: b * x, history_vote: c * x };
        prop_assert!((mode_inclination(&m(k), &w) - k * mode_inclination(&m(1.0), &w)).abs() < 1e-12);

        let iw = InterventionWeights::default();
        let i = |x: f64| InterventionComponents { error_severity: a * x, cognitive_need: b * x, history_need: c * x };
        prop_assert!((intervention_score(&i(k), &iw) - k * intervention_score(&i(1.0), &iw)).abs() < 1e-12);

        let rw = ResponseWeights::default();
        let r = |x: f64| ResponseComponents { relevance: a * x, complexity_fit: b * x, consistency: c * x, clarity: a * x, urgency: b * x };
        prop_assert!((response_total(&r(k), &rw) - k * response_total(&r(1.0), &rw)).abs() < 1e-12);
    }

    #[test]
    fn weighted_sums_stay_in_the_unit_interval(a in unit(), b in unit(), c in unit(), d in unit(), e in unit()) {
        let r = ResponseComponents { relevance: a, complexity_fit: b, consistency: c, clarity: d, urgency: e };
        let t = response_total(&r, &ResponseWeights::default());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&t));
        let m = ModeComponents { cognitive_vote: a, error_vote: b, history_vote: c };
        let decision = decide_mode(m, &ModeWeights::default());
        prop_assert_eq!(decision.chosen == FeedbackStyle::Technical, decision.technical_inclination > 0.5);
    }

    #[test]
    fn severity_never_drops_as_errors_accumulate(counts in prop::collection::vec(0usize..6, 5), which in 0usize..5) {
        let cfg = InterventionConfig::default();
        let map = |cs: &[usize]| -> BTreeMap<_, _> {
            CATEGORIES.iter().zip(cs).filter(|(_, &n)| n > 0).map(|(c, &n)| (*c, n)).collect()
        };
        let before = error_severity(&map(&counts), &cfg);
        let mut more = counts.clone();
        more[which] += 1;
        let after = error_severity(&map(&more), &cfg);
        prop_assert!(after >= before);
        prop_assert!(after <= 0.7 + 1e-12);
    }
}
