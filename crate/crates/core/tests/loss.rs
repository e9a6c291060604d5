use mfid_core::dataset::Pair;
use mfid_core::loss::*;
use proptest::prelude::*;

fn simplex(k: usize) -> impl Strategy<Value = ProbabilityVector> {
    prop::collection::vec(-6.0f64..6.0, k).prop_map(|z| softmax(&z).unwrap())
}

fn two_simplices() -> impl Strategy<Value = (ProbabilityVector, ProbabilityVector)> {
    (2usize..12).prop_flat_map(|k| (simplex(k), simplex(k)))
}

const EPS: f64 = DEFAULT_EPSILON;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_diagonal((p, q) in two_simplices()) {
        prop_assert!(kl_div(&p, &q, EPS).unwrap() >= 0.0);
        prop_assert!(kl_div(&p, &p, EPS).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn similar_term_is_symmetric((p, q) in two_simplices()) {
        let a = sim_pair_loss(&p, &q, EPS).unwrap();
        let b = sim_pair_loss(&q, &p, EPS).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn dissimilar_term_vanishes_beyond_margin((p, q) in two_simplices(), m in 0.0f64..3.0) {
        let d = dissim_pair_loss(&p, &q, m, EPS).unwrap();
        let (f, b) = (kl_div(&p, &q, EPS).unwrap(), kl_div(&q, &p, EPS).unwrap());
        if f >= m && b >= m {
            prop_assert_eq!(d, 0.0);
        }
        prop_assert!(d >= 0.0 && d <= 2.0 * m + 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_of_terms(
        logits in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 4), 6),
        labels in prop::collection::vec(0usize..4, 6),
        ws in 0.0f64..3.0,
        wd in 0.0f64..3.0,
    ) {
        let pairs: Vec<Pair> = [(0, 1), (2, 3), (4, 5), (0, 5)]
            .iter()
            .map(|&(a, b)| Pair { a, b, similar: labels[a] == labels[b] })
            .collect();
        let cfg = LossConfig { similar_weight: ws, dissimilar_weight: wd, ..Default::default() };
        let r = total_loss(&logits, &labels, &pairs, &cfg).unwrap();
        let expected = r.ce_term + ws * r.sim_term + wd * r.dissim_term;
        prop_assert!((r.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert_eq!(r.similar_pairs + r.dissimilar_pairs, 4);
    }

    #[test]
    fn gradient_rows_sum_to_zero(
        logits in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 4),
        labels in prop::collection::vec(0usize..3, 4),
    ) {
        let pairs = vec![
            Pair { a: 0, b: 1, similar: labels[0] == labels[1] },
            Pair { a: 2, b: 3, similar: labels[2] == labels[3] },
        ];
        let g = loss_gradient(&logits, &labels, &pairs, &LossConfig::default()).unwrap();
        for row in g {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
