use factorcov::data_model::{ObservationMatrix, SubsetSelector};
use factorcov::divide_conquer::{align_factors, Partition};
use factorcov::lda::{classify, LdaRule};
use factorcov::metrics::{relative_norm, sparsity_measure};
use factorcov::selection::{select_k_ic, IcPenalty};
use factorcov::threshold::{hard_threshold_correlation, ThresholdConfig};
use faer::prelude::*;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Mat::<f64>::from_fn(rows, cols, |i, j| v[i * cols + j]))
}

/// Random SPD matrix `A A' / n + I`.
fn spd(n: usize) -> impl Strategy<Value = Mat<f64>> {
    matrix(n, n).prop_map(move |a| {
        let mut s = (&a * a.transpose()) * Scale(1.0 / n as f64);
        for i in 0..n {
            s[(i, i)] += 1.0;
        }
        s
    })
}

fn support(m: MatRef<'_, f64>) -> Vec<bool> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] != 0.0).collect()
}

fn permute(m: MatRef<'_, f64>, perm: &[usize]) -> Mat<f64> {
    Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_support_shrinks_as_c_grows(r in spd(6), c1 in 0.0f64..3.0, dc in 0.0f64..3.0, rate in 0.05f64..0.5) {
        let lo = hard_threshold_correlation(r.as_ref(), &ThresholdConfig::new(c1, rate).unwrap()).unwrap();
        let hi = hard_threshold_correlation(r.as_ref(), &ThresholdConfig::new(c1 + dc, rate).unwrap()).unwrap();
        for (a, b) in support(lo.as_ref()).into_iter().zip(support(hi.as_ref())) {
            prop_assert!(a || !b);
        }
        for i in 0..6 {
            prop_assert_eq!(lo[(i, i)], r[(i, i)]);
        }
    }

    #[test]
    fn threshold_is_idempotent(r in spd(6), c in 0.0f64..3.0, rate in 0.05f64..0.5) {
        let cfg = ThresholdConfig::new(c, rate).unwrap();
        let once = hard_threshold_correlation(r.as_ref(), &cfg).unwrap();
        let twice = hard_threshold_correlation(once.as_ref(), &cfg).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn restrict_is_a_row_projection(y in matrix(7, 5), picks in prop::sample::subsequence((0..7usize).collect::<Vec<_>>(), 1..7)) {
        let obs = ObservationMatrix::new(y.clone(), None).unwrap();
        let s = SubsetSelector::new(picks.clone()).unwrap();
        let once = obs.restrict(&s).unwrap();
        prop_assert_eq!(once.n_times(), 5);
        let again = once.restrict(&SubsetSelector::all(picks.len()).unwrap()).unwrap();
        prop_assert_eq!(once.values(), again.values());
        for (r, &i) in picks.iter().enumerate() {
            for t in 0..5 {
                prop_assert_eq!(once.values()[(r, t)], y[(i, t)]);
            }
        }
    }

    #[test]
    fn relative_norm_of_scaled_truth(sigma in spd(5), c in 0.1f64..4.0) {
        let scaled = &sigma * Scale(c);
        let v = relative_norm(scaled.as_ref(), sigma.as_ref()).unwrap();
        prop_assert!((v - (c - 1.0).abs()).abs() < 1e-9, "{v} vs {}", (c - 1.0).abs());
    }

    #[test]
    fn sparsity_is_permutation_invariant(r in spd(6), perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        let thr = hard_threshold_correlation(r.as_ref(), &ThresholdConfig::new(1.0, 0.3).unwrap()).unwrap();
        prop_assert_eq!(sparsity_measure(thr.as_ref(), 0.0), sparsity_measure(permute(thr.as_ref(), &perm).as_ref(), 0.0));
    }

    #[test]
    fn random_partition_covers_every_variable(p in 2usize..60, m in 1usize..6, seed in any::<u64>()) {
        prop_assume!(m <= p);
        let part = Partition::random(p, m, seed).unwrap();
        let mut all: Vec<usize> = part.groups().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..p).collect::<Vec<_>>());
        prop_assert!(part.groups().iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn procrustes_undoes_rotation(f in matrix(12, 2), theta in -3.1f64..3.1, flip in any::<bool>()) {
        prop_assume!(f.squared_norm_l2() > 1e-3);
        let s = if flip { -1.0 } else { 1.0 };
        let q = mat![[theta.cos(), -theta.sin()], [s * theta.sin(), s * theta.cos()]];
        let rotated = &f * &q;
        let aligned = align_factors(f.as_ref(), rotated.as_ref()).unwrap();
        let gap = (&aligned.aligned - &f).norm_l2() / f.norm_l2();
        prop_assert!(gap < 1e-8, "gap {gap}");
    }

    #[test]
    fn ic_prefers_smallest_k_on_ties(y in matrix(6, 8)) {
        prop_assume!(y.squared_norm_l2() > 1e-6);
        let r = select_k_ic(y.as_ref(), 4, IcPenalty::Gp2, false).unwrap();
        let best = r.criterion_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = r.criterion_values.iter().position(|&v| v == best).unwrap();
        prop_assert_eq!(r.k_hat, first);
    }

    #[test]
    fn lda_decision_is_scale_invariant(sigma in spd(4), delta in prop::collection::vec(-2.0f64..2.0, 4),
                                       mu in prop::collection::vec(-2.0f64..2.0, 4), x in prop::collection::vec(-3.0f64..3.0, 4),
                                       c in 0.01f64..100.0) {
        let inv = factorcov::linalg::SpdFactor::new(sigma.as_ref()).unwrap().inverse();
        let sel = SubsetSelector::all(4).unwrap();
        let a = LdaRule::from_parts(delta.clone(), mu.clone(), inv.clone(), sel.clone()).unwrap();
        let b = LdaRule::from_parts(delta, mu, &inv * Scale(1.0 / c), sel).unwrap();
        let da = a.discriminant(&x).unwrap();
        prop_assume!(da.abs() > 1e-9);
        prop_assert_eq!(classify(&x, &a).unwrap(), classify(&x, &b).unwrap());
    }

    #[test]
    fn lda_shift_and_label_swap(sigma in spd(3), delta in prop::collection::vec(-2.0f64..2.0, 3),
                                mu in prop::collection::vec(-2.0f64..2.0, 3), x in prop::collection::vec(-3.0f64..3.0, 3),
                                shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let inv = factorcov::linalg::SpdFactor::new(sigma.as_ref()).unwrap().inverse();
        let sel = SubsetSelector::all(3).unwrap();
        let base = LdaRule::from_parts(delta.clone(), mu.clone(), inv.clone(), sel.clone()).unwrap();
        let d = base.discriminant(&x).unwrap();
        prop_assume!(d.abs() > 1e-9);
        let add = |v: &[f64]| v.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>();
        let shifted = LdaRule::from_parts(delta.clone(), add(&mu), inv.clone(), sel.clone()).unwrap();
        prop_assert_eq!(classify(&x, &base).unwrap(), classify(&add(&x), &shifted).unwrap());
        let swapped = LdaRule::from_parts(delta.iter().map(|v| -v).collect(), mu, inv, sel).unwrap();
        prop_assert_eq!(classify(&x, &base).unwrap(), !classify(&x, &swapped).unwrap());
    }
}
