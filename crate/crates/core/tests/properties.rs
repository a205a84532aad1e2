use proptest::prelude::*;

use zoomrds::contraction::{check_axioms, ZoomingContraction};
use zoomrds::equilibrium::{build_ulam, cocycle_pressure};
use zoomrds::measures::{birkhoff_integral, entropy_estimate, MeasureCandidate};
use zoomrds::potentials::Potential;
use zoomrds::pressure::{pressure_estimate, separated_pressure, GridSettings};
use zoomrds::system::{iterate, BaseProcess, FiberMap, FiberRule, Phase, RandomSystem, Realization};
use zoomrds::zooming::{detect_times, verify_time, ZoomingConfig, RATIO_SLACK};

fn doubling_tripling() -> RandomSystem {
    RandomSystem::new(
        BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
        vec![FiberMap::doubling(), FiberMap::linear(3)],
        Phase::Circle,
    )
    .unwrap()
}

fn logistic() -> RandomSystem {
    let map = FiberMap::new(FiberRule::Quadratic { a: 2.0, coupling: 0.0, shift: 0.0 }).unwrap();
    RandomSystem::deterministic(map, Phase::Interval).unwrap()
}

fn word_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..2, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterate_composes_over_concatenated_words(x0 in 0.0f64..1.0, u in word_strategy(1..20), v in word_strategy(1..20)) {
        let sys = doubling_tripling();
        let uv: Vec<usize> = u.iter().chain(&v).copied().collect();
        let whole = iterate(&sys, x0, &uv, None).unwrap();
        let first = iterate(&sys, x0, &u, None).unwrap();
        let second = iterate(&sys, *first.points.last().unwrap(), &v, None).unwrap();
        prop_assert_eq!(&whole.points[..=u.len()], &first.points[..]);
        prop_assert_eq!(&whole.points[u.len()..], &second.points[..]);
    }

    #[test]
    fn words_are_deterministic_in_seed(seed in any::<u64>(), index in 0u64..1000, n in 1usize..64) {
        let base = BaseProcess::iid(vec![0.3, 0.7]).unwrap();
        prop_assert_eq!(base.word(n, seed, index), base.word(n, seed, index));
        let longer = base.word(n + 5, seed, index);
        prop_assert_eq!(&longer[..n], &base.word(n, seed, index)[..]);
    }

    #[test]
    fn birkhoff_integral_is_linear_and_monotone(
        point in 0.0f64..1.0,
        center in 0.0f64..1.0,
        h1 in 0.0f64..3.0,
        dh in 0.0f64..3.0,
        c in -2.0f64..2.0,
    ) {
        let sys = doubling_tripling();
        let m = MeasureCandidate::empirical(&sys, iterate(&sys, point, &sys.base.word(300, 9, 0), None).unwrap(), 10, 32).unwrap();
        let low = Potential::Bump { center, radius: 0.2, height: h1, scale: 1.0 };
        let high = Potential::Bump { center, radius: 0.2, height: h1 + dh, scale: 1.0 };
        let il = birkhoff_integral(&m, &low, sys.phase);
        let ih = birkhoff_integral(&m, &high, sys.phase);
        prop_assert!(il <= ih + 1e-12);
        let sum = Potential::Sum { terms: vec![low.clone(), Potential::Coordinate] };
        let is = birkhoff_integral(&m, &sum, sys.phase);
        prop_assert!((is - il - birkhoff_integral(&m, &Potential::Coordinate, sys.phase)).abs() < 1e-12);
        let shifted = birkhoff_integral(&m, &low.shifted(c), sys.phase);
        prop_assert!((shifted - il - c).abs() < 1e-12);
    }

    #[test]
    fn separated_sum_shifts_by_n_c(word in word_strategy(6..7), c in -1.0f64..1.0) {
        let sys = doubling_tripling();
        let (n, eps) = (6, 0.125);
        let (grid, _) = GridSettings::default().grid_for(&sys, &word, n, eps);
        let base = separated_pressure(&sys, &Potential::Coordinate, n, eps, &word, grid).unwrap();
        let shifted = separated_pressure(&sys, &Potential::Coordinate.shifted(c), n, eps, &word, grid).unwrap();
        prop_assert!((shifted - base - n as f64 * c).abs() < 1e-9, "{} vs {}", shifted - base, n as f64 * c);
    }

    #[test]
    fn relabeling_symbols_changes_nothing(x0 in 0.0f64..1.0, word in word_strategy(4..9)) {
        let sys = doubling_tripling();
        let swapped = RandomSystem::new(
            BaseProcess::iid(vec![0.5, 0.5]).unwrap(),
            vec![FiberMap::linear(3), FiberMap::doubling()],
            Phase::Circle,
        )
        .unwrap();
        let relabeled: Vec<usize> = word.iter().map(|s| 1 - s).collect();
        prop_assert_eq!(iterate(&sys, x0, &word, None).unwrap().points, iterate(&swapped, x0, &relabeled, None).unwrap().points);
        let n = word.len();
        let (grid, _) = GridSettings::default().grid_for(&sys, &word, n, 0.125);
        let a = separated_pressure(&sys, &Potential::Coordinate, n, 0.125, &word, grid).unwrap();
        let b = separated_pressure(&swapped, &Potential::Coordinate, n, 0.125, &relabeled, grid).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn verified_times_respect_ratio_slack(x0 in 0.0f64..1.0, delta in 0.01f64..0.2) {
        let sys = logistic();
        let cfg = ZoomingConfig::new(ZoomingContraction::exponential(std::f64::consts::LN_2, 1000), delta, 16);
        let orbit = iterate(&sys, x0, &[0; 60], None).unwrap();
        for j in 1..=orbit.len() {
            let v = verify_time(&sys, &orbit, j, &cfg).unwrap();
            if v.pass {
                prop_assert!(v.worst_ratio <= 1.0 + RATIO_SLACK);
            }
        }
        let rep = detect_times(&sys, &orbit, &cfg).unwrap();
        prop_assert!(rep.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(rep.frequency >= 0.0 && rep.frequency <= 1.0);
    }

    #[test]
    fn refined_entropy_bounded_by_cell_count(x0 in 0.0f64..1.0, cells in 4usize..40) {
        let sys = doubling_tripling();
        let orbit = iterate(&sys, x0, &sys.base.word(400, 2, 0), None).unwrap();
        let m = MeasureCandidate::empirical(&sys, orbit, 20, cells).unwrap();
        let est = entropy_estimate(&m, &sys, cells, 4, 2, 1).unwrap();
        prop_assert!(est.table[0].entropy <= (cells as f64).ln() + 1e-12);
        for row in &est.table {
            prop_assert!(row.entropy <= row.mean_log_cells + 1e-9);
            prop_assert!(row.entropy >= -1e-12);
        }
    }

    #[test]
    fn exponential_contractions_satisfy_axioms(rate in 0.01f64..3.0, seed in any::<u64>()) {
        // the truncated tail over [N/2, N] is about e^{-rate N/2}/rate
        let horizon = ((2.0 * (100.0 / rate).ln() / rate).ceil() as usize + 2).max(200);
        prop_assert!(check_axioms(&ZoomingContraction::exponential(rate, horizon), 200, seed).unwrap().all_passed());
        if horizon > 400 {
            let short = check_axioms(&ZoomingContraction::exponential(rate, 200), 200, seed).unwrap();
            prop_assert!(!short.summability.passed);
        }
    }

    #[test]
    fn phase_distance_is_a_metric(x in -2.0f64..3.0, y in -2.0f64..3.0, z in -2.0f64..3.0) {
        let p = Phase::Circle;
        let (dxy, dyz, dxz) = (p.distance(x, y), p.distance(y, z), p.distance(x, z));
        prop_assert!((dxy - p.distance(y, x)).abs() < 1e-15);
        prop_assert!(dxy <= p.diameter() + 1e-15);
        prop_assert!(dxz <= dxy + dyz + 1e-12);
    }
}

#[test]
fn ulam_transition_rows_are_stochastic() {
    for sys in [doubling_tripling(), logistic()] {
        let model = build_ulam(&sys, 50).unwrap();
        for a in &model.transition {
            for i in 0..model.cells {
                assert!((a.row_sum(i) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn smaller_delta_keeps_every_chain_time() {
    // shrinking delta can only make the zooming condition easier to meet
    let sys = logistic();
    for x0 in [0.013, 0.2718, 0.4142, 0.77, 0.9] {
        let orbit = iterate(&sys, x0, &[0; 150], None).unwrap();
        let c = ZoomingContraction::exponential(std::f64::consts::LN_2, 1000);
        let mut wide = ZoomingConfig::new(c, 0.1, 16);
        let mut narrow = ZoomingConfig::new(c, 0.01, 16);
        wide.confirm = false;
        narrow.confirm = false;
        let w = detect_times(&sys, &orbit, &wide).unwrap().times;
        let n = detect_times(&sys, &orbit, &narrow).unwrap().times;
        assert!(w.iter().all(|t| n.contains(t)), "x0={x0}: {w:?} not within {n:?}");
    }
}

#[test]
fn seeded_estimates_repeat_exactly() {
    let sys = doubling_tripling();
    let g = GridSettings::default();
    let a = pressure_estimate(&sys, &Potential::Coordinate, &[0.125], &[2, 5], 6, 17, &g).unwrap();
    let b = pressure_estimate(&sys, &Potential::Coordinate, &[0.125], &[2, 5], 6, 17, &g).unwrap();
    assert_eq!(a, b);
    let model = build_ulam(&sys, 32).unwrap();
    let c1 = cocycle_pressure(&model, &Potential::Coordinate, 5, 50, 4, 10).unwrap();
    let c2 = cocycle_pressure(&model, &Potential::Coordinate, 5, 50, 4, 10).unwrap();
    assert_eq!(c1, c2);
    let word = BaseProcess::new(vec![0.5, 0.5], Realization::Word { symbols: vec![0, 1] }).unwrap().word(5, 1, 2);
    assert_eq!(word, vec![0, 1, 0, 1, 0]);
}
