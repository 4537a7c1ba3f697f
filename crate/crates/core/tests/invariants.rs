//! Property tests for measure, metric and serialization invariants.

use cmvsde::grid::{SamplePath, TimeGrid};
use cmvsde::io::{measure_path_jsonl, parse_measure_file, MeasureFile};
use cmvsde::measures::{
    atom_breakpoint_family, exact_w1, kr_dual_w1, lattice_family, DiscreteMeasure, MeasurePath,
};
use cmvsde::oracles::cdf_integral_w1;
use proptest::prelude::*;

fn measure() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((-50.0f64..50.0, 0.0f64..10.0), 1..40).prop_filter_map(
        "needs positive mass",
        |pairs| {
            let (a, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            DiscreteMeasure::normalize(a, w).ok()
        },
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(mu in measure()) {
        let total: f64 = mu.weights().iter().sum();
        prop_assert!(close(total, 1.0, 1e-12));
        prop_assert!(mu.atoms().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(mu.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn normalize_is_idempotent(mu in measure()) {
        let again = DiscreteMeasure::normalize(mu.atoms().to_vec(), mu.weights().to_vec()).unwrap();
        prop_assert_eq!(again, mu);
    }

    #[test]
    fn w1_is_a_metric(mu in measure(), nu in measure(), rho in measure()) {
        let d = exact_w1(&mu, &nu);
        prop_assert_eq!(exact_w1(&mu, &mu), 0.0);
        prop_assert!(d >= 0.0);
        prop_assert!(close(d, exact_w1(&nu, &mu), 1e-12));
        prop_assert!(d <= exact_w1(&mu, &rho) + exact_w1(&rho, &nu) + 1e-9);
    }

    #[test]
    fn mean_is_one_lipschitz(mu in measure(), nu in measure()) {
        prop_assert!((mu.mean() - nu.mean()).abs() <= exact_w1(&mu, &nu) + 1e-9);
    }

    #[test]
    fn dual_families_bound_from_below(mu in measure(), nu in measure()) {
        let d = exact_w1(&mu, &nu);
        let lattice = lattice_family(-60.0, 60.0, 25).unwrap();
        prop_assert!(kr_dual_w1(&mu, &nu, &lattice).unwrap() <= d + 1e-9);
        let tight = kr_dual_w1(&mu, &nu, &atom_breakpoint_family(&mu, &nu)).unwrap();
        prop_assert!(close(tight, d, 1e-9));
    }

    #[test]
    fn cdf_quadrature_agrees(mu in measure(), nu in measure()) {
        let lo = mu.atoms()[0].min(nu.atoms()[0]);
        let hi = mu.atoms().last().unwrap().max(*nu.atoms().last().unwrap());
        let err = (cdf_integral_w1(&mu, &nu, 20_000) - exact_w1(&mu, &nu)).abs();
        prop_assert!(err <= (hi - lo) / 20_000.0 + 1e-9);
    }

    #[test]
    fn translation_moves_w1_by_shift(mu in measure(), c in -10.0f64..10.0) {
        let shifted = DiscreteMeasure::normalize(
            mu.atoms().iter().map(|a| a + c).collect(),
            mu.weights().to_vec(),
        ).unwrap();
        prop_assert!(close(exact_w1(&mu, &shifted), c.abs(), 1e-9));
    }

    #[test]
    fn measure_files_round_trip_bit_exact(
        measures in prop::collection::vec(
            prop::collection::vec((any::<f64>().prop_filter("finite", |x| x.is_finite()), 1e-6f64..1.0), 1..20),
            3,
        )
    ) {
        let ms: Vec<_> = measures
            .into_iter()
            .map(|p| {
                let (a, w): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
                DiscreteMeasure::normalize(a, w).unwrap()
            })
            .collect();
        let path = MeasurePath::new(TimeGrid::new(1.0, 2).unwrap(), ms).unwrap();
        match parse_measure_file(&measure_path_jsonl(&path, None).unwrap()).unwrap() {
            MeasureFile::Path(p) => {
                for (a, b) in p.measures().iter().zip(path.measures()) {
                    prop_assert_eq!(a, b);
                }
            }
            MeasureFile::Measure(_) => prop_assert!(false, "expected a path"),
        }
    }

    #[test]
    fn increments_round_trip(start in -5.0f64..5.0, inc in prop::collection::vec(-1.0f64..1.0, 1..50)) {
        let grid = TimeGrid::new(1.0, inc.len()).unwrap();
        let path = SamplePath::from_increments(grid, start, &inc).unwrap();
        prop_assert_eq!(path.value(0), start);
        for (k, d) in inc.iter().enumerate() {
            prop_assert!(close(path.increment(k), *d, 1e-9));
        }
    }

    #[test]
    fn running_sup_is_monotone(inc in prop::collection::vec(-1.0f64..1.0, 1..50)) {
        let grid = TimeGrid::new(1.0, inc.len()).unwrap();
        let sup = SamplePath::from_increments(grid, 0.0, &inc).unwrap().running_sup_path();
        prop_assert!(sup.values().windows(2).all(|w| w[0] <= w[1]));
    }
}
