mod common;

use aqplab_core::bench::{cells, run_cell, Matrix, Mode};
use aqplab_core::cardinality::SubsetEstimator;
use aqplab_core::driver::RunOptions;
use aqplab_core::optimizer::best_order;
use aqplab_core::optimizer::leaf_labels;
use aqplab_core::query::QueryShape;
use aqplab_core::sql::parse_query;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_mode_matches_nested_loops(seed in any::<u64>(), q in any::<u64>(), sizes in proptest::array::uniform4(1usize..60)) {
        let mut cat = common::random_db(seed, sizes);
        let sql = common::random_query(q);
        let shape = QueryShape::extract(&parse_query(&sql, &cat).unwrap(), &cat).unwrap();
        let expected = common::nested_loop(&shape, &cat);
        let fixed = aqplab_core::bench::recorded_order(&mut cat, &sql).unwrap();
        for cell in cells(&Mode::ALL, Matrix::Full) {
            let (out, _) = run_cell(&mut cat, &sql, &cell, Some(&fixed), &RunOptions::default()).unwrap();
            prop_assert_eq!(out.result.sorted_rows(), expected.clone(), "{} on {}", cell.label(), sql);
        }
    }

    #[test]
    fn dp_matches_exhaustive(seed in any::<u64>(), q in any::<u64>(), sizes in proptest::array::uniform4(1usize..500)) {
        let cat = common::random_db(seed, sizes);
        let sql = common::random_query(q);
        let shape = QueryShape::extract(&parse_query(&sql, &cat).unwrap(), &cat).unwrap();
        let est = SubsetEstimator::new(&shape, &cat).unwrap();
        let dp = best_order(&est, &leaf_labels(&shape)).cost;
        let ex = common::exhaustive_min_cout(&est);
        prop_assert!((dp - ex).abs() <= 1e-9 * ex.max(1.0), "dp {} exhaustive {}", dp, ex);
    }

    #[test]
    fn analyze_matches_sort_dedup(seed in any::<u64>(), sizes in proptest::array::uniform4(1usize..300)) {
        let cat = common::random_db(seed, sizes);
        for t in cat.tables() {
            let stats = t.stats.as_ref().unwrap();
            for (c, s) in t.columns.iter().zip(&stats.columns) {
                prop_assert_eq!(s.distinct_count, common::sort_dedup_distinct(c));
            }
        }
    }
}
