//! Property-based checks against brute-force oracles and invariants.

use macropca::detmcd::detmcd;
use macropca::diagnostics::{aggregate_cells, classify_residual, quadrant, CellCategory, MapCell, Quadrant};
use macropca::matrix::{read_csv_from, write_csv_to};
use macropca::univariate::unimcd;
use macropca::{CsvOptions, IncompleteMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn subsets(n: usize, h: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == h)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn brute_unimcd(x: &[f64], h: usize) -> Vec<usize> {
    let var = |s: &Vec<usize>| {
        let m = s.iter().map(|&i| x[i]).sum::<f64>() / h as f64;
        s.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>()
    };
    subsets(x.len(), h).into_iter().min_by(|a, b| var(a).total_cmp(&var(b))).unwrap()
}

fn brute_mcd(t: &DMatrix<f64>, h: usize) -> Vec<usize> {
    let det = |s: &Vec<usize>| {
        let rows = DMatrix::from_fn(h, t.ncols(), |r, c| t[(s[r], c)]);
        let mean = rows.row_mean();
        let centered = DMatrix::from_fn(h, t.ncols(), |r, c| rows[(r, c)] - mean[c]);
        (centered.transpose() * centered).determinant()
    };
    subsets(t.nrows(), h).into_iter().min_by(|a, b| det(a).total_cmp(&det(b))).unwrap()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn small_sample() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (3usize..=12).prop_flat_map(|n| (prop::collection::vec(-50.0f64..50.0, n), (n / 2 + 1)..=n))
}

fn bivariate() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (6usize..=10).prop_flat_map(|n| {
        (prop::collection::vec(-10.0f64..10.0, 2 * n), (n + 3).div_ceil(2)..=n)
            .prop_map(move |(v, h)| (DMatrix::from_row_slice(n, 2, &v), h))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unimcd_matches_enumeration((x, h) in small_sample()) {
        let got = sorted(unimcd(&x, h).unwrap().subset);
        prop_assert_eq!(got, brute_unimcd(&x, h));
    }

    #[test]
    fn detmcd_small_matches_enumeration((t, h) in bivariate()) {
        let est = detmcd(&t, h).unwrap();
        prop_assert_eq!(sorted(est.support.clone()), brute_mcd(&t, h));
    }

    #[test]
    fn detmcd_concentration_is_monotone(v in prop::collection::vec(-5.0f64..5.0, 90), h in 17usize..=30) {
        let t = DMatrix::from_row_slice(30, 3, &v);
        let est = detmcd(&t, h).unwrap();
        for s in &est.starts {
            prop_assert!(s.log_det_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{}", s.name);
        }
    }

    #[test]
    fn detmcd_affine_equivariant_on_small_instances(
        (t, h) in bivariate(),
        a in prop::collection::vec(-2.0f64..2.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        prop_assume!(a.determinant().abs() > 0.1);
        let b = DVector::from_vec(b);
        let moved = DMatrix::from_fn(t.nrows(), 2, |i, c| (a.row(c) * t.row(i).transpose())[0] + b[c]);
        let e0 = detmcd(&t, h).unwrap();
        let e1 = detmcd(&moved, h).unwrap();
        prop_assert_eq!(sorted(e0.support.clone()), sorted(e1.support.clone()));
        let center = &a * &e0.center + &b;
        let scatter = &a * &e0.scatter * a.transpose();
        let scale = scatter.abs().max().max(1.0);
        prop_assert!((center - &e1.center).abs().max() < 1e-8 * scale);
        prop_assert!((scatter - &e1.scatter).abs().max() < 1e-8 * scale);
    }

    #[test]
    fn csv_round_trip_keeps_mask_and_15_digits(cells in prop::collection::vec(prop::option::of(-1e6f64..1e6), 12)) {
        let rows: Vec<Vec<Option<f64>>> = cells.chunks(3).map(|c| c.to_vec()).collect();
        let m = IncompleteMatrix::from_rows(&rows).unwrap()
            .with_col_names(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&m, &mut buf, "NA").unwrap();
        let back = read_csv_from(buf.as_slice(), &CsvOptions::default()).unwrap();
        prop_assert_eq!(back.mask(), m.mask());
        prop_assert_eq!(back.col_names(), m.col_names());
        for (a, b) in back.values().iter().zip(m.values()).filter(|(a, _)| a.is_finite()) {
            prop_assert!((a - b).abs() <= 1e-14 * b.abs(), "{} vs {}", a, b);
        }
    }

    #[test]
    fn quadrants_are_exhaustive(sd in 0.0f64..10.0, od in 0.0f64..10.0, c_sd in 0.1f64..5.0, c_od in 0.1f64..5.0) {
        let q = quadrant(sd, od, c_sd, c_od);
        let expected = match (sd <= c_sd, od <= c_od) {
            (true, true) => Quadrant::Regular,
            (false, true) => Quadrant::GoodLeverage,
            (true, false) => Quadrant::Orthogonal,
            (false, false) => Quadrant::BadLeverage,
        };
        prop_assert_eq!(q, expected);
    }

    #[test]
    fn block_aggregation_ignores_cell_order(
        rs in prop::collection::vec(prop::option::of(-12.0f64..12.0), 1..30),
        seed in any::<u64>(),
    ) {
        let cells: Vec<MapCell> = rs.iter().map(|r| classify_residual(*r, 2.5758, 8.0)).collect();
        let mut shuffled = cells.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = aggregate_cells(&cells);
        prop_assert_eq!(a, aggregate_cells(&shuffled));
        if cells.iter().any(|c| matches!(c.category, CellCategory::PosOutlier | CellCategory::NegOutlier)) {
            prop_assert!(a.intensity > 0.0 && a.intensity <= 1.0);
        }
    }
}
