use proptest::prelude::*;
use stfm::decompose::{decompose, trend_decompose};
use stfm::diffengine::Matrix;
use stfm::embedding::{build_delayed_attractor, diagonal_loss, extract_forecast, DiagonalIndex};
use stfm::grid::{grid_to_raw, read_grid, sample_window, GridFormat, GridMeta, GridSeries, SamplingConfig, TimeOrigin};
use stfm::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig};
use stfm::training::Standardization;

fn matrix(rows: usize, cols: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(range, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c, -50.0..50.0))
}

fn grid_strategy() -> impl Strategy<Value = GridSeries> {
    (1usize..5, 1usize..4, 1usize..5)
        .prop_flat_map(|(t, h, w)| {
            let n = t * h * w;
            (
                Just((t, h, w)),
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, n),
                prop::collection::vec(prop::bool::weighted(0.2), n),
                any::<bool>(),
            )
        })
        .prop_map(|((t, h, w), values, missing, dated)| {
            let meta = GridMeta {
                start: if dated {
                    TimeOrigin::Date(chrono::NaiveDate::from_ymd_opt(2013, 10, 1).unwrap())
                } else {
                    TimeOrigin::Index(-3)
                },
                dt_days: 5.0,
                lat0: 10.125,
                lon0: 115.125,
                cell_deg: 0.25,
            };
            GridSeries::with_mask(t, h, w, values, Some(missing), meta).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn raw_grid_round_trip_is_bit_exact(grid in grid_strategy()) {
        let back = read_grid(&grid_to_raw(&grid), GridFormat::Raw).unwrap();
        prop_assert_eq!(back.meta(), grid.meta());
        prop_assert_eq!((back.t_len(), back.rows(), back.cols()), (grid.t_len(), grid.rows(), grid.cols()));
        for t in 0..grid.t_len() {
            for r in 0..grid.rows() {
                for c in 0..grid.cols() {
                    prop_assert_eq!(back.is_missing(t, r, c), grid.is_missing(t, r, c));
                    if !grid.is_missing(t, r, c) {
                        prop_assert_eq!(back.get(t, r, c).to_bits(), grid.get(t, r, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn window_matches_brute_force_indexing(
        (t_len, rows, cols) in (8usize..16, 3usize..7, 3usize..7),
        hr in 0usize..2, hc in 0usize..2, m in 2usize..5, l in 2usize..4, stride in 1usize..3, seed in any::<u64>(),
    ) {
        let values: Vec<f64> = (0..t_len * rows * cols)
            .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0)
            .collect();
        let grid = GridSeries::new(t_len, rows, cols, values, GridMeta::default()).unwrap();
        let cfg = SamplingConfig {
            center_row: rows / 2,
            center_col: cols / 2,
            half_rows: hr,
            half_cols: hc,
            m,
            l,
            stride,
            t_start: 1,
        };
        prop_assume!(cfg.validate(&grid).is_ok());
        let w = sample_window(&grid, &cfg).unwrap();
        let o = w.attractor.data();
        prop_assert_eq!(o.shape(), (m, cfg.variables()));
        for s in 0..m {
            let t = 1 + s * stride;
            let mut v = 0;
            for r in rows / 2 - hr..=rows / 2 + hr {
                for c in cols / 2 - hc..=cols / 2 + hc {
                    prop_assert_eq!(o.get(s, v), grid.get(t, r, c));
                    v += 1;
                }
            }
        }
        for (s, &y) in w.labels.iter().enumerate() {
            prop_assert_eq!(y, grid.get(1 + s * stride, rows / 2, cols / 2));
        }
        prop_assert_eq!(o.get(m - 1, w.k_index), w.labels[m - 1]);
    }

    #[test]
    fn trend_is_shift_equivariant(x in sized_matrix(4, 20), c in -100.0f64..100.0, size in 1usize..9) {
        let t = trend_decompose(&x, size).unwrap();
        let ts = trend_decompose(&x.map(|v| v + c), size).unwrap();
        for (a, b) in t.data().iter().zip(ts.data()) {
            prop_assert!((a + c - b).abs() <= 1e-9 * (1.0 + c.abs() + a.abs()));
        }
    }

    #[test]
    fn season_is_shift_invariant(x in sized_matrix(4, 20), c in -100.0f64..100.0, size in 1usize..9) {
        let s = decompose(&x, size).unwrap().season;
        let ss = decompose(&x.map(|v| v + c), size).unwrap().season;
        for (a, b) in s.data().iter().zip(ss.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn decomposition_recomposes_bitwise_on_same_sign_band(
        x in (1usize..5, 1usize..25, -3i32..=3).prop_flat_map(|(r, c, e)| {
            let lo = 10f64.powi(e);
            matrix(r, c, lo..2.0 * lo)
        }),
        size in 1usize..10,
    ) {
        let parts = decompose(&x, size).unwrap();
        prop_assert_eq!(parts.trend.add(&parts.season).unwrap(), x);
    }

    #[test]
    fn diagonal_loss_is_nonnegative_and_shift_invariant(x in sized_matrix(8, 12), c in -1e3f64..1e3) {
        let v = diagonal_loss(&x);
        prop_assert!(v >= 0.0);
        prop_assert!((v - diagonal_loss(&x.map(|a| a + c))).abs() <= 1e-12 * (1.0 + v));
    }

    #[test]
    fn series_built_attractor_is_consistent(
        (m, l, series) in (1usize..30, 2usize..12).prop_flat_map(|(m, l)| {
            (Just(m), Just(l), prop::collection::vec(-1e4f64..1e4, m + l - 1..m + l + 20))
        }),
    ) {
        let d = build_delayed_attractor(&series, m, l).unwrap();
        prop_assert_eq!(diagonal_loss(d.data()), 0.0);
        let forecast = extract_forecast(d.data(), m, l).unwrap();
        prop_assert_eq!(&forecast[..], &series[m..m + l - 1]);
    }

    #[test]
    fn anti_diagonal_groups_partition_cells(m in 1usize..20, l in 1usize..20) {
        let index = DiagonalIndex::new(m, l);
        let mut seen = vec![0u8; m * l];
        for (t, group) in index.groups().iter().enumerate() {
            for &cell in group {
                prop_assert_eq!(cell / m + cell % m, t);
                seen[cell] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let known_cells: usize = index.groups()[..index.known_count()].iter().map(Vec::len).sum();
        prop_assert_eq!(index.known_mask().iter().filter(|&&k| k).count(), known_cells);
        prop_assert_eq!(index.known_count(), m.min(m + l - 1));
    }

    #[test]
    fn standardization_round_trips(x in (2usize..20, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c, -30.0..30.0))) {
        let s = Standardization::fit(&x).unwrap();
        for j in 0..x.cols() {
            for i in 0..x.rows() {
                let v = x.get(i, j);
                prop_assert!((s.invert(j, s.apply(j, v)) - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(n in 1usize..5, m in 2usize..8, l in 2usize..5, half in 1usize..5, seed in any::<u64>()) {
        let cfg = ModelConfig { hidden: 2 * half, ..ModelConfig::new(n, m, l) };
        let params = init_params(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &params, &serde_json::json!({"seed": seed})).unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back, params);
        prop_assert_eq!(meta["seed"].as_u64(), Some(seed));
    }
}
