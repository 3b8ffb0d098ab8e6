use proptest::prelude::*;

use copytrace::coord_table::{deserialize_table, serialize_table};
use copytrace::loss_kernel::{affinity, affinity_entropy, copynce_symmetric};
use copytrace::retrieval_eval::{evaluate, rank_order};
use copytrace::supervision::{read_targets, sharpen, write_targets};
use copytrace::tokens::{deserialize_tokens, serialize_tokens};
use copytrace::{Coord, CoordTable, GroundTruth, Matrix, ScoredPair, TargetDistribution, TokenMatrix};

fn table() -> impl Strategy<Value = CoordTable> {
    (1usize..8, 1usize..8, 1usize..8, 1usize..8).prop_flat_map(|(h, w, sh, sw)| {
        prop::collection::vec(prop::option::weighted(0.7, (0..sh as u32, 0..sw as u32)), h * w).prop_map(move |m| {
            let mapping = m.into_iter().map(|o| o.map(|(r, c)| Coord::new(r, c))).collect();
            CoordTable::from_mapping((h, w), (sh, sw), mapping).unwrap()
        })
    })
}

fn tokens(rows: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = TokenMatrix> {
    rows.prop_flat_map(move |n| {
        prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |r| r.iter().any(|x| x.abs() > 1e-3)),
            n,
        )
        .prop_map(|rows| Matrix::from_rows(&rows).unwrap())
    })
}

fn identity_targets(n: usize) -> TargetDistribution {
    TargetDistribution {
        matrix: Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }),
        row_mask: vec![true; n],
        gamma: Some(1.0),
    }
}

proptest! {
    #[test]
    fn table_bytes_round_trip(t in table()) {
        prop_assert_eq!(deserialize_table(&serialize_table(&t)).unwrap(), t);
    }

    #[test]
    fn reversed_entries_point_back(t in table()) {
        let rev = t.reverse(t.source_dims()).unwrap();
        for (v, k) in rev.iter_present() {
            prop_assert_eq!(t.get(k), Some(v));
        }
        let distinct: std::collections::BTreeSet<Coord> = t.iter_present().map(|(_, v)| v).collect();
        prop_assert_eq!(rev.tracked_count(), distinct.len());
    }

    #[test]
    fn compose_with_identity_is_neutral(t in table()) {
        let (sh, sw) = t.source_dims();
        let (h, w) = t.dims();
        let left = CoordTable::compose(&CoordTable::identity(sh, sw).unwrap(), &t).unwrap();
        let right = CoordTable::compose(&t, &CoordTable::identity(h, w).unwrap()).unwrap();
        prop_assert_eq!(&left, &t);
        prop_assert_eq!(&right, &t);
    }

    #[test]
    fn token_bytes_round_trip_at_f32(t in tokens(1..6, 5)) {
        let back = deserialize_tokens(&serialize_tokens(&t)).unwrap();
        for i in 0..t.rows() {
            for j in 0..t.cols() {
                prop_assert_eq!(back[(i, j)], t[(i, j)] as f32 as f64);
            }
        }
    }

    #[test]
    fn affinity_rows_are_distributions(q in tokens(1..6, 4), r in tokens(1..9, 4), tau in 0.02f64..2.0) {
        let p = affinity(&q, &r, tau).unwrap();
        let h = affinity_entropy(&q, &r, tau).unwrap();
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(h[i] >= -1e-12 && h[i] <= (r.rows() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn symmetric_copynce_is_symmetric(q in tokens(2..6, 4), tau in 0.05f64..1.0) {
        let r = Matrix::from_fn(q.rows(), q.cols(), |i, j| q[(q.rows() - 1 - i, j)] + 0.1);
        let t = identity_targets(q.rows());
        let a = copynce_symmetric(&q, &r, &t, &t, tau).unwrap().loss.value;
        let b = copynce_symmetric(&r, &q, &t, &t, tau).unwrap().loss.value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sharpening_keeps_support_and_argmax(
        row in prop::collection::vec(prop::option::weighted(0.6, 1u32..64), 2..12),
        gamma in 0.05f64..6.0,
    ) {
        prop_assume!(row.iter().any(Option::is_some));
        let vals: Vec<f64> = row.iter().map(|o| o.map_or(0.0, |v| v as f64 / 64.0)).collect();
        let m = Matrix::from_vec(1, vals.len(), vals.clone()).unwrap();
        let t = sharpen(&m, gamma, &[true]).unwrap();
        let out = t.matrix.row(0);
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (a, b) in vals.iter().zip(out) {
            prop_assert_eq!(*a > 0.0, *b > 0.0);
        }
        let best = vals.iter().cloned().fold(0.0, f64::max);
        for (j, &v) in vals.iter().enumerate() {
            if v == best {
                prop_assert!(out.iter().all(|&x| x <= out[j] + 1e-15));
            }
        }
    }

    #[test]
    fn targets_round_trip(row in prop::collection::vec(0u32..5, 1..8), masked in any::<bool>()) {
        prop_assume!(row.iter().any(|&v| v > 0));
        let m = Matrix::from_vec(1, row.len(), row.iter().map(|&v| v as f64).collect()).unwrap();
        let t = sharpen(&m, 1.0, &[!masked]).unwrap();
        let mut buf = Vec::new();
        write_targets(&t, &mut buf).unwrap();
        let back = read_targets(buf.as_slice()).unwrap();
        prop_assert_eq!(back.row_mask, t.row_mask);
        for (a, b) in back.matrix.row(0).iter().zip(t.matrix.row(0)) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
        let sum: f64 = back.matrix.row(0).iter().sum();
        let ok = if masked { sum == 0.0 } else { (sum - 1.0).abs() <= 1e-12 };
        prop_assert!(ok);
    }

    #[test]
    fn metrics_are_bounded_and_rank_invariant(
        scored in prop::collection::vec((0usize..6, 0usize..10, 0.0f64..1.0, any::<bool>()), 1..60),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let mut gt = GroundTruth::new();
        let mut pairs: Vec<ScoredPair> = Vec::new();
        for (q, r, s, rel) in scored {
            let (q, r) = (format!("q{q}"), format!("r{r}"));
            if pairs.iter().any(|p| p.query_id == q && p.ref_id == r) {
                continue;
            }
            if rel {
                gt.insert(q.clone(), r.clone());
            }
            pairs.push(ScoredPair::new(q, r, s, rel));
        }
        prop_assume!(!gt.is_empty());
        let m = evaluate(&pairs, &gt).unwrap();
        for v in [m.uap, m.map, m.rp90] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let moved: Vec<ScoredPair> = pairs
            .iter()
            .map(|p| ScoredPair::new(p.query_id.clone(), p.ref_id.clone(), p.score * scale + shift, p.relevant))
            .collect();
        let mut a = pairs.clone();
        let mut b = moved.clone();
        a.sort_by(rank_order);
        b.sort_by(rank_order);
        prop_assume!(a.iter().zip(&b).all(|(x, y)| x.query_id == y.query_id && x.ref_id == y.ref_id));
        let m2 = evaluate(&moved, &gt).unwrap();
        prop_assert!((m.uap - m2.uap).abs() <= 1e-12);
        prop_assert!((m.map - m2.map).abs() <= 1e-12);
        prop_assert!((m.rp90 - m2.rp90).abs() <= 1e-12);
    }
}
