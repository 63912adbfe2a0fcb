mod oracles;

use codi_core::contrastive::{
    make_negative_condition_with, triplet_loss, Distance, NegativeMethod,
};
use codi_core::data::{
    decode_batch, encode, Cell, ColumnKind, ColumnSchema, Table, TableSchema, Task,
};
use codi_core::diffusion::discrete::{sample_cat, CategoricalState};
use codi_core::eval::{coverage_points, tv_distance, CoverageDirection};
use codi_core::Tensor2;
use oracles::{brute_force_coverage, random_points};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor2::new(rows, cols, v).unwrap())
}

fn sorted_rows(t: &Tensor2) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

fn mixed_schema() -> TableSchema {
    TableSchema::new(
        vec![
            ColumnSchema {
                name: "a".into(),
                kind: ColumnKind::Continuous {
                    min: -2.0,
                    max: 5.0,
                },
            },
            ColumnSchema {
                name: "b".into(),
                kind: ColumnKind::Discrete {
                    categories: vec!["p".into(), "q".into(), "r".into()],
                },
            },
            ColumnSchema {
                name: "c".into(),
                kind: ColumnKind::Continuous { min: 0.0, max: 1.0 },
            },
            ColumnSchema {
                name: "d".into(),
                kind: ColumnKind::Discrete {
                    categories: vec!["no".into(), "yes".into()],
                },
            },
        ],
        None,
        Task::None,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn triplet_loss_is_nonnegative(
        (a, p, n) in (1usize..6, 1usize..4).prop_flat_map(|(r, c)| (tensor(r, c), tensor(r, c), tensor(r, c))),
        margin in 0.0f64..3.0,
    ) {
        prop_assert!(triplet_loss(&a, &p, &n, &Distance::Euclidean, margin).unwrap() >= 0.0);
    }

    #[test]
    fn cross_entropy_triplet_is_nonnegative(rows in 1usize..6, seed in any::<u64>(), margin in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = vec![3, 2];
        let anchor = sample_cat(&CategoricalState::uniform(sizes.clone(), rows).unwrap(), &mut rng);
        let p = oracles::randn(rows, 5, &mut rng);
        let n = oracles::randn(rows, 5, &mut rng);
        let l = triplet_loss(anchor.probs(), &p, &n, &Distance::CrossEntropy(sizes), margin).unwrap();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn negatives_preserve_row_multisets(rows in 2usize..20, seed in any::<u64>(), m in 0usize..3) {
        let method = [NegativeMethod::Method1, NegativeMethod::Method2, NegativeMethod::Method3][m];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = oracles::randn(rows, 3, &mut rng);
        let d = sample_cat(&CategoricalState::uniform(vec![2, 4], rows).unwrap(), &mut rng);
        let neg = make_negative_condition_with(method, &c, &d, &mut rng).unwrap();
        for p in [&neg.permutation_c, &neg.permutation_d] {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..rows).collect::<Vec<_>>());
        }
        if method == NegativeMethod::Method3 {
            prop_assert_eq!(sorted_rows(&neg.neg_cond_c), sorted_rows(&c));
            prop_assert_eq!(sorted_rows(neg.neg_cond_d.probs()), sorted_rows(d.probs()));
        }
        // every column keeps its multiset of values under every method
        for (a, b) in [(&neg.neg_cond_c, &c), (neg.neg_cond_d.probs(), d.probs())] {
            for col in 0..a.cols() {
                let mut x: Vec<u64> = (0..rows).map(|r| a.get(r, col).to_bits()).collect();
                let mut y: Vec<u64> = (0..rows).map(|r| b.get(r, col).to_bits()).collect();
                x.sort_unstable();
                y.sort_unstable();
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn encode_decode_round_trip(
        rows in prop::collection::vec((-2.0f64..=5.0, 0usize..3, 0.0f64..=1.0, 0usize..2), 1..30)
    ) {
        let schema = mixed_schema();
        let cats = [["p", "q", "r"].as_slice(), ["no", "yes"].as_slice()];
        let table = Table {
            names: schema.names(),
            rows: rows
                .iter()
                .map(|&(a, b, c, d)| vec![Cell::Num(a), Cell::Cat(cats[0][b].into()), Cell::Num(c), Cell::Cat(cats[1][d].into())])
                .collect(),
        };
        let back = decode_batch(&encode(&table, &schema).unwrap(), &schema).unwrap();
        prop_assert_eq!(&back.names, &table.names);
        for (x, y) in back.rows.iter().zip(&table.rows) {
            for (u, v) in x.iter().zip(y) {
                match (u, v) {
                    (Cell::Num(u), Cell::Num(v)) => prop_assert!((u - v).abs() < 1e-9),
                    (u, v) => prop_assert_eq!(u, v),
                }
            }
        }
    }

    #[test]
    fn coverage_ignores_row_order(seed in any::<u64>(), k in 1usize..5, real_fake in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = random_points(20, 3, &mut rng);
        let fake = random_points(15, 3, &mut rng);
        let dir = if real_fake { CoverageDirection::RealNeighborhoods } else { CoverageDirection::FakeNeighborhoods };
        let base = coverage_points(&real, &fake, k, dir).unwrap();
        let mut pr: Vec<usize> = (0..20).collect();
        let mut pf: Vec<usize> = (0..15).collect();
        pr.shuffle(&mut rng);
        pf.shuffle(&mut rng);
        let shuffled = coverage_points(&real.select_rows(&pr), &fake.select_rows(&pf), k, dir).unwrap();
        prop_assert_eq!(base, shuffled);
    }

    #[test]
    fn coverage_matches_all_pairs(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = random_points(25, 2, &mut rng);
        let fake = random_points(10, 2, &mut rng);
        let got = coverage_points(&real, &fake, k, CoverageDirection::RealNeighborhoods).unwrap();
        prop_assert_eq!(got, brute_force_coverage(&real, &fake, k));
        let got = coverage_points(&real, &fake, k, CoverageDirection::FakeNeighborhoods).unwrap();
        prop_assert_eq!(got, brute_force_coverage(&fake, &real, k));
    }

    #[test]
    fn tv_distance_is_symmetric_and_bounded(
        (p, q) in (1usize..10).prop_flat_map(|n| (prop::collection::vec(0usize..50, n), prop::collection::vec(0usize..50, n)))
    ) {
        prop_assume!(p.iter().sum::<usize>() > 0 && q.iter().sum::<usize>() > 0);
        let d = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, tv_distance(&q, &p));
        prop_assert_eq!(tv_distance(&p, &p), 0.0);
    }
}

#[test]
fn coverage_of_identical_sets_is_one() {
    let real = random_points(50, 4, &mut ChaCha8Rng::seed_from_u64(9));
    for dir in [
        CoverageDirection::RealNeighborhoods,
        CoverageDirection::FakeNeighborhoods,
    ] {
        assert_eq!(coverage_points(&real, &real, 5, dir).unwrap(), 1.0);
    }
}

#[test]
fn coverage_of_a_distant_set_is_zero() {
    let real = random_points(50, 2, &mut ChaCha8Rng::seed_from_u64(10));
    let fake = real.map(|v| v + 100.0);
    assert_eq!(
        coverage_points(&real, &fake, 5, CoverageDirection::RealNeighborhoods).unwrap(),
        0.0
    );
}
