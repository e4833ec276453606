mod common;

use adsr_core::datasets::ItemAttributeTable;
use adsr_core::diversifier::*;
use adsr_core::AdsrError;
use common::oracles;
use proptest::prelude::*;

fn toy() -> (Vec<f64>, ItemAttributeTable) {
    // v1 and v2 carry c1, v3 carries c2
    let table = ItemAttributeTable::new(2, vec![vec![0], vec![0], vec![1]]).unwrap();
    (vec![0.5, 0.3, 0.2], table)
}

#[test]
fn toy_literal_picks_v1_then_v2() {
    let (rel, table) = toy();
    let list = add_rerank(&rel, &[0.6, 0.4], &table, 0.5, 2, AddMode::Literal, 3).unwrap();
    assert_eq!(list.items(), vec![0, 1]);

    // first step: S_div(v1) = U(c2) = 0.4
    let s0 = &list.steps[0];
    assert_eq!(s0.importance, vec![0.6, 0.4]);
    assert!((s0.diversity - 0.4).abs() < 1e-15);
    assert!((s0.score - 0.45).abs() < 1e-15);

    // softmax of (0, 0.4) after zeroing c1
    let e = 0.4f64.exp();
    let u1 = [1.0 / (1.0 + e), e / (1.0 + e)];
    let s1 = &list.steps[1];
    assert!((s1.importance[0] - u1[0]).abs() < 1e-15);
    assert!((s1.importance[1] - u1[1]).abs() < 1e-15);
    assert!((s1.diversity - u1[1]).abs() < 1e-15);
    assert!((s1.score - (0.15 + 0.5 * u1[1])).abs() < 1e-15);

    let oracle = oracles::add(&rel, &[vec![true, false], vec![true, false], vec![false, true]], &[0.6, 0.4], 0.5, 2, 3, false);
    assert_eq!(oracle.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
    for (step, (_, score)) in list.steps.iter().zip(&oracle) {
        assert_eq!(step.score, *score);
    }
}

#[test]
fn toy_classic_picks_v1_then_v3() {
    let (rel, table) = toy();
    let list = add_rerank(&rel, &[0.6, 0.4], &table, 0.5, 2, AddMode::Classic, 3).unwrap();
    assert_eq!(list.items(), vec![0, 2]);
    assert_eq!(list.steps[1].importance, vec![0.0, 1.0]);
    assert!((list.steps[1].score - 0.6).abs() < 1e-15);
}

#[test]
fn lambda_one_returns_top_l() {
    let rel = [0.1, 0.4, 0.05, 0.3, 0.15];
    let table = ItemAttributeTable::new(3, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![2]]).unwrap();
    for mode in [AddMode::Literal, AddMode::Classic] {
        let list = add_rerank(&rel, &[0.9, 0.05, 0.05], &table, 1.0, 3, mode, 5).unwrap();
        assert_eq!(list.items(), vec![1, 3, 4]);
    }
    assert_eq!(mmr_rerank(&rel, &table, 1.0, 3, 5).unwrap().items(), vec![1, 3, 4]);
}

#[test]
fn mmr_identical_attributes_follow_relevance() {
    let rel = [0.2, 0.5, 0.1, 0.2];
    let table = ItemAttributeTable::new(2, vec![vec![0, 1]; 4]).unwrap();
    for lambda in [0.01, 0.3, 0.7] {
        assert_eq!(mmr_rerank(&rel, &table, lambda, 4, 4).unwrap().items(), vec![1, 0, 3, 2]);
    }
}

#[test]
fn mmr_four_item_two_groups() {
    let rel = [0.4, 0.35, 0.15, 0.1];
    let hot = vec![vec![true, false], vec![true, false], vec![false, true], vec![false, true]];
    let table = ItemAttributeTable::new(2, oracles::sparse(&hot)).unwrap();
    let list = mmr_rerank(&rel, &table, 0.5, 3, 4).unwrap();
    assert_eq!(list.items(), vec![0, 2, 1]);
    let oracle = oracles::mmr(&rel, &hot, 0.5, 3, 4);
    assert_eq!(list.steps.iter().map(|s| (s.item, s.score)).collect::<Vec<_>>(), oracle);
}

#[test]
fn ties_go_to_lower_index() {
    let rel = [0.25; 4];
    let table = ItemAttributeTable::new(1, vec![vec![0]; 4]).unwrap();
    let list = add_rerank(&rel, &[1.0], &table, 0.5, 4, AddMode::Classic, 4).unwrap();
    assert_eq!(list.items(), vec![0, 1, 2, 3]);
}

#[test]
fn argument_errors() {
    let (rel, table) = toy();
    let u = [0.5, 0.5];
    assert!(matches!(add_rerank(&rel, &u, &table, 0.5, 4, AddMode::Literal, 3), Err(AdsrError::Config(_))));
    assert!(matches!(add_rerank(&rel, &u, &table, 1.5, 2, AddMode::Literal, 3), Err(AdsrError::Config(_))));
    assert!(matches!(mmr_rerank(&rel, &table, -0.1, 2, 3), Err(AdsrError::Config(_))));
    let empty = CandidatePool::default();
    assert!(matches!(add_rerank_pool(&empty, &u, &table, 0.5, 1, AddMode::Literal), Err(AdsrError::Contract(_))));
    assert!(matches!(mmr_rerank_pool(&empty, &table, 0.5, 1), Err(AdsrError::Contract(_))));
    assert!(matches!(CandidatePool::from_pairs(vec![(1, 0.2), (1, 0.3)]), Err(AdsrError::Contract(_))));
    assert!(matches!(add_rerank(&rel, &[1.0], &table, 0.5, 2, AddMode::Literal, 3), Err(AdsrError::Contract(_))));
}

#[test]
fn pool_orders_by_relevance() {
    let pool = CandidatePool::from_pairs(vec![(4, 0.1), (2, 0.3), (7, 0.3)]).unwrap();
    assert_eq!(pool.items(), &[2, 7, 4]);
    assert_eq!(pool.truncated(2).items(), &[2, 7]);
    assert_eq!(CandidatePool::from_scores(&[0.1, 0.3, 0.3, 0.2], 3).items(), &[1, 2, 3]);
}

#[derive(Debug, Clone)]
struct Instance {
    rel: Vec<f64>,
    hot: Vec<Vec<bool>>,
    u0: Vec<f64>,
    lambda: f64,
    l: usize,
    m: usize,
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=12, 1usize..=5)
        .prop_flat_map(|(n, c)| {
            (
                // a coarse grid makes ties common
                prop::collection::vec(prop_oneof![(0u32..8).prop_map(|x| x as f64 / 8.0), 0.0f64..1.0], n),
                prop::collection::vec(1u32..(1 << c), n),
                prop::collection::vec(0.01f64..1.0, c),
                prop_oneof![Just(0.0), Just(0.25), Just(0.5), Just(1.0), 0.0f64..=1.0],
                1usize..=n.min(6),
                Just((n, c)),
            )
        })
        .prop_flat_map(|(rel, masks, raw_u, lambda, l, (n, c))| {
            let hot: Vec<Vec<bool>> = masks.iter().map(|m| (0..c).map(|j| m >> j & 1 == 1).collect()).collect();
            let total: f64 = raw_u.iter().sum();
            let u0: Vec<f64> = raw_u.iter().map(|x| x / total).collect();
            (l..=n).prop_map(move |m| Instance {
                rel: rel.clone(),
                hot: hot.clone(),
                u0: u0.clone(),
                lambda,
                l,
                m,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn add_matches_oracle(inst in instance()) {
        let table = ItemAttributeTable::new(inst.u0.len(), oracles::sparse(&inst.hot)).unwrap();
        for (mode, classic) in [(AddMode::Literal, false), (AddMode::Classic, true)] {
            let got = add_rerank(&inst.rel, &inst.u0, &table, inst.lambda, inst.l, mode, inst.m).unwrap();
            let want = oracles::add(&inst.rel, &inst.hot, &inst.u0, inst.lambda, inst.l, inst.m, classic);
            prop_assert_eq!(got.steps.iter().map(|s| (s.item, s.score)).collect::<Vec<_>>(), want);
        }
    }

    #[test]
    fn mmr_matches_oracle(inst in instance()) {
        let table = ItemAttributeTable::new(inst.u0.len(), oracles::sparse(&inst.hot)).unwrap();
        let got = mmr_rerank(&inst.rel, &table, inst.lambda, inst.l, inst.m).unwrap();
        let want = oracles::mmr(&inst.rel, &inst.hot, inst.lambda, inst.l, inst.m);
        prop_assert_eq!(got.steps.iter().map(|s| (s.item, s.score)).collect::<Vec<_>>(), want);
    }

    #[test]
    fn literal_importance_stays_normalized(inst in instance()) {
        prop_assume!(inst.lambda < 1.0);
        let table = ItemAttributeTable::new(inst.u0.len(), oracles::sparse(&inst.hot)).unwrap();
        let list = add_rerank(&inst.rel, &inst.u0, &table, inst.lambda, inst.l, AddMode::Literal, inst.m).unwrap();
        let mut seen = std::collections::HashSet::new();
        for step in &list.steps {
            prop_assert!(seen.insert(step.item));
            let total: f64 = step.importance.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(step.importance.iter().all(|&x| x >= 0.0));
            // S_div = 1 − Σ over the item's own attributes
            let own: f64 = table.attrs(step.item).iter().map(|&j| step.importance[j as usize]).sum();
            prop_assert!((step.diversity - (1.0 - own)).abs() < 1e-9);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&step.diversity));
        }
        prop_assert!(list.len() <= inst.l);
    }

    #[test]
    fn classic_lambda_zero_covers_new_attributes(inst in instance()) {
        let table = ItemAttributeTable::new(inst.u0.len(), oracles::sparse(&inst.hot)).unwrap();
        let list = add_rerank(&inst.rel, &inst.u0, &table, 0.0, inst.l, AddMode::Classic, inst.m).unwrap();
        let pool = CandidatePool::from_scores(&inst.rel, inst.m);
        let mut covered = std::collections::BTreeSet::new();
        let mut taken = std::collections::HashSet::new();
        for step in &list.steps {
            let uncovered_left = pool
                .items()
                .iter()
                .filter(|i| !taken.contains(*i))
                .any(|&i| table.attrs(i).iter().any(|a| !covered.contains(a)));
            let adds_new = table.attrs(step.item).iter().any(|a| !covered.contains(a));
            prop_assert_eq!(adds_new, uncovered_left);
            covered.extend(table.attrs(step.item).iter().copied());
            taken.insert(step.item);
        }
    }

    #[test]
    fn single_attribute_items_get_distinct_attributes(
        attrs in prop::collection::vec(0u32..5, 6..=12),
        rel in prop::collection::vec(0.0f64..1.0, 12),
        l in 1usize..=6,
    ) {
        let n = attrs.len();
        let table = ItemAttributeTable::new(5, attrs.iter().map(|&a| vec![a]).collect()).unwrap();
        let list = add_rerank(&rel[..n], &[0.2; 5], &table, 0.0, l, AddMode::Classic, n).unwrap();
        let distinct = attrs.iter().collect::<std::collections::BTreeSet<_>>().len();
        let firsts: Vec<u32> = list.steps.iter().take(l.min(distinct)).map(|s| table.attrs(s.item)[0]).collect();
        let unique = firsts.iter().collect::<std::collections::BTreeSet<_>>().len();
        prop_assert_eq!(unique, firsts.len());
    }

    #[test]
    fn reranking_is_deterministic(inst in instance()) {
        let table = ItemAttributeTable::new(inst.u0.len(), oracles::sparse(&inst.hot)).unwrap();
        let a = add_rerank(&inst.rel, &inst.u0, &table, inst.lambda, inst.l, AddMode::Literal, inst.m).unwrap();
        let b = add_rerank(&inst.rel, &inst.u0, &table, inst.lambda, inst.l, AddMode::Literal, inst.m).unwrap();
        prop_assert_eq!(a, b);
    }
}
