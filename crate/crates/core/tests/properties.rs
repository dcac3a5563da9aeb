use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tastebud::catalog::{Catalog, DietType, Item, ItemSpace, KernelConfig, NutritionFacts, HALAL_EXCLUDED, KOSHER_EXCLUDED};
use tastebud::elicitation::{
    bottom_fraction, select, top_fraction, update, Strategy as Policy, StrategyConfig, UserState,
};
use tastebud::nutrition::{select_candidate_pool, CandidatePool, PoolEntry};
use tastebud::recommender::recommend;
use tastebud::synthetic::{SyntheticData, SyntheticSpec};

fn space(seed: u64) -> (Catalog, ItemSpace) {
    let spec = SyntheticSpec {
        items: 120,
        clusters: 6,
        dim: 8,
        seed,
        ..SyntheticSpec::default()
    };
    SyntheticData::generate(&spec)
        .build(DietType::NoRestrictions, &KernelConfig::default())
        .unwrap()
}

fn strategy() -> impl Strategy<Value = Policy> {
    proptest::sample::select(Policy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn updates_keep_a_distribution(seed in 0u64..1000, strat in strategy(), steps in 1u32..8, picks in prop::collection::vec(any::<u8>(), 8)) {
        let (_, space) = space(seed % 4);
        let config = StrategyConfig::new(strat);
        let mut state = UserState::for_updater(config.updater, space.len(), space.embeddings().dim()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut explored_before = 0;
        for t in 1..=steps {
            let shown = select(&state, t, &space, &config, &mut rng).unwrap();
            let mask = picks[t as usize % picks.len()];
            let selected: Vec<usize> = shown.items.iter().enumerate()
                .filter(|(k, _)| mask >> (k % 8) & 1 == 1)
                .map(|(_, &i)| i)
                .collect();
            update(&mut state, &shown.items, &selected, &space, &config).unwrap();
            let p = state.p();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x.is_finite()));
            for &i in &shown.items {
                prop_assert!(state.is_explored(i));
            }
            prop_assert!(state.explored_count() >= explored_before);
            explored_before = state.explored_count();
            prop_assert_eq!(state.t(), t);
        }
        let json = state.to_json();
        let back = UserState::from_json(&json).unwrap();
        prop_assert_eq!(back, state);
    }

    #[test]
    fn presentations_are_distinct_and_in_range(seed in 0u64..1000, strat in strategy(), t in 1u32..6) {
        let (_, space) = space(seed % 3);
        let config = StrategyConfig::new(strat);
        let state = UserState::for_updater(config.updater, space.len(), space.embeddings().dim()).unwrap();
        let shown = select(&state, t, &space, &config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let distinct: BTreeSet<usize> = shown.items.iter().copied().collect();
        prop_assert_eq!(distinct.len(), shown.items.len());
        prop_assert_eq!(shown.items.len(), if t <= 2 { 10 } else { 2 });
        prop_assert!(shown.items.iter().all(|&i| i < space.len()));
    }

    #[test]
    fn fraction_sets_match_sorting(values in prop::collection::vec(-5.0f64..5.0, 1..300), fraction in 0.005f64..0.5) {
        let n = values.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let top = top_fraction(&values, fraction).unwrap();
        let bottom = bottom_fraction(&values, fraction).unwrap();
        prop_assert!(top.len() <= k && !top.is_empty());
        prop_assert!(bottom.len() <= k && !bottom.is_empty());
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // every member of the top set beats every non-member or ties it
        let min_top = top.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        let max_rest = (0..n).filter(|i| !top.contains(i)).map(|i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_top >= max_rest);
        let max_bottom = bottom.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        let min_rest = (0..n).filter(|i| !bottom.contains(i)).map(|i| values[i]).fold(f64::INFINITY, f64::min);
        prop_assert!(max_bottom <= min_rest);
        prop_assert_eq!(values[top[0]], sorted[n - 1]);
        prop_assert_eq!(values[bottom[0]], sorted[0]);
    }

    #[test]
    fn pool_keeps_the_lowest_scores(scores in prop::collection::vec(0u64..40, 1..200), m in 1usize..250, seed in any::<u64>()) {
        let pool = select_candidate_pool(&scores, m, seed);
        prop_assert_eq!(pool.len(), m.min(scores.len()));
        let members: BTreeSet<usize> = pool.indices().collect();
        prop_assert_eq!(members.len(), pool.len());
        let all_equal = scores.iter().all(|&s| s == scores[0]);
        if !all_equal {
            let worst_in = pool.entries().iter().map(|e| e.score).max().unwrap();
            for (i, &s) in scores.iter().enumerate() {
                if !members.contains(&i) {
                    prop_assert!(s >= worst_in);
                }
            }
        }
        prop_assert_eq!(select_candidate_pool(&scores, m, seed), pool);
    }

    #[test]
    fn recommendations_are_ordered_pool_members(seed in 0u64..500, n in 1usize..30, steps in 0u32..5) {
        let (catalog, space) = space(seed % 3);
        let config = StrategyConfig::new(Policy::LE_EE);
        let mut state = UserState::new(space.len()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 1..=steps {
            let shown = select(&state, t, &space, &config, &mut rng).unwrap();
            let picked = vec![shown.items[0]];
            update(&mut state, &shown.items, &picked, &space, &config).unwrap();
        }
        let pool = CandidatePool::from_entries(
            (0..catalog.len()).step_by(3).map(|i| PoolEntry { index: i, score: (i % 7) as u64 }).collect(),
        );
        let recs = recommend(&state, &pool, &catalog, n).unwrap();
        prop_assert_eq!(recs.len(), n.min(pool.len()));
        let lp = state.log_p();
        let idx = recs.indices();
        for w in idx.windows(2) {
            prop_assert!(lp[w[0]] >= lp[w[1]]);
        }
        for &i in &idx {
            prop_assert!(pool.contains(i));
        }
        // nothing left out ranks above the last recommendation
        let last = *idx.last().unwrap();
        for i in pool.indices().filter(|i| !idx.contains(i)) {
            prop_assert!(lp[i] <= lp[last]);
        }
    }

    #[test]
    fn restricted_diets_never_keep_excluded_ingredients(
        words in prop::collection::vec(
            prop::sample::select(vec!["pork", "Pork", "rice", "eel", "steel", "blood", "bloody", "grain alcohol", "alcoholic", "horse meat", "horse", "beef", "frog"]),
            0..5,
        ),
        tagged in any::<bool>(),
    ) {
        let mut diet_tags = BTreeSet::new();
        if tagged {
            diet_tags.insert(DietType::Kosher);
            diet_tags.insert(DietType::Halal);
        }
        let item = Item {
            id: "x".into(),
            name: "x".into(),
            image_url: String::new(),
            ingredients: words.iter().map(|w| format!("fresh {w}")).collect(),
            nutrition: NutritionFacts { calories: 1.0, protein: 1.0, fat: 1.0 },
            diet_tags,
        };
        for (diet, list) in [(DietType::Kosher, KOSHER_EXCLUDED), (DietType::Halal, HALAL_EXCLUDED)] {
            let has = item.ingredients.iter().any(|ing| {
                let toks: Vec<String> = ing.split_whitespace().map(str::to_lowercase).collect();
                list.iter().any(|t| {
                    let need: Vec<&str> = t.split_whitespace().collect();
                    toks.windows(need.len()).any(|w| w.iter().zip(&need).all(|(a, b)| a == b))
                })
            });
            prop_assert_eq!(item.is_valid_for(diet), !has);
        }
    }
}
