//! Survey-driven suitability ranking and candidate-pool selection.
//!
//! Each item gets an ascending and a descending rank per nutrient (rank 1 is
//! the extreme value, ties broken by ascending item id). A goal profile turns
//! on the ascending rank for nutrients to reduce and the descending rank for
//! nutrients to increase; the suitability score is the sum of the active
//! ranks, so lower is better.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, DietType, NutritionFacts};
use crate::rng::seeded;

pub const DEFAULT_POOL_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nutrient {
    Calories,
    Protein,
    Fat,
}

impl Nutrient {
    pub const ALL: [Nutrient; 3] = [Nutrient::Calories, Nutrient::Protein, Nutrient::Fat];

    pub fn of(self, facts: &NutritionFacts) -> f64 {
        match self {
            Nutrient::Calories => facts.calories,
            Nutrient::Protein => facts.protein,
            Nutrient::Fat => facts.fat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NutrientDirective {
    Reduce,
    Maintain,
    Increase,
}

impl NutrientDirective {
    pub fn flipped(self) -> Self {
        match self {
            NutrientDirective::Reduce => NutrientDirective::Increase,
            NutrientDirective::Increase => NutrientDirective::Reduce,
            NutrientDirective::Maintain => NutrientDirective::Maintain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalProfile {
    pub diet: DietType,
    pub calories: NutrientDirective,
    pub protein: NutrientDirective,
    pub fat: NutrientDirective,
}

impl GoalProfile {
    pub fn maintain_all(diet: DietType) -> Self {
        Self {
            diet,
            calories: NutrientDirective::Maintain,
            protein: NutrientDirective::Maintain,
            fat: NutrientDirective::Maintain,
        }
    }

    pub fn directive(&self, nutrient: Nutrient) -> NutrientDirective {
        match nutrient {
            Nutrient::Calories => self.calories,
            Nutrient::Protein => self.protein,
            Nutrient::Fat => self.fat,
        }
    }

    pub fn with_directive(mut self, nutrient: Nutrient, directive: NutrientDirective) -> Self {
        match nutrient {
            Nutrient::Calories => self.calories = directive,
            Nutrient::Protein => self.protein = directive,
            Nutrient::Fat => self.fat = directive,
        }
        self
    }

    pub fn is_all_maintain(&self) -> bool {
        Nutrient::ALL
            .iter()
            .all(|&n| self.directive(n) == NutrientDirective::Maintain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortOrder {
    Ascending,
    Descending,
}

/// Rank (1-based) of every catalog item for one nutrient.
pub fn rank_by_nutrient(catalog: &Catalog, nutrient: Nutrient, order: SortOrder) -> Vec<u32> {
    let values: Vec<f64> = catalog.items().iter().map(|i| nutrient.of(&i.nutrition)).collect();
    rank_values(&values, order)
}

/// Ranks values with ties resolved by ascending index (catalog index order is
/// item-id order).
pub fn rank_values(values: &[f64], order: SortOrder) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let by_value = match order {
            SortOrder::Ascending => values[a].total_cmp(&values[b]),
            SortOrder::Descending => values[b].total_cmp(&values[a]),
        };
        by_value.then(a.cmp(&b))
    });
    let mut ranks = vec![0u32; values.len()];
    for (r, &i) in idx.iter().enumerate() {
        ranks[i] = r as u32 + 1;
    }
    ranks
}

/// The six rank columns for a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct SuitabilityTable {
    ascending: [Vec<u32>; 3],
    descending: [Vec<u32>; 3],
}

impl SuitabilityTable {
    pub fn new(catalog: &Catalog) -> Self {
        let col = |n, o| rank_by_nutrient(catalog, n, o);
        Self {
            ascending: Nutrient::ALL.map(|n| col(n, SortOrder::Ascending)),
            descending: Nutrient::ALL.map(|n| col(n, SortOrder::Descending)),
        }
    }

    pub fn len(&self) -> usize {
        self.ascending[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self, nutrient: Nutrient, order: SortOrder, item: usize) -> u32 {
        let k = nutrient as usize;
        match order {
            SortOrder::Ascending => self.ascending[k][item],
            SortOrder::Descending => self.descending[k][item],
        }
    }

    /// Rank-sum suitability per item; every score is 0 under all-Maintain.
    pub fn scores(&self, profile: &GoalProfile) -> Vec<u64> {
        (0..self.len())
            .map(|i| {
                Nutrient::ALL
                    .iter()
                    .map(|&n| match profile.directive(n) {
                        NutrientDirective::Reduce => u64::from(self.rank(n, SortOrder::Ascending, i)),
                        NutrientDirective::Increase => {
                            u64::from(self.rank(n, SortOrder::Descending, i))
                        }
                        NutrientDirective::Maintain => 0,
                    })
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub index: usize,
    pub score: u64,
}

/// The M most suitable items, ascending score then ascending index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn from_entries(entries: Vec<PoolEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.iter().any(|e| e.index == index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.index)
    }
}

/// Keeps the `m` lowest scores. When every score is equal the pool is a
/// seeded uniform sample instead, listed in index order.
pub fn select_candidate_pool(scores: &[u64], m: usize, seed: u64) -> CandidatePool {
    assert!(m >= 1, "pool size must be positive");
    let n = scores.len();
    let all_equal = scores.windows(2).all(|w| w[0] == w[1]);
    let entries = if all_equal && m < n {
        let mut picked = index::sample(&mut seeded(seed), n, m).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|index| PoolEntry {
                index,
                score: scores[index],
            })
            .collect()
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (scores[i], i));
        order.truncate(m);
        order
            .into_iter()
            .map(|index| PoolEntry {
                index,
                score: scores[index],
            })
            .collect()
    };
    CandidatePool { entries }
}

/// Suitability table, scores and pool in one call.
pub fn build_pool(catalog: &Catalog, profile: &GoalProfile, m: usize, seed: u64) -> CandidatePool {
    let scores = SuitabilityTable::new(catalog).scores(profile);
    select_candidate_pool(&scores, m, seed)
}
