//! Re-ranks the nutrient-suitable candidate pool by learned preferences.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, EmbeddingSet, ItemSpace, KernelConfig, KernelError};
use crate::elicitation::UserState;
use crate::nutrition::{select_candidate_pool, CandidatePool, GoalProfile, SuitabilityTable};
use crate::rng::seeded;

pub const DEFAULT_RECOMMENDATIONS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecommendError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("state covers {state} items but the catalog has {catalog}")]
    SizeMismatch { state: usize, catalog: usize },
}

/// One recommended item in the service response shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    #[serde(skip)]
    pub index: usize,
    pub id: String,
    pub name: String,
    pub image_url: String,
    pub calories: f64,
    pub protein: f64,
    pub fat: f64,
    pub preference: f64,
    pub suitability: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecommendationList {
    pub items: Vec<Recommendation>,
}

impl RecommendationList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|r| r.index).collect()
    }

    /// Restores `index` fields after deserialization.
    pub fn reindex(&mut self, catalog: &Catalog) {
        for r in &mut self.items {
            if let Some(i) = catalog.index_of(&r.id) {
                r.index = i;
            }
        }
    }
}

fn entry(catalog: &Catalog, index: usize, preference: f64, suitability: u64) -> Recommendation {
    let item = catalog.item(index);
    Recommendation {
        index,
        id: item.id.clone(),
        name: item.name.clone(),
        image_url: item.image_url.clone(),
        calories: item.nutrition.calories,
        protein: item.nutrition.protein,
        fat: item.nutrition.fat,
        preference,
        suitability,
    }
}

/// Pool members by descending preference, then ascending suitability score,
/// then ascending item id; the first `n` are returned.
pub fn recommend(
    state: &UserState,
    pool: &CandidatePool,
    catalog: &Catalog,
    n: usize,
) -> Result<RecommendationList, RecommendError> {
    if pool.is_empty() {
        return Err(RecommendError::EmptyPool);
    }
    if state.len() != catalog.len() {
        return Err(RecommendError::SizeMismatch {
            state: state.len(),
            catalog: catalog.len(),
        });
    }
    let log_p = state.log_p();
    let mut ranked = pool.entries().to_vec();
    ranked.sort_by(|a, b| {
        log_p[b.index]
            .total_cmp(&log_p[a.index])
            .then(a.score.cmp(&b.score))
            .then(a.index.cmp(&b.index))
    });
    ranked.truncate(n);
    Ok(RecommendationList {
        items: ranked
            .into_iter()
            .map(|e| entry(catalog, e.index, log_p[e.index].exp(), e.score))
            .collect(),
    })
}

/// Seeded uniform sample of `n` pool members in random order. Preference is
/// reported as 0 since no elicitation is involved.
pub fn baseline_recommend(
    pool: &CandidatePool,
    catalog: &Catalog,
    n: usize,
    seed: u64,
) -> Result<RecommendationList, RecommendError> {
    if pool.is_empty() {
        return Err(RecommendError::EmptyPool);
    }
    let k = n.min(pool.len());
    let picks = index::sample(&mut seeded(seed), pool.len(), k);
    Ok(RecommendationList {
        items: picks
            .into_iter()
            .map(|p| {
                let e = pool.entries()[p];
                entry(catalog, e.index, 0.0, e.score)
            })
            .collect(),
    })
}

/// Everything needed to serve one diet: the filtered catalog, its similarity
/// space and its suitability ranks.
#[derive(Debug, Clone)]
pub struct DietEngine {
    catalog: Catalog,
    space: ItemSpace,
    table: SuitabilityTable,
}

impl DietEngine {
    pub fn new(
        catalog: Catalog,
        embeddings: EmbeddingSet,
        kernel: &KernelConfig,
    ) -> Result<Self, KernelError> {
        let space = ItemSpace::build(embeddings, kernel)?;
        let table = SuitabilityTable::new(&catalog);
        Ok(Self {
            catalog,
            space,
            table,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn space(&self) -> &ItemSpace {
        &self.space
    }

    pub fn table(&self) -> &SuitabilityTable {
        &self.table
    }

    pub fn pool(&self, profile: &GoalProfile, m: usize, seed: u64) -> CandidatePool {
        select_candidate_pool(&self.table.scores(profile), m, seed)
    }
}
