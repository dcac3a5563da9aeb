//! Seeded synthetic catalogs with clustered unit-vector embeddings, used by
//! the simulator, the benchmarks and the tests.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    Catalog, CatalogError, DietType, EmbeddingError, EmbeddingSet, Item, ItemSpace, KernelConfig,
    KernelError, NutritionFacts,
};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    /// Noise scale relative to the unit cluster centres.
    pub spread: f64,
    /// Chance that an item carries an ingredient from an exclusion list.
    pub restricted_share: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            items: 2000,
            clusters: 20,
            dim: 64,
            spread: 0.6,
            restricted_share: 0.15,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Plant,
    Dairy,
    Meat,
    Fish,
}

const INGREDIENTS: &[(&str, Kind)] = &[
    ("rice", Kind::Plant),
    ("tomato", Kind::Plant),
    ("onion", Kind::Plant),
    ("garlic", Kind::Plant),
    ("olive oil", Kind::Plant),
    ("lentils", Kind::Plant),
    ("chickpeas", Kind::Plant),
    ("spinach", Kind::Plant),
    ("potato", Kind::Plant),
    ("steel-cut oats", Kind::Plant),
    ("horseradish", Kind::Plant),
    ("wheat flour", Kind::Plant),
    ("basil", Kind::Plant),
    ("mushroom", Kind::Plant),
    ("tofu", Kind::Plant),
    ("cheddar", Kind::Dairy),
    ("butter", Kind::Dairy),
    ("yogurt", Kind::Dairy),
    ("egg", Kind::Dairy),
    ("chicken", Kind::Meat),
    ("beef", Kind::Meat),
    ("lamb", Kind::Meat),
    ("salmon", Kind::Fish),
    ("tuna", Kind::Fish),
    ("cod", Kind::Fish),
];

// Each entry is (ingredient, kind); all of these hit at least one exclusion
// list and none of them is plant-based.
const RESTRICTED: &[(&str, Kind)] = &[
    ("pork", Kind::Meat),
    ("smoked pork belly", Kind::Meat),
    ("rabbit", Kind::Meat),
    ("shellfish", Kind::Fish),
    ("eel", Kind::Fish),
    ("octopus", Kind::Fish),
    ("frog legs", Kind::Meat),
    ("blood sausage", Kind::Meat),
    ("white wine alcohol", Kind::Plant),
    ("Pork", Kind::Meat),
];

const DISHES: &[&str] = &[
    "stew", "salad", "curry", "bowl", "pie", "soup", "wrap", "bake", "stir fry", "risotto",
];

/// Items plus raw embedding rows, before any diet filtering.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub items: Vec<Item>,
    pub dim: usize,
    pub rows: Vec<(String, Vec<f32>)>,
}

impl SyntheticData {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        assert!(spec.dim > 0 && spec.clusters > 0, "dim and clusters must be positive");
        let mut rng = stream(spec.seed, &[b"synthetic"]);
        let centres: Vec<Vec<f64>> = (0..spec.clusters)
            .map(|_| unit(&mut rng, spec.dim))
            .collect();
        let noise = spec.spread / (spec.dim as f64).sqrt();

        let mut items = Vec::with_capacity(spec.items);
        let mut rows = Vec::with_capacity(spec.items);
        for i in 0..spec.items {
            let c = rng.random_range(0..spec.clusters);
            let v: Vec<f32> = centres[c]
                .iter()
                .map(|&x| (x + noise * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            let id = format!("item{i:06}");
            rows.push((id.clone(), v));
            items.push(item(&mut rng, id, c, spec.restricted_share));
        }
        Self {
            items,
            dim: spec.dim,
            rows,
        }
    }

    pub fn catalog(&self, diet: DietType) -> Result<Catalog, CatalogError> {
        Catalog::from_items(self.items.clone(), diet)
    }

    pub fn embeddings(&self, catalog: &Catalog) -> Result<EmbeddingSet, EmbeddingError> {
        EmbeddingSet::from_rows(self.rows.iter().cloned(), self.dim, catalog)
    }

    /// Filtered catalog and its item space in one go.
    pub fn build(
        &self,
        diet: DietType,
        kernel: &KernelConfig,
    ) -> Result<(Catalog, ItemSpace), SyntheticError> {
        let catalog = self.catalog(diet)?;
        let embeddings = self.embeddings(&catalog)?;
        let space = ItemSpace::build(embeddings, kernel)?;
        Ok((catalog, space))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn item(rng: &mut impl Rng, id: String, cluster: usize, restricted_share: f64) -> Item {
    let count = rng.random_range(3..=6);
    let mut picked: Vec<(&str, Kind)> = INGREDIENTS
        .choose_multiple(rng, count)
        .copied()
        .collect();
    if rng.random_bool(restricted_share.clamp(0.0, 1.0)) {
        picked.push(*RESTRICTED.choose(rng).expect("non-empty"));
    }
    let kinds: Vec<Kind> = picked.iter().map(|p| p.1).collect();
    let mut diet_tags = BTreeSet::new();
    if kinds.iter().all(|&k| k == Kind::Plant) {
        diet_tags.insert(DietType::Vegan);
        diet_tags.insert(DietType::Vegetarian);
    } else if kinds.iter().all(|&k| matches!(k, Kind::Plant | Kind::Dairy)) {
        diet_tags.insert(DietType::Vegetarian);
    }
    let main = picked[0].0;
    let dish = DISHES[cluster % DISHES.len()];
    Item {
        image_url: format!("https://images.example.org/{id}.jpg"),
        name: format!("{main} {dish}"),
        id,
        ingredients: picked.iter().map(|p| p.0.to_string()).collect(),
        nutrition: NutritionFacts {
            calories: round1(rng.random_range(120.0..1200.0)),
            protein: round1(rng.random_range(1.0..70.0)),
            fat: round1(rng.random_range(0.5..80.0)),
        },
        diet_tags,
    }
}
