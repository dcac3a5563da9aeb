//! Item catalog loading, dietary filtering and the similarity structures
//! (embeddings, Gaussian kernel, radius graph) every other module reads.

mod embeddings;
mod kernel;

pub use embeddings::{decode_rows, encode_rows, load_embeddings, EmbeddingError, EmbeddingSet};
pub use kernel::{
    percentile, DeltaRule, KernelConfig, KernelError, KernelParams, NeighborIndex,
    MAX_UNIT_DISTANCE,
};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gaussian similarity between two catalog items, zero beyond the radius.
pub fn pairwise_weight(embeddings: &EmbeddingSet, i: usize, j: usize, kernel: &KernelParams) -> f64 {
    kernel.weight_from_dist_sq(embeddings.dist_sq(i, j))
}

/// Embeddings together with their kernel and radius graph. Immutable once
/// built and shared by every session over the same catalog.
#[derive(Debug, Clone)]
pub struct ItemSpace {
    embeddings: EmbeddingSet,
    kernel: KernelParams,
    index: NeighborIndex,
}

impl ItemSpace {
    pub fn build(embeddings: EmbeddingSet, config: &KernelConfig) -> Result<Self, KernelError> {
        let kernel = KernelParams::estimate(&embeddings, config)?;
        Ok(Self::with_kernel(embeddings, kernel))
    }

    pub fn with_kernel(embeddings: EmbeddingSet, kernel: KernelParams) -> Self {
        let index = NeighborIndex::build(&embeddings, kernel);
        Self {
            embeddings,
            kernel,
            index,
        }
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Ingredients a kosher catalog must never contain.
pub const KOSHER_EXCLUDED: &[&str] = &[
    "pork",
    "rabbit",
    "horse meat",
    "bear",
    "shellfish",
    "shark",
    "eel",
    "octopus",
    "octopuses",
    "moreton bay bugs",
    "frog",
];

/// Ingredients a halal catalog must never contain.
pub const HALAL_EXCLUDED: &[&str] = &[
    "pork",
    "blood sausage",
    "blood",
    "blood pudding",
    "alcohol",
    "grain alcohol",
    "pure grain alcohol",
    "ethyl alcohol",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DietType {
    NoRestrictions,
    Vegetarian,
    Vegan,
    Kosher,
    Halal,
}

impl DietType {
    pub const ALL: [DietType; 5] = [
        DietType::NoRestrictions,
        DietType::Vegetarian,
        DietType::Vegan,
        DietType::Kosher,
        DietType::Halal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DietType::NoRestrictions => "no_restrictions",
            DietType::Vegetarian => "vegetarian",
            DietType::Vegan => "vegan",
            DietType::Kosher => "kosher",
            DietType::Halal => "halal",
        }
    }

    /// The ingredient exclusion list enforced locally for this diet.
    pub fn excluded_ingredients(self) -> &'static [&'static str] {
        match self {
            DietType::Kosher => KOSHER_EXCLUDED,
            DietType::Halal => HALAL_EXCLUDED,
            _ => &[],
        }
    }
}

impl fmt::Display for DietType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown diet type `{0}`")]
pub struct UnknownDiet(pub String);

impl FromStr for DietType {
    type Err = UnknownDiet;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "no_restrictions" | "none" => Ok(DietType::NoRestrictions),
            "vegetarian" => Ok(DietType::Vegetarian),
            "vegan" => Ok(DietType::Vegan),
            "kosher" => Ok(DietType::Kosher),
            "halal" => Ok(DietType::Halal),
            _ => Err(UnknownDiet(s.to_string())),
        }
    }
}

/// Per-serving nutrition facts: kcal, grams of protein, grams of fat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutritionFacts {
    pub calories: f64,
    pub protein: f64,
    pub fat: f64,
}

impl NutritionFacts {
    pub fn is_valid(&self) -> bool {
        [self.calories, self.protein, self.fat]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub name: String,
    pub image_url: String,
    pub ingredients: Vec<String>,
    pub nutrition: NutritionFacts,
    #[serde(default)]
    pub diet_tags: BTreeSet<DietType>,
}

impl Item {
    /// Whether the item may be served to someone following `diet`.
    ///
    /// Vegetarian and vegan need an explicit tag. Kosher and halal are decided
    /// by the ingredient exclusion list alone, so a tag never overrides it.
    pub fn is_valid_for(&self, diet: DietType) -> bool {
        match diet {
            DietType::NoRestrictions => true,
            DietType::Vegetarian | DietType::Vegan => self.diet_tags.contains(&diet),
            DietType::Kosher | DietType::Halal => {
                !self.contains_excluded(diet.excluded_ingredients())
            }
        }
    }

    /// Whole-token, case-insensitive match of any term against any ingredient.
    pub fn contains_excluded(&self, terms: &[&str]) -> bool {
        self.ingredients.iter().any(|ingredient| {
            let tokens = tokenize(ingredient);
            terms.iter().any(|term| contains_token_run(&tokens, &tokenize(term)))
        })
    }
}

fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_token_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && haystack.len() >= needle.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("no items left after filtering for diet `{0}`")]
    EmptyAfterFilter(DietType),
}

/// Counts of what happened to the raw records during a load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: usize,
    pub missing_nutrition: usize,
    pub missing_image: usize,
    pub excluded_by_diet: usize,
    pub retained: usize,
}

/// Raw catalog line; nutrition fields are optional so that incomplete items
/// can be counted and rejected instead of failing the whole file.
#[derive(Debug, Deserialize)]
struct RawItem {
    id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    image_url: Option<String>,
    #[serde(default)]
    ingredients: Vec<String>,
    calories: Option<f64>,
    protein: Option<f64>,
    fat: Option<f64>,
    #[serde(default)]
    diet_tags: Vec<DietType>,
}

/// An immutable, diet-filtered item set ordered by ascending item id.
///
/// Index order equals id order, so every "ties by item id" rule downstream is
/// a plain index comparison.
#[derive(Debug, Clone)]
pub struct Catalog {
    diet: DietType,
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
    report: LoadReport,
}

impl Catalog {
    /// Builds a catalog from in-memory items, applying the same validation
    /// and dietary filter as [`load_catalog`].
    pub fn from_items(items: Vec<Item>, diet: DietType) -> Result<Self, CatalogError> {
        let mut report = LoadReport {
            records: items.len(),
            ..LoadReport::default()
        };
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(items.len());
        for (n, item) in items.into_iter().enumerate() {
            if !seen.insert(item.id.clone()) {
                return Err(CatalogError::ParseError {
                    line: n + 1,
                    message: format!("duplicate id `{}`", item.id),
                });
            }
            if !item.nutrition.is_valid() {
                report.missing_nutrition += 1;
            } else if item.image_url.trim().is_empty() {
                report.missing_image += 1;
            } else if !item.is_valid_for(diet) {
                report.excluded_by_diet += 1;
            } else {
                kept.push(item);
            }
        }
        if kept.is_empty() {
            return Err(CatalogError::EmptyAfterFilter(diet));
        }
        kept.sort_by(|a, b| a.id.cmp(&b.id));
        report.retained = kept.len();
        let by_id = kept
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id.clone(), i))
            .collect();
        Ok(Self {
            diet,
            items: kept,
            by_id,
            report,
        })
    }

    /// Parses JSON-lines catalog text. Blank lines are skipped.
    pub fn parse(text: &str, diet: DietType) -> Result<Self, CatalogError> {
        let mut items = Vec::new();
        let mut missing_nutrition = 0;
        let mut records = 0;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records += 1;
            let raw: RawItem = serde_json::from_str(line).map_err(|e| CatalogError::ParseError {
                line: n + 1,
                message: e.to_string(),
            })?;
            let (Some(calories), Some(protein), Some(fat)) = (raw.calories, raw.protein, raw.fat)
            else {
                missing_nutrition += 1;
                continue;
            };
            items.push(Item {
                id: raw.id,
                name: raw.name,
                image_url: raw.image_url.unwrap_or_default(),
                ingredients: raw.ingredients.into_iter().map(|s| s.to_lowercase()).collect(),
                nutrition: NutritionFacts {
                    calories,
                    protein,
                    fat,
                },
                diet_tags: raw.diet_tags.into_iter().collect(),
            });
        }
        let mut catalog = Self::from_items(items, diet)?;
        catalog.report.records = records;
        catalog.report.missing_nutrition += missing_nutrition;
        Ok(catalog)
    }

    pub fn diet(&self) -> DietType {
        self.diet
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    /// Re-applies a dietary filter to this catalog's items.
    pub fn filtered(&self, diet: DietType) -> Result<Self, CatalogError> {
        Self::from_items(self.items.clone(), diet)
    }

    /// Serializes back to the JSON-lines file format.
    pub fn to_json_lines(&self) -> String {
        items_to_json_lines(&self.items)
    }
}

/// Writes items in the catalog file format, one object per line.
pub fn items_to_json_lines(items: &[Item]) -> String {
    let mut out = String::new();
    for item in items {
        let value = serde_json::json!({
            "id": item.id,
            "name": item.name,
            "image_url": item.image_url,
            "ingredients": item.ingredients,
            "calories": item.nutrition.calories,
            "protein": item.nutrition.protein,
            "fat": item.nutrition.fat,
            "diet_tags": item.diet_tags,
        });
        out.push_str(&value.to_string());
        out.push('\n');
    }
    out
}

/// Loads a JSON-lines catalog and keeps only items valid for `diet`.
pub fn load_catalog(path: impl AsRef<Path>, diet: DietType) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CatalogError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Catalog::parse(&text, diet)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, ingredients: &[&str], tags: &[DietType]) -> Item {
        Item {
            id: id.into(),
            name: id.into(),
            image_url: format!("http://img/{id}.jpg"),
            ingredients: ingredients.iter().map(|s| s.to_string()).collect(),
            nutrition: NutritionFacts {
                calories: 100.0,
                protein: 10.0,
                fat: 5.0,
            },
            diet_tags: tags.iter().copied().collect(),
        }
    }

    #[test]
    fn kosher_excludes_pork() {
        let items = vec![
            item("a", &["ground pork", "salt"], &[]),
            item("b", &["rice"], &[]),
        ];
        let catalog = Catalog::from_items(items, DietType::Kosher).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(catalog.item(0).id, "b");
        assert_eq!(catalog.report().excluded_by_diet, 1);
    }

    #[test]
    fn exclusion_is_whole_token_and_case_insensitive() {
        let shellfish = item("a", &["Mixed SHELLFISH"], &[]);
        assert!(shellfish.contains_excluded(KOSHER_EXCLUDED));
        // "eel" must not fire on "steel-cut oats", "bear" not on "beard"
        let oats = item("b", &["steel-cut oats", "beard moss"], &[]);
        assert!(!oats.contains_excluded(KOSHER_EXCLUDED));
        let horse = item("c", &["smoked horse meat"], &[]);
        assert!(horse.contains_excluded(KOSHER_EXCLUDED));
        let horse_only = item("d", &["horse radish"], &[]);
        assert!(!horse_only.contains_excluded(KOSHER_EXCLUDED));
        let wine = item("e", &["ethyl alcohol"], &[]);
        assert!(wine.contains_excluded(HALAL_EXCLUDED));
    }

    #[test]
    fn no_restrictions_keeps_everything() {
        let items = vec![
            item("a", &["pork"], &[]),
            item("b", &["blood"], &[DietType::Vegan]),
        ];
        let catalog = Catalog::from_items(items, DietType::NoRestrictions).unwrap();
        assert_eq!(catalog.len(), 2);
    }

    #[test]
    fn vegetarian_requires_tag() {
        let items = vec![
            item("a", &["tofu"], &[DietType::Vegetarian, DietType::Vegan]),
            item("b", &["tofu"], &[]),
        ];
        let catalog = Catalog::from_items(items, DietType::Vegetarian).unwrap();
        assert_eq!(catalog.len(), 1);
    }

    #[test]
    fn missing_calories_rejected_and_counted() {
        let text = concat!(
            r#"{"id":"a","name":"A","image_url":"u","ingredients":["x"],"calories":1,"protein":2,"fat":3}"#,
            "\n",
            r#"{"id":"b","name":"B","image_url":"u","ingredients":["x"],"protein":2,"fat":3}"#,
            "\n",
            r#"{"id":"c","name":"C","image_url":"u","ingredients":["x"],"calories":-1,"protein":2,"fat":3}"#,
            "\n",
            r#"{"id":"d","name":"D","ingredients":["x"],"calories":1,"protein":2,"fat":3}"#,
            "\n",
        );
        let catalog = Catalog::parse(text, DietType::NoRestrictions).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(catalog.report().records, 4);
        assert_eq!(catalog.report().missing_nutrition, 2);
        assert_eq!(catalog.report().missing_image, 1);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"id\":\"a\",\"image_url\":\"u\",\"calories\":1,\"protein\":1,\"fat\":1}\n\nnot json\n";
        match Catalog::parse(text, DietType::NoRestrictions) {
            Err(CatalogError::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_after_filter() {
        let items = vec![item("a", &["pork chop"], &[])];
        assert!(matches!(
            Catalog::from_items(items, DietType::Halal),
            Err(CatalogError::EmptyAfterFilter(DietType::Halal))
        ));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            load_catalog("/nonexistent/catalog.jsonl", DietType::Vegan),
            Err(CatalogError::FileUnreadable { .. })
        ));
    }

    #[test]
    fn items_sorted_by_id() {
        let items = vec![item("c", &[], &[]), item("a", &[], &[]), item("b", &[], &[])];
        let catalog = Catalog::from_items(items, DietType::NoRestrictions).unwrap();
        let ids: Vec<_> = catalog.items().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(catalog.index_of("b"), Some(1));
    }

    #[test]
    fn diet_parse() {
        assert_eq!("Kosher".parse::<DietType>().unwrap(), DietType::Kosher);
        assert_eq!("no restrictions".parse::<DietType>().unwrap(), DietType::NoRestrictions);
        assert!("paleo".parse::<DietType>().is_err());
    }

    #[test]
    fn json_lines_round_trip() {
        let items = vec![item("a", &["rice"], &[DietType::Vegan]), item("b", &["pork"], &[])];
        let catalog = Catalog::from_items(items, DietType::NoRestrictions).unwrap();
        let again = Catalog::parse(&catalog.to_json_lines(), DietType::NoRestrictions).unwrap();
        assert_eq!(again.items(), catalog.items());
    }
}
