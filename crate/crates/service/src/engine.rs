//! Per-diet engines built once at startup and shared read-only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use tastebud::catalog::{
    Catalog, CatalogError, DietType, EmbeddingError, EmbeddingSet, KernelConfig, KernelError,
    KernelParams, LoadReport,
};
use tastebud::elicitation::MIN_CATALOG_SIZE;
use tastebud::recommender::DietEngine;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("embeddings for diet `{diet}`: {source}")]
    Embedding {
        diet: DietType,
        #[source]
        source: EmbeddingError,
    },
    #[error("kernel for diet `{diet}`: {source}")]
    Kernel {
        diet: DietType,
        #[source]
        source: KernelError,
    },
    #[error("no diet could be loaded")]
    NothingLoaded,
}

#[derive(Debug, Clone, Serialize)]
pub struct DietSummary {
    pub diet: DietType,
    pub items: usize,
    pub report: LoadReport,
    pub kernel: Option<KernelParams>,
    pub edges: usize,
    /// Why the diet is unavailable, if it is.
    pub error: Option<String>,
}

/// Engines keyed by diet plus a digest of the input files.
#[derive(Debug)]
pub struct Engines {
    engines: BTreeMap<DietType, DietEngine>,
    summaries: Vec<DietSummary>,
    data_digest: String,
}

fn read(path: &Path) -> Result<Vec<u8>, EngineError> {
    std::fs::read(path).map_err(|source| EngineError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

impl Engines {
    pub fn load(
        catalog_path: &Path,
        embeddings_path: &Path,
        diets: &[DietType],
        kernel: &KernelConfig,
    ) -> Result<Self, EngineError> {
        let catalog_bytes = read(catalog_path)?;
        let embedding_bytes = read(embeddings_path)?;
        let text = String::from_utf8(catalog_bytes.clone()).map_err(|e| {
            EngineError::Catalog(CatalogError::ParseError {
                line: 0,
                message: e.to_string(),
            })
        })?;
        let digest = {
            let mut h = Sha256::new();
            h.update((catalog_bytes.len() as u64).to_le_bytes());
            h.update(&catalog_bytes);
            h.update(&embedding_bytes);
            hex::encode(h.finalize())
        };
        Self::build(&text, &embedding_bytes, diets, kernel, digest)
    }

    /// Builds from in-memory inputs; `digest` identifies them in session
    /// headers.
    pub fn build(
        catalog_text: &str,
        embedding_bytes: &[u8],
        diets: &[DietType],
        kernel: &KernelConfig,
        digest: String,
    ) -> Result<Self, EngineError> {
        let mut engines = BTreeMap::new();
        let mut summaries = Vec::new();
        for &diet in diets {
            let catalog = match Catalog::parse(catalog_text, diet) {
                Ok(c) => c,
                Err(CatalogError::EmptyAfterFilter(_)) => {
                    summaries.push(DietSummary {
                        diet,
                        items: 0,
                        report: LoadReport::default(),
                        kernel: None,
                        edges: 0,
                        error: Some("no items left after filtering".into()),
                    });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let report = catalog.report().clone();
            if catalog.len() < MIN_CATALOG_SIZE {
                summaries.push(DietSummary {
                    diet,
                    items: catalog.len(),
                    report,
                    kernel: None,
                    edges: 0,
                    error: Some(format!("fewer than {MIN_CATALOG_SIZE} items")),
                });
                continue;
            }
            let embeddings = EmbeddingSet::decode(embedding_bytes, &catalog)
                .map_err(|source| EngineError::Embedding { diet, source })?;
            match DietEngine::new(catalog, embeddings, kernel) {
                Ok(engine) => {
                    summaries.push(DietSummary {
                        diet,
                        items: engine.catalog().len(),
                        report,
                        kernel: Some(engine.space().kernel()),
                        edges: engine.space().index().edge_count(),
                        error: None,
                    });
                    engines.insert(diet, engine);
                }
                // too few items for this diet: serve the others
                Err(source @ (KernelError::TooFewItems(_) | KernelError::Degenerate(_))) => {
                    summaries.push(DietSummary {
                        diet,
                        items: report.retained,
                        report,
                        kernel: None,
                        edges: 0,
                        error: Some(source.to_string()),
                    });
                }
                Err(source) => return Err(EngineError::Kernel { diet, source }),
            }
        }
        if engines.is_empty() {
            return Err(EngineError::NothingLoaded);
        }
        Ok(Self {
            engines,
            summaries,
            data_digest: digest,
        })
    }

    pub fn get(&self, diet: DietType) -> Option<&DietEngine> {
        self.engines.get(&diet)
    }

    pub fn diets(&self) -> impl Iterator<Item = DietType> + '_ {
        self.engines.keys().copied()
    }

    pub fn summaries(&self) -> &[DietSummary] {
        &self.summaries
    }

    pub fn data_digest(&self) -> &str {
        &self.data_digest
    }
}
