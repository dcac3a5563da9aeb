#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use tastebud::catalog::{encode_rows, items_to_json_lines};
use tastebud::synthetic::{SyntheticData, SyntheticSpec};
use tastebud_service::{Clock, Engines, Service, ServiceConfig};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
    pub engines: Arc<Engines>,
    pub now: Arc<AtomicU64>,
}

pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = SyntheticData::generate(spec);
    let catalog = dir.join("catalog.jsonl");
    let embeddings = dir.join("embeddings.bin");
    std::fs::write(&catalog, items_to_json_lines(&data.items)).unwrap();
    let rows = data.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()));
    std::fs::write(&embeddings, encode_rows(data.dim, rows)).unwrap();
    (catalog, embeddings)
}

pub fn fixture_with(items: usize, tweak: impl FnOnce(&mut ServiceConfig)) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        items,
        dim: 16,
        clusters: 8,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let (catalog, embeddings) = write_synthetic(dir.path(), &spec);
    let mut config = ServiceConfig::new(catalog, embeddings);
    config.data_dir = dir.path().join("sessions");
    config.pool_size = 100;
    config.seed = 5;
    tweak(&mut config);
    config.validate().unwrap();
    let engines = Arc::new(
        Engines::load(&config.catalog_path, &config.embeddings_path, &config.diets, &config.kernel()).unwrap(),
    );
    Fixture {
        dir,
        config,
        engines,
        now: Arc::new(AtomicU64::new(1_000_000)),
    }
}

pub fn fixture() -> Fixture {
    fixture_with(400, |_| {})
}

impl Fixture {
    pub fn clock(&self) -> Clock {
        let now = self.now.clone();
        Arc::new(move || now.load(Ordering::SeqCst))
    }

    pub fn advance_ms(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn service(&self) -> Service {
        Service::new(self.config.clone(), self.engines.clone(), self.clock()).unwrap()
    }

    /// A service over the same data directory with a modified config.
    pub fn service_with(&self, tweak: impl FnOnce(&mut ServiceConfig)) -> Service {
        let mut config = self.config.clone();
        tweak(&mut config);
        Service::new(config, self.engines.clone(), self.clock()).unwrap()
    }
}

pub fn profile(diet: &str) -> serde_json::Value {
    serde_json::json!({
        "diet": diet,
        "calories": "reduce",
        "protein": "increase",
        "fat": "maintain",
    })
}
