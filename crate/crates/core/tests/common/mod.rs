#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use gib_core::cohort::{generate_cohort, CohortSpec, PatientRecord};
use gib_core::forest::ForestParams;
use gib_core::guidelines::{ingest_guidelines, HashingEmbedder, VectorStore};
use gib_core::model::{RiskEngine, RiskModel, TrainingConfig};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_patients() -> Vec<PatientRecord> {
    serde_json::from_str(&std::fs::read_to_string(fixture_path("patients.json")).unwrap()).unwrap()
}

pub fn patient(id: &str) -> PatientRecord {
    fixture_patients().into_iter().find(|p| p.id == id).unwrap()
}

pub fn fixture_model() -> &'static RiskModel {
    static MODEL: OnceLock<RiskModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let spec = CohortSpec::synthetic(1500, 2024, 0.3);
        let records = generate_cohort(&spec).unwrap();
        let config = TrainingConfig {
            forest: ForestParams { num_trees: 80, seed: 17, ..Default::default() },
            ..Default::default()
        };
        RiskModel::train(&records, &spec.feature_catalog, &config).unwrap()
    })
}

pub fn fixture_engine() -> Arc<RiskEngine> {
    Arc::new(RiskEngine::new(fixture_model().clone()).unwrap())
}

pub fn fixture_store() -> Arc<VectorStore> {
    let doc = std::fs::read_to_string(fixture_path("ugib_guideline.md")).unwrap();
    Arc::new(ingest_guidelines(&doc, &HashingEmbedder::default()).unwrap())
}
