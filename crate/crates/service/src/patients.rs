//! Fixture directory of patient bundles. Each `*.json` file holds one record or
//! an array of records; each `*.jsonl` file holds one record per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gib_core::cohort::PatientRecord;
use gib_core::Error;

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Default)]
pub struct PatientDirectory {
    records: BTreeMap<String, PatientRecord>,
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum Bundle {
    One(Box<PatientRecord>),
    Many(Vec<PatientRecord>),
}

impl PatientDirectory {
    pub fn load(dir: &Path) -> ServiceResult<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut out = PatientDirectory::default();
        for path in paths {
            let parsed: Vec<PatientRecord> = match path.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let text = fs::read_to_string(&path).map_err(Error::from)?;
                    match serde_json::from_str::<Bundle>(&text) {
                        Ok(Bundle::One(r)) => vec![*r],
                        Ok(Bundle::Many(v)) => v,
                        // catalog.json and other non-patient files sit alongside cohort records
                        Err(_) => {
                            log::debug!("skipping {}: not a patient bundle", path.display());
                            continue;
                        }
                    }
                }
                Some("jsonl") => fs::read_to_string(&path)
                    .map_err(Error::from)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| serde_json::from_str(l).map_err(|e| Error::Schema(format!("{}: {e}", path.display()))))
                    .collect::<Result<_, _>>()?,
                _ => continue,
            };
            for r in parsed {
                out.insert(r)?;
            }
        }
        log::info!("loaded {} patients from {}", out.len(), dir.display());
        Ok(out)
    }

    pub fn insert(&mut self, record: PatientRecord) -> ServiceResult<()> {
        record.validate()?;
        if self.records.contains_key(&record.id) {
            return Err(ServiceError::Config(format!("duplicate patient id {}", record.id)));
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PatientRecord> {
        self.records.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
