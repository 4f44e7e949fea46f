//! Patient schema, feature catalog and the seeded synthetic cohort generator.
//!
//! The catalog order is the canonical feature order used by every downstream
//! stage (selection, forest, plots, tie-breaking).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATALOG_FILE: &str = "catalog.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const COHORT_FORMAT: &str = "cohort-v1";

const MAX_AGE: u32 = 120;
// Draws used to solve for the ground-truth intercept. Fixed so that cohorts
// with different seeds share one generating distribution.
const INTERCEPT_SAMPLE: usize = 20_000;
const INTERCEPT_SEED: u64 = 0x5EED_1D75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

/// One patient's covariates plus the optional composite outcome
/// (1 = transfusion, endoscopic/hemostatic intervention, or 30-day death).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    #[serde(default)]
    pub nursing: BTreeMap<String, f64>,
    #[serde(default)]
    pub labs: BTreeMap<String, f64>,
    #[serde(default)]
    pub history_ccs: BTreeSet<String>,
    #[serde(default)]
    pub meds_ccs: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.age > MAX_AGE {
            return Err(Error::Validation(format!(
                "patient {}: age {} exceeds {MAX_AGE}",
                self.id, self.age
            )));
        }
        for (name, v) in self.nursing.iter().chain(self.labs.iter()) {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "patient {}: {name} is not finite",
                    self.id
                )));
            }
        }
        if let Some(o) = self.outcome {
            if o > 1 {
                return Err(Error::Validation(format!(
                    "patient {}: outcome {o} is not binary",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    BinaryCcs,
}

/// Where a feature's value lives on a [`PatientRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    Demographics,
    Nursing,
    Labs,
    History,
    Meds,
}

impl FeatureBlock {
    pub fn is_ccs(self) -> bool {
        matches!(self, FeatureBlock::History | FeatureBlock::Meds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Sampling {
    /// Clipped normal; `integer` rounds the draw.
    Normal {
        mean: f64,
        sd: f64,
        min: f64,
        max: f64,
        #[serde(default)]
        integer: bool,
    },
    Bernoulli { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub block: FeatureBlock,
    /// Vital or lab name, CCS code, or `age` / `sex` for demographics.
    pub source: String,
    pub sampling: Sampling,
}

impl FeatureDef {
    pub fn numeric(name: &str, block: FeatureBlock, mean: f64, sd: f64, min: f64, max: f64) -> Self {
        FeatureDef {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            block,
            source: name.to_string(),
            sampling: Sampling::Normal {
                mean,
                sd,
                min,
                max,
                integer: false,
            },
        }
    }

    pub fn ccs(prefix: &str, code: &str, block: FeatureBlock, rate: f64) -> Self {
        FeatureDef {
            name: format!("{prefix}_{code}"),
            kind: FeatureKind::BinaryCcs,
            block,
            source: code.to_string(),
            sampling: Sampling::Bernoulli { rate },
        }
    }

    /// Indicator-valued features (CCS codes and bernoulli demographics).
    pub fn is_binary(&self) -> bool {
        self.kind == FeatureKind::BinaryCcs || matches!(self.sampling, Sampling::Bernoulli { .. })
    }

    /// Ground-truth scale: normals are z-scored, indicators taken as-is.
    fn standardize(&self, x: f64) -> f64 {
        match self.sampling {
            Sampling::Normal { mean, sd, .. } => (x - mean) / sd,
            Sampling::Bernoulli { .. } => x,
        }
    }
}

pub fn feature_index(catalog: &[FeatureDef], name: &str) -> Option<usize> {
    catalog.iter().position(|f| f.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub seed: u64,
    pub prevalence_target: f64,
    pub feature_catalog: Vec<FeatureDef>,
    /// Sparse logistic coefficients on the standardized feature scale.
    pub ground_truth: BTreeMap<String, f64>,
}

impl CohortSpec {
    /// Synthetic cohort over [`default_catalog`] with [`default_ground_truth`].
    pub fn synthetic(n: usize, seed: u64, prevalence_target: f64) -> Self {
        CohortSpec {
            n,
            seed,
            prevalence_target,
            feature_catalog: default_catalog(),
            ground_truth: default_ground_truth(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("cohort size n must be positive".into()));
        }
        if self.feature_catalog.is_empty() {
            return Err(Error::Validation("feature catalog is empty".into()));
        }
        if !(self.prevalence_target > 0.0 && self.prevalence_target < 1.0) {
            return Err(Error::Validation(format!(
                "prevalence target {} outside (0, 1)",
                self.prevalence_target
            )));
        }
        validate_catalog(&self.feature_catalog)?;
        for (name, coef) in &self.ground_truth {
            if feature_index(&self.feature_catalog, name).is_none() {
                return Err(Error::Validation(format!(
                    "ground truth references uncataloged feature {name}"
                )));
            }
            if !coef.is_finite() {
                return Err(Error::Validation(format!("coefficient for {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Intercept that makes the generator's marginal outcome rate equal the
    /// prevalence target, found by bisection over a fixed auxiliary sample.
    pub fn intercept(&self) -> Result<f64> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(INTERCEPT_SEED);
        let etas: Vec<f64> = (0..INTERCEPT_SAMPLE)
            .map(|_| {
                let row = self.sample_values(&mut rng);
                self.linear_predictor(&row)
            })
            .collect();
        Ok(solve_intercept(&etas, self.prevalence_target))
    }

    fn coefficient_vector(&self) -> Vec<f64> {
        self.feature_catalog
            .iter()
            .map(|f| self.ground_truth.get(&f.name).copied().unwrap_or(0.0))
            .collect()
    }

    fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.feature_catalog
            .iter()
            .zip(self.coefficient_vector())
            .zip(row)
            .map(|((f, c), &x)| c * f.standardize(x))
            .sum()
    }

    fn sample_values(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.feature_catalog
            .iter()
            .map(|f| match f.sampling {
                Sampling::Normal {
                    mean,
                    sd,
                    min,
                    max,
                    integer,
                } => {
                    let draw = Normal::new(mean, sd)
                        .expect("validated sd")
                        .sample(rng)
                        .clamp(min, max);
                    if integer {
                        draw.round()
                    } else {
                        draw
                    }
                }
                Sampling::Bernoulli { rate } => {
                    if rng.random::<f64>() < rate {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }

    /// Ground-truth outcome probability for an encoded row.
    pub fn true_probability(&self, row: &[f64], intercept: f64) -> f64 {
        sigmoid(intercept + self.linear_predictor(row))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn solve_intercept(etas: &[f64], target: f64) -> f64 {
    let rate = |b: f64| etas.iter().map(|e| sigmoid(e + b)).sum::<f64>() / etas.len() as f64;
    let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn validate_catalog(catalog: &[FeatureDef]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in catalog {
        if !seen.insert(f.name.as_str()) {
            return Err(Error::Validation(format!("duplicate feature {}", f.name)));
        }
        match (&f.sampling, f.kind) {
            (Sampling::Normal { sd, min, max, mean, .. }, FeatureKind::Numeric) => {
                if !(*sd > 0.0 && min <= max && mean.is_finite()) {
                    return Err(Error::Validation(format!(
                        "feature {}: invalid normal sampling range",
                        f.name
                    )));
                }
            }
            (Sampling::Bernoulli { rate }, _) => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Validation(format!(
                        "feature {}: rate {rate} outside [0, 1]",
                        f.name
                    )));
                }
            }
            (Sampling::Normal { .. }, FeatureKind::BinaryCcs) => {
                return Err(Error::Validation(format!(
                    "feature {}: CCS indicators must use bernoulli sampling",
                    f.name
                )));
            }
        }
        if f.block.is_ccs() != (f.kind == FeatureKind::BinaryCcs) {
            return Err(Error::Validation(format!(
                "feature {}: kind does not match block",
                f.name
            )));
        }
    }
    Ok(())
}

/// Generates `spec.n` records. Covariates are drawn first, then outcomes, all
/// from one seeded stream, so the output is a pure function of `spec`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<PatientRecord>> {
    let intercept = spec.intercept()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<Vec<f64>> = (0..spec.n).map(|_| spec.sample_values(&mut rng)).collect();
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let p = spec.true_probability(row, intercept);
            let outcome = u8::from(rng.random::<f64>() < p);
            let mut record = decode_row(&format!("P{i:05}"), row, &spec.feature_catalog)?;
            record.outcome = Some(outcome);
            Ok(record)
        })
        .collect()
}

/// Builds a record from a catalog-ordered value row (indicators > 0.5 are present).
pub fn decode_row(id: &str, row: &[f64], catalog: &[FeatureDef]) -> Result<PatientRecord> {
    let mut record = PatientRecord {
        id: id.to_string(),
        age: 0,
        sex: Sex::Female,
        nursing: BTreeMap::new(),
        labs: BTreeMap::new(),
        history_ccs: BTreeSet::new(),
        meds_ccs: BTreeSet::new(),
        outcome: None,
    };
    for (f, &v) in catalog.iter().zip(row) {
        set_feature(&mut record, f, v)?;
    }
    Ok(record)
}

/// Writes one feature value onto a record, the inverse of encoding.
pub fn set_feature(record: &mut PatientRecord, f: &FeatureDef, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Validation(format!("{} value is not finite", f.name)));
    }
    match f.block {
        FeatureBlock::Demographics => match f.source.as_str() {
            "age" => record.age = v.round().clamp(0.0, MAX_AGE as f64) as u32,
            "sex" => record.sex = if v >= 0.5 { Sex::Male } else { Sex::Female },
            other => return Err(Error::Schema(format!("unknown demographic feature {other}"))),
        },
        FeatureBlock::Nursing => {
            record.nursing.insert(f.source.clone(), v);
        }
        FeatureBlock::Labs => {
            record.labs.insert(f.source.clone(), v);
        }
        FeatureBlock::History | FeatureBlock::Meds => {
            let set = if f.block == FeatureBlock::History {
                &mut record.history_ccs
            } else {
                &mut record.meds_ccs
            };
            if v >= 0.5 {
                set.insert(f.source.clone());
            } else {
                set.remove(&f.source);
            }
        }
    }
    Ok(())
}

/// Encodes a record in catalog order; `None` marks a missing numeric value.
/// CCS indicators are never missing: absence encodes as 0.
pub fn encode_partial(record: &PatientRecord, catalog: &[FeatureDef]) -> Result<Vec<Option<f64>>> {
    catalog
        .iter()
        .map(|f| match f.block {
            FeatureBlock::Demographics => match f.source.as_str() {
                "age" => Ok(Some(f64::from(record.age))),
                "sex" => Ok(Some(if record.sex == Sex::Male { 1.0 } else { 0.0 })),
                other => Err(Error::Schema(format!("unknown demographic feature {other}"))),
            },
            FeatureBlock::Nursing => Ok(record.nursing.get(&f.source).copied()),
            FeatureBlock::Labs => Ok(record.labs.get(&f.source).copied()),
            FeatureBlock::History => Ok(Some(indicator(&record.history_ccs, &f.source))),
            FeatureBlock::Meds => Ok(Some(indicator(&record.meds_ccs, &f.source))),
        })
        .collect()
}

fn indicator(codes: &BTreeSet<String>, code: &str) -> f64 {
    if codes.contains(code) {
        1.0
    } else {
        0.0
    }
}

/// Encodes a fully observed record; a missing numeric value is a schema error.
pub fn encode_features(record: &PatientRecord, catalog: &[FeatureDef]) -> Result<Vec<f64>> {
    encode_partial(record, catalog)?
        .into_iter()
        .zip(catalog)
        .map(|(v, f)| {
            v.ok_or_else(|| {
                Error::Schema(format!("patient {} is missing {}", record.id, f.name))
            })
        })
        .collect()
}

/// Encodes with missing numeric values replaced by `medians` (catalog order).
pub fn encode_imputed(
    record: &PatientRecord,
    catalog: &[FeatureDef],
    medians: &[f64],
) -> Result<Vec<f64>> {
    if medians.len() != catalog.len() {
        return Err(Error::Schema(format!(
            "{} medians for {} features",
            medians.len(),
            catalog.len()
        )));
    }
    Ok(encode_partial(record, catalog)?
        .into_iter()
        .zip(medians)
        .map(|(v, &m)| v.unwrap_or(m))
        .collect())
}

/// Per-column medians of an encoded matrix (midpoint for even counts).
pub fn column_medians(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if col.is_empty() {
                return 0.0;
            }
            col.sort_by(f64::total_cmp);
            let m = col.len() / 2;
            if col.len() % 2 == 1 {
                col[m]
            } else {
                0.5 * (col[m - 1] + col[m])
            }
        })
        .collect()
}

/// Header stored next to the records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortHeader {
    pub format: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub prevalence_target: Option<f64>,
    pub features: Vec<FeatureDef>,
    #[serde(default)]
    pub ground_truth: BTreeMap<String, f64>,
}

impl CohortHeader {
    pub fn from_spec(spec: &CohortSpec) -> Self {
        CohortHeader {
            format: COHORT_FORMAT.to_string(),
            n: spec.n,
            seed: Some(spec.seed),
            prevalence_target: Some(spec.prevalence_target),
            features: spec.feature_catalog.clone(),
            ground_truth: spec.ground_truth.clone(),
        }
    }
}

pub fn write_cohort(dir: &Path, header: &CohortHeader, records: &[PatientRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CATALOG_FILE), serde_json::to_string_pretty(header)?)?;
    let mut out = BufWriter::new(File::create(dir.join(RECORDS_FILE))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort(dir: &Path) -> Result<(CohortHeader, Vec<PatientRecord>)> {
    let header: CohortHeader = serde_json::from_str(&fs::read_to_string(dir.join(CATALOG_FILE))?)?;
    if header.format != COHORT_FORMAT {
        return Err(Error::Schema(format!("unsupported cohort format {}", header.format)));
    }
    validate_catalog(&header.features)?;
    let file = BufReader::new(File::open(dir.join(RECORDS_FILE))?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line)?;
        record.validate()?;
        records.push(record);
    }
    Ok((header, records))
}

pub const HISTORY_CODES: [&str; 20] = [
    "96", "98", "100", "101", "106", "108", "109", "122", "127", "138", "139", "140", "149", "150",
    "151", "153", "155", "158", "211", "657",
];

pub const MED_CLASSES: [&str; 12] = [
    "anticoagulants",
    "antiplatelets",
    "nsaids",
    "ppi",
    "ssri",
    "beta_blockers",
    "statins",
    "diuretics",
    "insulin",
    "opioids",
    "corticosteroids",
    "antibiotics",
];

/// Representative stand-in catalog: demographics, five vitals, five labs,
/// 20 history CCS indicators and 12 medication-class indicators.
pub fn default_catalog() -> Vec<FeatureDef> {
    use FeatureBlock::*;
    let mut catalog = vec![
        FeatureDef {
            name: "age".into(),
            kind: FeatureKind::Numeric,
            block: Demographics,
            source: "age".into(),
            sampling: Sampling::Normal {
                mean: 64.0,
                sd: 16.0,
                min: 18.0,
                max: 100.0,
                integer: true,
            },
        },
        FeatureDef {
            name: "sex".into(),
            kind: FeatureKind::Numeric,
            block: Demographics,
            source: "sex".into(),
            sampling: Sampling::Bernoulli { rate: 0.5 },
        },
        FeatureDef::numeric("systolic_bp", Nursing, 125.0, 22.0, 60.0, 220.0),
        FeatureDef::numeric("heart_rate", Nursing, 88.0, 18.0, 35.0, 180.0),
        FeatureDef::numeric("resp_rate", Nursing, 18.0, 4.0, 8.0, 40.0),
        FeatureDef::numeric("temperature", Nursing, 36.8, 0.5, 34.0, 41.0),
        FeatureDef::numeric("oxygen_saturation", Nursing, 96.0, 2.5, 70.0, 100.0),
        FeatureDef::numeric("hemoglobin", Labs, 12.0, 2.4, 3.0, 20.0),
        FeatureDef::numeric("bun", Labs, 24.0, 12.0, 2.0, 150.0),
        FeatureDef::numeric("inr", Labs, 1.2, 0.35, 0.7, 6.0),
        FeatureDef::numeric("platelets", Labs, 230.0, 70.0, 10.0, 700.0),
        FeatureDef::numeric("creatinine", Labs, 1.1, 0.5, 0.3, 10.0),
    ];
    for (i, code) in HISTORY_CODES.iter().enumerate() {
        let rate = 0.08 + 0.02 * (i % 8) as f64;
        catalog.push(FeatureDef::ccs("hx", code, History, rate));
    }
    for (i, class) in MED_CLASSES.iter().enumerate() {
        let rate = 0.10 + 0.03 * (i % 6) as f64;
        catalog.push(FeatureDef::ccs("med", class, Meds, rate));
    }
    catalog
}

/// Strong-signal sparse ground truth: six numeric drivers, three history
/// codes and two medication classes; the other 27 CCS indicators are null.
pub fn default_ground_truth() -> BTreeMap<String, f64> {
    [
        ("hemoglobin", -1.8),
        ("bun", 1.3),
        ("systolic_bp", -1.1),
        ("heart_rate", 1.0),
        ("inr", 0.6),
        ("age", 0.5),
        ("hx_153", 2.0),
        ("hx_150", 1.9),
        ("hx_139", 2.0),
        ("med_anticoagulants", 1.6),
        ("med_antiplatelets", 1.3),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
