//! End-to-end risk model: block-wise LASSO screening of the CCS indicators,
//! an honest forest over the kept features, and the held-out 99%-sensitivity
//! threshold. [`RiskModel`] is the versioned JSON artifact; [`RiskEngine`]
//! adds the per-load caches used to build patient reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, classify_risk, Calibration, RiskClass, DEFAULT_SENSITIVITY};
use crate::cohort::{
    encode_imputed, encode_partial, feature_index, set_feature, FeatureBlock, FeatureDef, PatientRecord,
};
use crate::error::{Error, Result};
use crate::explain::{
    feature_histogram, CurveKind, CurveSeries, Explainer, Histogram, ImportanceRanking, SimilarCohort, TrainingLeaves,
    DEFAULT_COHORT_SIZE, DEFAULT_TOP_K,
};
use crate::forest::{train_forest, ForestParams, HonestForest};
use crate::lasso::select_block_features;

pub const ARTIFACT_FORMAT: &str = "gib-risk-model/1";
pub const CALIBRATION_FRACTION: f64 = 0.2;
pub const SPLIT_SEED: u64 = 20_231;
/// Rows of the training set used as PDP background for importance ranking.
pub const BACKGROUND_CAP: usize = 1000;
pub const HISTOGRAM_BINS: usize = 20;
/// Training rows drawn (seeded) for a standalone ICE plot.
pub const ICE_ROW_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub forest: ForestParams,
    pub calibration_fraction: f64,
    pub split_seed: u64,
    pub target_sensitivity: f64,
    /// Overrides the default cross-validated LASSO grid.
    pub lambda_grid: Option<Vec<f64>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            forest: ForestParams::default(),
            calibration_fraction: CALIBRATION_FRACTION,
            split_seed: SPLIT_SEED,
            target_sensitivity: DEFAULT_SENSITIVITY,
            lambda_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub format: String,
    pub cohort_catalog: Vec<FeatureDef>,
    /// Forest input features: every non-CCS feature plus the LASSO-kept
    /// CCS indicators, in cohort catalog order.
    pub features: Vec<FeatureDef>,
    pub selected_history: Vec<String>,
    pub selected_meds: Vec<String>,
    pub medians: Vec<f64>,
    pub forest: HonestForest,
    pub calibration: Calibration,
    pub training: TrainingSet,
}

/// Splits indices into (fit, calibration) with a seeded shuffle.
pub fn calibration_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64) * fraction).round() as usize;
    let mut calibration = order[..held].to_vec();
    let mut fit = order[held..].to_vec();
    calibration.sort_unstable();
    fit.sort_unstable();
    (fit, calibration)
}

fn observed_medians(records: &[&PatientRecord], features: &[FeatureDef]) -> Result<Vec<f64>> {
    let encoded: Vec<Vec<Option<f64>>> =
        records.iter().map(|r| encode_partial(r, features)).collect::<Result<_>>()?;
    Ok((0..features.len())
        .map(|j| {
            let mut col: Vec<f64> = encoded.iter().filter_map(|r| r[j]).collect();
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
        .collect())
}

fn labels(records: &[&PatientRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .map(|r| {
            r.outcome
                .ok_or_else(|| Error::Validation(format!("training record {} has no outcome", r.id)))
        })
        .collect()
}

impl RiskModel {
    pub fn train(records: &[PatientRecord], catalog: &[FeatureDef], config: &TrainingConfig) -> Result<Self> {
        records.iter().try_for_each(PatientRecord::validate)?;
        if !(config.calibration_fraction > 0.0 && config.calibration_fraction < 1.0) {
            return Err(Error::Validation("calibration fraction must lie in (0, 1)".into()));
        }
        let (fit_idx, cal_idx) = calibration_split(records.len(), config.calibration_fraction, config.split_seed);
        let fit_records: Vec<PatientRecord> = fit_idx.iter().map(|&i| records[i].clone()).collect();
        let cal_records: Vec<&PatientRecord> = cal_idx.iter().map(|&i| &records[i]).collect();

        let grid = config.lambda_grid.as_deref();
        let selected_history = select_block_features(&fit_records, catalog, FeatureBlock::History, grid)?;
        let selected_meds = select_block_features(&fit_records, catalog, FeatureBlock::Meds, grid)?;
        let features: Vec<FeatureDef> = catalog
            .iter()
            .filter(|f| !f.block.is_ccs() || selected_history.contains(&f.name) || selected_meds.contains(&f.name))
            .cloned()
            .collect();

        let fit_refs: Vec<&PatientRecord> = fit_records.iter().collect();
        let medians = observed_medians(&fit_refs, &features)?;
        let rows: Vec<Vec<f64>> = fit_refs
            .iter()
            .map(|r| encode_imputed(r, &features, &medians))
            .collect::<Result<_>>()?;
        let y: Vec<f64> = labels(&fit_refs)?.into_iter().map(f64::from).collect();
        let forest = train_forest(&rows, &y, &config.forest)?;

        let cal_rows: Vec<Vec<f64>> = cal_records
            .iter()
            .map(|r| encode_imputed(r, &features, &medians))
            .collect::<Result<_>>()?;
        let cal_preds = forest.predict_batch(&cal_rows)?;
        let calibration =
            calibrate::sensitivity_threshold(&cal_preds, &labels(&cal_records)?, config.target_sensitivity)?;

        Ok(RiskModel {
            format: ARTIFACT_FORMAT.to_string(),
            cohort_catalog: catalog.to_vec(),
            features,
            selected_history,
            selected_meds,
            medians,
            forest,
            calibration,
            training: TrainingSet {
                ids: fit_records.iter().map(|r| r.id.clone()).collect(),
                rows,
            },
        })
    }

    pub fn threshold(&self) -> f64 {
        self.calibration.threshold
    }

    /// Encodes with median imputation for missing numeric values.
    pub fn encode(&self, patient: &PatientRecord) -> Result<Vec<f64>> {
        patient.validate()?;
        encode_imputed(patient, &self.features, &self.medians)
    }

    pub fn predict(&self, patient: &PatientRecord) -> Result<f64> {
        self.forest.predict_risk(&self.encode(patient)?)
    }

    pub fn classify(&self, probability: f64) -> RiskClass {
        classify_risk(probability, self.threshold())
    }

    pub fn evaluate(&self, records: &[PatientRecord]) -> Result<Evaluation> {
        let refs: Vec<&PatientRecord> = records.iter().collect();
        let y = labels(&refs)?;
        let rows: Vec<Vec<f64>> = records.iter().map(|r| self.encode(r)).collect::<Result<_>>()?;
        let preds = self.forest.predict_batch(&rows)?;
        let (sensitivity, specificity) = calibrate::rates(&preds, &y, self.threshold());
        Ok(Evaluation {
            n: records.len(),
            prevalence: y.iter().map(|&l| f64::from(l)).sum::<f64>() / records.len().max(1) as f64,
            auc: calibrate::auc(&preds, &y).ok(),
            threshold: self.threshold(),
            sensitivity,
            specificity,
            calibration: self.calibration.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RiskModel = serde_json::from_str(text)?;
        if model.format != ARTIFACT_FORMAT {
            return Err(Error::Schema(format!("unsupported artifact format {}", model.format)));
        }
        if model.features.len() != model.forest.num_features || model.medians.len() != model.features.len() {
            return Err(Error::Schema("artifact feature catalog does not match its forest".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Applies `overrides` (feature name → value) to a copy of the patient.
    /// Names may refer to any cohort catalog feature.
    pub fn apply_overrides(&self, patient: &PatientRecord, overrides: &BTreeMap<String, f64>) -> Result<PatientRecord> {
        let mut copy = patient.clone();
        for (name, &value) in overrides {
            let j = feature_index(&self.cohort_catalog, name)
                .ok_or_else(|| Error::Schema(format!("unknown feature {name}")))?;
            set_feature(&mut copy, &self.cohort_catalog[j], value)?;
        }
        Ok(copy)
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            format: self.format.clone(),
            features: self.features.iter().map(|f| f.name.clone()).collect(),
            selected_history: self.selected_history.clone(),
            selected_meds: self.selected_meds.clone(),
            threshold: self.threshold(),
            auc: self.calibration.auc,
            calibration: self.calibration.clone(),
            num_trees: self.forest.trees.len(),
            training_rows: self.training.rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub prevalence: f64,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: Option<f64>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format: String,
    pub features: Vec<String>,
    pub selected_history: Vec<String>,
    pub selected_meds: Vec<String>,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub calibration: Calibration,
    pub num_trees: usize,
    pub training_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePanel {
    pub feature: String,
    pub patient_value: f64,
    /// First curve is the patient, then one per similar-cohort member.
    pub ice: CurveSeries,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub patient_id: String,
    pub probability: f64,
    pub risk_class: RiskClass,
    pub threshold: f64,
    pub top_features: ImportanceRanking,
    pub similar: SimilarCohort,
    pub panels: Vec<FeaturePanel>,
}

/// Plot query as exposed over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRequest {
    pub kind: CurveKind,
    pub feature: String,
    #[serde(default)]
    pub feature2: Option<String>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub grid2: Option<Vec<f64>>,
    #[serde(default)]
    pub bins: Option<usize>,
}

/// Loaded model plus caches (training leaf paths, importance background).
pub struct RiskEngine {
    model: RiskModel,
    leaves: TrainingLeaves,
    background: Vec<Vec<f64>>,
}

impl RiskEngine {
    pub fn new(model: RiskModel) -> Result<Self> {
        let leaves = TrainingLeaves::new(&model.forest, &model.training.rows)?;
        let n = model.training.rows.len();
        let background = if n <= BACKGROUND_CAP {
            model.training.rows.clone()
        } else {
            let mut picks = index::sample(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED), n, BACKGROUND_CAP).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| model.training.rows[i].clone()).collect()
        };
        if background.is_empty() {
            return Err(Error::InsufficientData("model artifact has no training rows".into()));
        }
        Ok(RiskEngine {
            model,
            leaves,
            background,
        })
    }

    pub fn model(&self) -> &RiskModel {
        &self.model
    }

    /// Explainer over the full training set (plots).
    pub fn explainer(&self) -> Explainer<'_> {
        Explainer {
            forest: &self.model.forest,
            features: &self.model.features,
            data: &self.model.training.rows,
        }
    }

    fn background_explainer(&self) -> Explainer<'_> {
        Explainer {
            forest: &self.model.forest,
            features: &self.model.features,
            data: &self.background,
        }
    }

    pub fn plot(&self, request: &PlotRequest) -> Result<CurveSeries> {
        let explainer = self.explainer();
        match (request.kind, request.feature2.as_deref()) {
            (CurveKind::Pdp, None) => explainer.pdp(&request.feature, request.grid.as_deref()),
            (CurveKind::Pdp, Some(second)) => explainer.pdp2(
                (&request.feature, second),
                (request.grid.as_deref(), request.grid2.as_deref()),
            ),
            (CurveKind::Ice, None) => {
                let (rows, labels) = self.ice_sample();
                explainer.ice(&request.feature, Some(&rows), Some(labels), request.grid.as_deref())
            }
            (CurveKind::Ale, None) => explainer.ale(&request.feature, request.bins),
            (kind, Some(_)) => Err(Error::Unsupported(format!("{kind:?} plots take a single feature"))),
        }
    }

    fn ice_sample(&self) -> (Vec<Vec<f64>>, Vec<String>) {
        let n = self.model.training.rows.len();
        let mut picks: Vec<usize> = if n <= ICE_ROW_CAP {
            (0..n).collect()
        } else {
            index::sample(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED ^ 0x1ce), n, ICE_ROW_CAP).into_vec()
        };
        picks.sort_unstable();
        let rows = picks.iter().map(|&i| self.model.training.rows[i].clone()).collect();
        let labels = picks.iter().map(|&i| self.model.training.ids[i].clone()).collect();
        (rows, labels)
    }

    pub fn predict(&self, patient: &PatientRecord) -> Result<(f64, RiskClass)> {
        let p = self.model.predict(patient)?;
        Ok((p, self.model.classify(p)))
    }

    pub fn top_features(&self, patient: &PatientRecord, k: usize) -> Result<ImportanceRanking> {
        self.background_explainer().top_features(&self.model.encode(patient)?, k)
    }

    pub fn similar_patients(&self, patient: &PatientRecord, n: usize) -> Result<SimilarCohort> {
        let x = self.model.encode(patient)?;
        let path = self.model.forest.leaf_path(&x)?;
        Ok(self.leaves.similar(&path, &self.model.training.ids, n))
    }

    /// Probability, class, top-3 features, and for each of them the ICE
    /// curves of the patient plus its 100 most similar training patients and
    /// a training histogram marked at the patient's value.
    pub fn report(&self, patient: &PatientRecord) -> Result<RiskReport> {
        let x = self.model.encode(patient)?;
        let probability = self.model.forest.predict_risk(&x)?;
        let top = self.background_explainer().top_features(&x, DEFAULT_TOP_K)?;
        let path = self.model.forest.leaf_path(&x)?;
        let similar = self.leaves.similar(&path, &self.model.training.ids, DEFAULT_COHORT_SIZE);
        let mut rows = vec![x.clone()];
        let mut labels = vec![patient.id.clone()];
        for m in &similar.members {
            rows.push(self.model.training.rows[m.training_index].clone());
            labels.push(m.id.clone());
        }
        let explainer = self.explainer();
        let panels = top
            .entries
            .iter()
            .map(|e| {
                let ice = explainer.ice(&e.feature, Some(&rows), Some(labels.clone()), None)?;
                let column: Vec<f64> = self.model.training.rows.iter().map(|r| r[e.index]).collect();
                Ok(FeaturePanel {
                    feature: e.feature.clone(),
                    patient_value: x[e.index],
                    ice,
                    histogram: feature_histogram(&column, x[e.index], HISTOGRAM_BINS)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskReport {
            patient_id: patient.id.clone(),
            probability,
            risk_class: self.model.classify(probability),
            threshold: self.model.threshold(),
            top_features: top,
            similar,
            panels,
        })
    }
}
