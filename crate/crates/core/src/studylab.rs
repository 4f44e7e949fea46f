//! Survey and assessment arithmetic for simulation studies: Cronbach's alpha,
//! per-arm pre/post construct summaries, and percent-correct scoring.
//!
//! Variances are population (divide by n) throughout.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            other => Err(Error::Schema(format!("unknown phase {other:?}"))),
        }
    }
}

/// Respondents × items Likert responses for one construct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertMatrix {
    pub construct: String,
    pub arm: Option<String>,
    pub phase: Option<Phase>,
    pub items: Vec<String>,
    pub responses: Vec<Vec<i32>>,
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// n² times the population variance, computed exactly on integers.
fn scaled_variance(values: impl Iterator<Item = i64> + Clone) -> i128 {
    let n = values.clone().count() as i128;
    let sum: i128 = values.clone().map(i128::from).sum();
    let sum_sq: i128 = values.map(|v| i128::from(v) * i128::from(v)).sum();
    n * sum_sq - sum * sum
}

/// α = k/(k−1) · (1 − Σ item variances / variance of row sums).
///
/// Variances are population variances; the shared 1/n² factor cancels, so the
/// ratio is formed from exact integer sums.
pub fn cronbach_alpha(m: &LikertMatrix) -> Result<f64> {
    let k = m.items.len();
    if k < 2 {
        return Err(Error::Validation("alpha needs at least two items".into()));
    }
    if m.responses.len() < 2 {
        return Err(Error::Validation("alpha needs at least two respondents".into()));
    }
    if m.responses.iter().any(|r| r.len() != k) {
        return Err(Error::Schema("response row width does not match item count".into()));
    }
    let item_var: i128 = (0..k)
        .map(|j| scaled_variance(m.responses.iter().map(move |r| i64::from(r[j]))))
        .sum();
    let total_var = scaled_variance(m.responses.iter().map(|r| r.iter().map(|&v| i64::from(v)).sum::<i64>()));
    if total_var == 0 {
        return Err(Error::Degenerate("total score variance is zero; alpha undefined".into()));
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var as f64 / total_var as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::MissingCell("no responses in cell".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = population_variance(values.iter().copied()).sqrt();
        Ok(Summary {
            mean,
            sd,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrePost {
    pub construct: String,
    pub arm: String,
    pub pre: Summary,
    pub post: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub respondent: Option<String>,
    pub arm: String,
    pub phase: Phase,
    /// `None` for blank cells.
    pub values: Vec<Option<i32>>,
}

/// One row per respondent-phase; `arm` and `phase` columns plus item columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTable {
    pub items: Vec<String>,
    pub rows: Vec<SurveyRow>,
}

const RESERVED: [&str; 4] = ["arm", "phase", "respondent", "id"];

impl SurveyTable {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let arm_col = col("arm").ok_or_else(|| Error::Schema("CSV lacks an arm column".into()))?;
        let phase_col = col("phase").ok_or_else(|| Error::Schema("CSV lacks a phase column".into()))?;
        let respondent_col = col("respondent").or_else(|| col("id"));
        let item_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| !RESERVED.iter().any(|r| headers[i].eq_ignore_ascii_case(r)))
            .collect();
        let items = item_cols.iter().map(|&i| headers[i].to_string()).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let values = item_cols
                .iter()
                .map(|&i| {
                    let cell = record.get(i).unwrap_or("");
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<i32>()
                            .map(Some)
                            .map_err(|_| Error::Schema(format!("non-integer response {cell:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(SurveyRow {
                respondent: respondent_col.and_then(|i| record.get(i)).map(str::to_string),
                arm: record.get(arm_col).unwrap_or("").to_string(),
                phase: record.get(phase_col).unwrap_or("").parse()?,
                values,
            });
        }
        Ok(SurveyTable { items, rows })
    }

    /// Item columns whose id starts with `prefix` (the construct mapping
    /// convention when no explicit list is given).
    pub fn items_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.items.iter().filter(|i| i.starts_with(prefix)).cloned().collect()
    }

    pub fn arms(&self) -> Vec<String> {
        let mut arms: Vec<String> = self.rows.iter().map(|r| r.arm.clone()).collect();
        arms.sort();
        arms.dedup();
        arms
    }

    fn item_indices(&self, items: &[String]) -> Result<Vec<usize>> {
        items
            .iter()
            .map(|it| {
                self.items
                    .iter()
                    .position(|x| x == it)
                    .ok_or_else(|| Error::Schema(format!("unknown item {it}")))
            })
            .collect()
    }

    /// Construct matrix filtered by arm / phase, with listwise deletion of
    /// respondents missing any of the construct's items.
    pub fn likert_matrix(&self, construct: &str, items: &[String], arm: Option<&str>, phase: Option<Phase>) -> Result<LikertMatrix> {
        let idx = self.item_indices(items)?;
        let responses = self
            .rows
            .iter()
            .filter(|r| arm.is_none_or(|a| r.arm == a) && phase.is_none_or(|p| r.phase == p))
            .filter_map(|r| idx.iter().map(|&i| r.values[i]).collect::<Option<Vec<i32>>>())
            .collect();
        Ok(LikertMatrix {
            construct: construct.to_string(),
            arm: arm.map(str::to_string),
            phase,
            items: items.to_vec(),
            responses,
        })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Schema(format!("CSV: {e}"))
}

/// Mean construct score (per-respondent item mean) before and after, for one arm.
pub fn aggregate_prepost(table: &SurveyTable, construct: &str, items: &[String], arm: &str) -> Result<PrePost> {
    let cell = |phase| -> Result<Summary> {
        let m = table.likert_matrix(construct, items, Some(arm), Some(phase))?;
        let scores: Vec<f64> = m
            .responses
            .iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).sum::<f64>() / r.len() as f64)
            .collect();
        Summary::of(&scores).map_err(|_| {
            Error::MissingCell(format!("no complete {construct} responses for arm {arm}, phase {phase:?}"))
        })
    };
    Ok(PrePost {
        construct: construct.to_string(),
        arm: arm.to_string(),
        pre: cell(Phase::Pre)?,
        post: cell(Phase::Post)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSheet {
    pub respondent: String,
    pub answers: Vec<String>,
    pub key: Vec<String>,
    pub arm: String,
    pub phase: Phase,
}

/// 100 · matches / |key|.
pub fn score_assessment(sheet: &AssessmentSheet) -> Result<f64> {
    if sheet.answers.len() != sheet.key.len() {
        return Err(Error::Schema(format!(
            "{} answers for a {}-question key",
            sheet.answers.len(),
            sheet.key.len()
        )));
    }
    if sheet.key.is_empty() {
        return Err(Error::Validation("empty answer key".into()));
    }
    let matches = sheet.answers.iter().zip(&sheet.key).filter(|(a, k)| a == k).count();
    Ok(100.0 * matches as f64 / sheet.key.len() as f64)
}
