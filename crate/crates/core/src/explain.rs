//! Interpretability for the honest forest: partial dependence (one or two
//! features), ICE curves, accumulated local effects, PDP-slope importance at a
//! patient's value, leaf co-occurrence similarity and feature histograms.
//!
//! Everything here is read-only over the forest and evaluates grid points
//! through [`crate::parallel`], so results do not depend on thread count.

use serde::{Deserialize, Serialize};

use crate::cohort::FeatureDef;
use crate::error::{Error, Result};
use crate::forest::HonestForest;
use crate::parallel;

pub const DEFAULT_QUANTILES: usize = 20;
pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_COHORT_SIZE: usize = 100;
pub const MAX_ALE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Pdp,
    Ice,
    Ale,
}

/// Plot payload. `values` holds one row for pdp/ale, one row per observation
/// for ice, and a `grid[0].len() × grid[1].len()` matrix for bivariate pdp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub features: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub centered: bool,
    /// ALE only: per-grid-point weights used for centering (sum to 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// ICE only: labels of the rows behind each curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub slope: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<ImportanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarMember {
    pub training_index: usize,
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarCohort {
    pub members: Vec<SimilarMember>,
    pub size_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub marker: f64,
    pub marker_in_range: bool,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Validation("grid must be nonempty".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite grid value".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn check_feature(forest: &HonestForest, feature: usize) -> Result<()> {
    if feature >= forest.num_features {
        return Err(Error::Schema(format!(
            "feature index {feature} outside 0..{}",
            forest.num_features
        )));
    }
    Ok(())
}

/// Mean prediction over `rows` for each forced `(feature := g)`.
pub fn partial_dependence(forest: &HonestForest, rows: &[Vec<f64>], feature: usize, grid: &[f64]) -> Result<Vec<f64>> {
    check_feature(forest, feature)?;
    check_grid(grid)?;
    if rows.is_empty() {
        return Err(Error::Validation("dataset must be nonempty".into()));
    }
    Ok(parallel::map_slice(grid, |&g| forced_mean(forest, rows, &[(feature, g)])))
}

fn forced_mean(forest: &HonestForest, rows: &[Vec<f64>], forced: &[(usize, f64)]) -> f64 {
    let mut scratch = rows[0].clone();
    let mut total = 0.0;
    for row in rows {
        scratch.copy_from_slice(row);
        for &(j, v) in forced {
            scratch[j] = v;
        }
        total += forest.predict_unchecked(&scratch);
    }
    total / rows.len() as f64
}

/// Bivariate partial dependence: `out[i][k]` forces (f1 := g1[i], f2 := g2[k]).
pub fn partial_dependence_2d(
    forest: &HonestForest,
    rows: &[Vec<f64>],
    features: (usize, usize),
    grids: (&[f64], &[f64]),
) -> Result<Vec<Vec<f64>>> {
    check_feature(forest, features.0)?;
    check_feature(forest, features.1)?;
    if features.0 == features.1 {
        return Err(Error::Validation("bivariate PDP needs two distinct features".into()));
    }
    check_grid(grids.0)?;
    check_grid(grids.1)?;
    if rows.is_empty() {
        return Err(Error::Validation("dataset must be nonempty".into()));
    }
    Ok(parallel::map_slice(grids.0, |&a| {
        grids
            .1
            .iter()
            .map(|&b| forced_mean(forest, rows, &[(features.0, a), (features.1, b)]))
            .collect()
    }))
}

/// One forced-prediction curve per row.
pub fn ice_curves(forest: &HonestForest, rows: &[Vec<f64>], feature: usize, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_feature(forest, feature)?;
    check_grid(grid)?;
    Ok(parallel::map_slice(rows, |row| {
        let mut scratch = row.clone();
        grid.iter()
            .map(|&g| {
                scratch[feature] = g;
                forest.predict_unchecked(&scratch)
            })
            .collect()
    }))
}

/// Accumulated local effects over quantile bins.
#[derive(Debug, Clone, PartialEq)]
pub struct AleCurve {
    pub edges: Vec<f64>,
    /// Centered accumulated effect at each edge.
    pub values: Vec<f64>,
    /// Edge weights: half of each adjacent bin's row share.
    pub weights: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

/// Deduplicated empirical quantiles at k/(points−1), taken as data values.
pub fn quantile_points(values: &[f64], points: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return Vec::new();
    }
    let last = sorted.len() - 1;
    let mut out: Vec<f64> = (0..points.max(1))
        .map(|k| {
            let pos = if points <= 1 {
                0.0
            } else {
                k as f64 * last as f64 / (points - 1) as f64
            };
            sorted[pos.round() as usize]
        })
        .collect();
    out.dedup();
    out
}

pub fn unique_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// ALE with `num_bins` quantile bins. A row with value x falls in the bin
/// (e_{k-1}, e_k]; the lowest edge belongs to the first bin.
pub fn accumulated_local_effects(forest: &HonestForest, rows: &[Vec<f64>], feature: usize, num_bins: usize) -> Result<AleCurve> {
    check_feature(forest, feature)?;
    let column: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
    if unique_count(&column) < 2 {
        return Err(Error::Degenerate(format!(
            "feature {feature} has fewer than two distinct values"
        )));
    }
    if num_bins == 0 {
        return Err(Error::Validation("ALE needs at least one bin".into()));
    }
    let edges = quantile_points(&column, num_bins + 1);
    let bins = edges.len() - 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &x) in column.iter().enumerate() {
        let k = edges.partition_point(|&e| e < x).clamp(1, bins);
        members[k - 1].push(i);
    }
    let effects: Vec<f64> = parallel::map_range(bins, |b| {
        if members[b].is_empty() {
            return 0.0;
        }
        let mut scratch = rows[0].clone();
        let mut total = 0.0;
        for &i in &members[b] {
            scratch.copy_from_slice(&rows[i]);
            scratch[feature] = edges[b + 1];
            let upper = forest.predict_unchecked(&scratch);
            scratch[feature] = edges[b];
            total += upper - forest.predict_unchecked(&scratch);
        }
        total / members[b].len() as f64
    });
    let mut accumulated = Vec::with_capacity(edges.len());
    accumulated.push(0.0);
    for e in &effects {
        let prev = *accumulated.last().expect("seeded with zero");
        accumulated.push(prev + e);
    }
    let n = rows.len() as f64;
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut weights = vec![0.0; edges.len()];
    for (b, &c) in counts.iter().enumerate() {
        let half = c as f64 / (2.0 * n);
        weights[b] += half;
        weights[b + 1] += half;
    }
    let center: f64 = accumulated.iter().zip(&weights).map(|(a, w)| a * w).sum();
    let values = accumulated.iter().map(|a| a - center).collect();
    Ok(AleCurve {
        edges,
        values,
        weights,
        bin_counts: counts,
    })
}

/// Sorted (descending) magnitudes with ties kept in canonical feature order.
pub fn rank_importance(mut entries: Vec<ImportanceEntry>, k: usize) -> ImportanceRanking {
    entries.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.index.cmp(&b.index)));
    entries.truncate(k);
    ImportanceRanking { entries }
}

/// Finite-difference slope of the PDP across the grid interval that contains
/// `value` (clamped to the outermost interval). Zero for single-point grids.
pub fn pdp_slope_at(forest: &HonestForest, rows: &[Vec<f64>], feature: usize, grid: &[f64], value: f64) -> Result<f64> {
    check_grid(grid)?;
    if grid.len() < 2 {
        return Ok(0.0);
    }
    let i = grid.partition_point(|&g| g <= value).saturating_sub(1).min(grid.len() - 2);
    let ends = [grid[i], grid[i + 1]];
    let pd = partial_dependence(forest, rows, feature, &ends)?;
    Ok((pd[1] - pd[0]) / (ends[1] - ends[0]))
}

/// Similarity = fraction of trees in which the two inputs share a leaf.
pub fn leaf_similarity(a: &[usize], b: &[usize]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len().max(1) as f64
}

/// Leaf paths of the training rows, computed once per loaded model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLeaves {
    pub paths: Vec<Vec<usize>>,
}

impl TrainingLeaves {
    pub fn new(forest: &HonestForest, rows: &[Vec<f64>]) -> Result<Self> {
        rows.iter().try_for_each(|r| forest.leaf_path(r).map(drop))?;
        let paths = parallel::map_slice(rows, |r| forest.trees.iter().map(|t| t.leaf_index(r)).collect());
        Ok(TrainingLeaves { paths })
    }

    /// Top `n` training rows by shared-leaf fraction; ties by ascending index.
    pub fn similar(&self, patient_path: &[usize], ids: &[String], n: usize) -> SimilarCohort {
        let trees = patient_path.len().max(1);
        let mut scored: Vec<(usize, usize)> = self
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.iter().zip(patient_path).filter(|(a, b)| a == b).count()))
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n);
        SimilarCohort {
            members: scored
                .into_iter()
                .map(|(i, same)| SimilarMember {
                    training_index: i,
                    id: ids.get(i).cloned().unwrap_or_else(|| i.to_string()),
                    similarity: same as f64 / trees as f64,
                })
                .collect(),
            size_cap: n,
        }
    }
}

/// Equal-width histogram over [min, max] with the patient's raw value as marker.
/// A constant column yields one zero-width bin holding every value.
pub fn feature_histogram(values: &[f64], marker: f64, num_bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Validation("histogram needs at least one value".into()));
    }
    if num_bins == 0 {
        return Err(Error::Validation("histogram needs at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let marker_in_range = marker >= lo && marker <= hi;
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            counts: vec![values.len()],
            marker,
            marker_in_range,
        });
    }
    let width = (hi - lo) / num_bins as f64;
    let edges: Vec<f64> = (0..=num_bins)
        .map(|k| if k == num_bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0; num_bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(num_bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        marker,
        marker_in_range,
    })
}

/// Named-feature facade over a forest and its background dataset.
pub struct Explainer<'a> {
    pub forest: &'a HonestForest,
    pub features: &'a [FeatureDef],
    pub data: &'a [Vec<f64>],
}

impl<'a> Explainer<'a> {
    pub fn new(forest: &'a HonestForest, features: &'a [FeatureDef], data: &'a [Vec<f64>]) -> Result<Self> {
        if features.len() != forest.num_features {
            return Err(Error::Schema(format!(
                "{} feature definitions for a {}-feature forest",
                features.len(),
                forest.num_features
            )));
        }
        if data.is_empty() || data.iter().any(|r| r.len() != features.len()) {
            return Err(Error::Schema("background dataset is empty or misshapen".into()));
        }
        Ok(Explainer { forest, features, data })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature {name}")))
    }

    /// {0, 1} for indicators, else 20 empirical quantiles of the background data.
    pub fn default_grid(&self, feature: usize) -> Vec<f64> {
        if self.features[feature].is_binary() {
            return vec![0.0, 1.0];
        }
        let column: Vec<f64> = self.data.iter().map(|r| r[feature]).collect();
        quantile_points(&column, DEFAULT_QUANTILES)
    }

    fn grid_or_default(&self, feature: usize, grid: Option<&[f64]>) -> Vec<f64> {
        grid.map(<[f64]>::to_vec).unwrap_or_else(|| self.default_grid(feature))
    }

    pub fn pdp(&self, feature: &str, grid: Option<&[f64]>) -> Result<CurveSeries> {
        let j = self.index(feature)?;
        let grid = self.grid_or_default(j, grid);
        let values = partial_dependence(self.forest, self.data, j, &grid)?;
        Ok(CurveSeries {
            kind: CurveKind::Pdp,
            features: vec![feature.to_string()],
            grid: vec![grid],
            values: vec![values],
            centered: false,
            weights: None,
            row_labels: None,
        })
    }

    pub fn pdp2(&self, features: (&str, &str), grids: (Option<&[f64]>, Option<&[f64]>)) -> Result<CurveSeries> {
        let (a, b) = (self.index(features.0)?, self.index(features.1)?);
        let ga = self.grid_or_default(a, grids.0);
        let gb = self.grid_or_default(b, grids.1);
        let values = partial_dependence_2d(self.forest, self.data, (a, b), (&ga, &gb))?;
        Ok(CurveSeries {
            kind: CurveKind::Pdp,
            features: vec![features.0.to_string(), features.1.to_string()],
            grid: vec![ga, gb],
            values,
            centered: false,
            weights: None,
            row_labels: None,
        })
    }

    /// ICE curves for `rows` (defaults to the background dataset).
    pub fn ice(&self, feature: &str, rows: Option<&[Vec<f64>]>, labels: Option<Vec<String>>, grid: Option<&[f64]>) -> Result<CurveSeries> {
        let j = self.index(feature)?;
        let grid = self.grid_or_default(j, grid);
        let rows = rows.unwrap_or(self.data);
        if rows.iter().any(|r| r.len() != self.features.len()) {
            return Err(Error::Schema("ICE row width does not match the model".into()));
        }
        let values = ice_curves(self.forest, rows, j, &grid)?;
        Ok(CurveSeries {
            kind: CurveKind::Ice,
            features: vec![feature.to_string()],
            grid: vec![grid],
            values,
            centered: false,
            weights: None,
            row_labels: labels,
        })
    }

    /// Default bins: min(10, unique − 1).
    pub fn ale(&self, feature: &str, num_bins: Option<usize>) -> Result<CurveSeries> {
        let j = self.index(feature)?;
        let column: Vec<f64> = self.data.iter().map(|r| r[j]).collect();
        let unique = unique_count(&column);
        if unique < 2 {
            return Err(Error::Degenerate(format!("feature {feature} is constant")));
        }
        let bins = num_bins.unwrap_or_else(|| MAX_ALE_BINS.min(unique - 1));
        let ale = accumulated_local_effects(self.forest, self.data, j, bins)?;
        Ok(CurveSeries {
            kind: CurveKind::Ale,
            features: vec![feature.to_string()],
            grid: vec![ale.edges],
            values: vec![ale.values],
            centered: true,
            weights: Some(ale.weights),
            row_labels: None,
        })
    }

    /// Top-k features by |PDP slope| at the patient's value.
    pub fn top_features(&self, patient: &[f64], k: usize) -> Result<ImportanceRanking> {
        if patient.len() != self.features.len() {
            return Err(Error::Schema("patient vector width does not match the model".into()));
        }
        let grids: Vec<Vec<f64>> = (0..self.features.len()).map(|j| self.default_grid(j)).collect();
        let slopes = parallel::map_range(self.features.len(), |j| {
            pdp_slope_at(self.forest, self.data, j, &grids[j], patient[j])
        });
        let entries = slopes
            .into_iter()
            .enumerate()
            .map(|(j, s)| {
                s.map(|slope| ImportanceEntry {
                    feature: self.features[j].name.clone(),
                    index: j,
                    slope,
                    magnitude: slope.abs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_importance(entries, k))
    }
}
