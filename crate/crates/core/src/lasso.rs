//! Squared-error LASSO by cyclic coordinate descent, plus the cross-validated
//! screening step applied separately to the history and medication CCS blocks.
//!
//! Columns are standardized to mean 0 and (population) std 1 before fitting;
//! the penalty applies on that scale and coefficients are reported on the
//! original scale. Constant columns are dropped and reported as zero.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{encode_partial, FeatureBlock, FeatureDef, PatientRecord};
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;
pub const CV_FOLDS: usize = 5;
pub const CV_SEED: u64 = 5_150;
pub const GRID_POINTS: usize = 50;
pub const GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    /// Original-scale coefficients, one per input column.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Columns with a nonzero coefficient, ascending.
    pub selected: Vec<usize>,
    /// `None` marks a constant column that was dropped before fitting.
    pub standardization: Vec<Option<ColumnScale>>,
    /// Coefficients on the standardized scale.
    pub standardized_coefficients: Vec<f64>,
    pub sweeps: usize,
    /// Standardized-scale objective after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Column-major standardized design with its centered response.
struct Standardized {
    n: usize,
    columns: Vec<Vec<f64>>,
    /// Maps standardized column -> input column.
    active: Vec<usize>,
    scales: Vec<Option<ColumnScale>>,
    /// (1/n)·‖z_j‖², which is 1 up to rounding.
    curvature: Vec<f64>,
    y_mean: f64,
    centered_y: Vec<f64>,
}

impl Standardized {
    fn new(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("LASSO needs n >= 2, got {n}")));
        }
        if y.len() != n {
            return Err(Error::Schema(format!("{} responses for {n} rows", y.len())));
        }
        let p = x[0].len();
        if p == 0 {
            return Err(Error::Schema("LASSO needs at least one column".into()));
        }
        if x.iter().any(|r| r.len() != p) {
            return Err(Error::Schema("ragged design matrix".into()));
        }
        if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in LASSO input".into()));
        }
        let nf = n as f64;
        let mut columns = Vec::new();
        let mut active = Vec::new();
        let mut scales = vec![None; p];
        let mut curvature = Vec::new();
        for j in 0..p {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / nf;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / nf;
            let std = var.sqrt();
            if !(std > 1e-12 * (1.0 + mean.abs())) {
                continue;
            }
            let col: Vec<f64> = x.iter().map(|r| (r[j] - mean) / std).collect();
            curvature.push(col.iter().map(|z| z * z).sum::<f64>() / nf);
            columns.push(col);
            active.push(j);
            scales[j] = Some(ColumnScale { mean, std });
        }
        if columns.is_empty() {
            return Err(Error::Degenerate("every column is constant".into()));
        }
        let y_mean = y.iter().sum::<f64>() / nf;
        let centered_y = y.iter().map(|v| v - y_mean).collect();
        Ok(Standardized {
            n,
            columns,
            active,
            scales,
            curvature,
            y_mean,
            centered_y,
        })
    }

    fn dot(&self, k: usize, r: &[f64]) -> f64 {
        self.columns[k].iter().zip(r).map(|(z, v)| z * v).sum::<f64>() / self.n as f64
    }

    fn lambda_max(&self) -> f64 {
        (0..self.columns.len())
            .map(|k| self.dot(k, &self.centered_y).abs())
            .fold(0.0, f64::max)
    }

    fn objective(&self, residual: &[f64], beta: &[f64], lambda: f64) -> f64 {
        let rss = residual.iter().map(|r| r * r).sum::<f64>();
        rss / (2.0 * self.n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Coordinate descent from a warm start `beta` (standardized scale).
    fn solve(&self, lambda: f64, mut beta: Vec<f64>) -> (Vec<f64>, usize, Vec<f64>) {
        let mut residual = self.centered_y.clone();
        for (k, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (r, z) in residual.iter_mut().zip(&self.columns[k]) {
                    *r -= z * b;
                }
            }
        }
        let mut trace = Vec::new();
        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            let mut max_change = 0.0_f64;
            for k in 0..self.columns.len() {
                let old = beta[k];
                let rho = self.dot(k, &residual) + self.curvature[k] * old;
                let new = soft_threshold(rho, lambda) / self.curvature[k];
                if new != old {
                    let delta = new - old;
                    for (r, z) in residual.iter_mut().zip(&self.columns[k]) {
                        *r -= z * delta;
                    }
                    beta[k] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            trace.push(self.objective(&residual, &beta, lambda));
            if max_change < TOLERANCE {
                break;
            }
        }
        (beta, sweeps, trace)
    }

    fn to_fit(&self, lambda: f64, beta: Vec<f64>, sweeps: usize, trace: Vec<f64>) -> LassoFit {
        let p = self.scales.len();
        let mut coefficients = vec![0.0; p];
        let mut standardized = vec![0.0; p];
        let mut intercept = self.y_mean;
        for (k, &j) in self.active.iter().enumerate() {
            let s = self.scales[j].expect("active column has a scale");
            standardized[j] = beta[k];
            coefficients[j] = beta[k] / s.std;
            intercept -= coefficients[j] * s.mean;
        }
        let selected = (0..p).filter(|&j| standardized[j] != 0.0).collect();
        LassoFit {
            lambda,
            coefficients,
            intercept,
            selected,
            standardization: self.scales.clone(),
            standardized_coefficients: standardized,
            sweeps,
            objective_trace: trace,
        }
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Numeric(format!("lambda {lambda} must be finite and >= 0")));
    }
    Ok(())
}

/// Fits y ~ X at one penalty. `x` is row-major (n rows of p values).
pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let design = Standardized::new(x, y)?;
    let (beta, sweeps, trace) = design.solve(lambda, vec![0.0; design.columns.len()]);
    Ok(design.to_fit(lambda, beta, sweeps, trace))
}

/// Fits a descending path of penalties with warm starts. The returned fits
/// follow the order of `lambdas`.
pub fn lasso_path(x: &[Vec<f64>], y: &[f64], lambdas: &[f64]) -> Result<Vec<LassoFit>> {
    lambdas.iter().try_for_each(|&l| check_lambda(l))?;
    let design = Standardized::new(x, y)?;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut fits: Vec<Option<LassoFit>> = vec![None; lambdas.len()];
    let mut beta = vec![0.0; design.columns.len()];
    for i in order {
        let (b, sweeps, trace) = design.solve(lambdas[i], beta);
        fits[i] = Some(design.to_fit(lambdas[i], b.clone(), sweeps, trace));
        beta = b;
    }
    Ok(fits.into_iter().map(|f| f.expect("every lambda fitted")).collect())
}

/// Smallest penalty at which every standardized coefficient is zero.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    Ok(Standardized::new(x, y)?.lambda_max())
}

/// Log-spaced grid from `max` down to `ratio · max`, descending.
pub fn log_grid(max: f64, points: usize, ratio: f64) -> Vec<f64> {
    if points <= 1 {
        return vec![max];
    }
    let (hi, lo) = (max.ln(), (max * ratio).ln());
    (0..points)
        .map(|i| {
            if i == 0 {
                max
            } else {
                (hi + (lo - hi) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn predict(fit: &LassoFit, row: &[f64]) -> f64 {
    fit.intercept + fit.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

/// Cross-validation summary for one penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub lambdas: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub chosen: usize,
}

/// K-fold CV squared error with the one-standard-error rule: the largest
/// penalty whose mean error is within one SE of the minimum.
pub fn cross_validate(x: &[Vec<f64>], y: &[f64], lambdas: &[f64], folds: usize, seed: u64) -> Result<CvCurve> {
    if lambdas.is_empty() {
        return Err(Error::Validation("empty penalty grid".into()));
    }
    let n = x.len();
    let folds = folds.clamp(2, n.max(2));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    let mut errors = vec![Vec::with_capacity(folds); lambdas.len()];
    for fold in 0..folds {
        let (mut xt, mut yt, mut xv, mut yv) = (vec![], vec![], vec![], vec![]);
        for i in 0..n {
            if assignment[i] == fold {
                xv.push(x[i].clone());
                yv.push(y[i]);
            } else {
                xt.push(x[i].clone());
                yt.push(y[i]);
            }
        }
        if yv.is_empty() {
            continue;
        }
        let fits = match lasso_path(&xt, &yt, lambdas) {
            Ok(f) => f,
            Err(Error::Degenerate(_)) => {
                // Training fold has no variation: predict its mean.
                let mean = yt.iter().sum::<f64>() / yt.len().max(1) as f64;
                let mse = yv.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / yv.len() as f64;
                errors.iter_mut().for_each(|e| e.push(mse));
                continue;
            }
            Err(e) => return Err(e),
        };
        for (l, fit) in fits.iter().enumerate() {
            let mse = xv
                .iter()
                .zip(&yv)
                .map(|(r, v)| (v - predict(fit, r)).powi(2))
                .sum::<f64>()
                / yv.len() as f64;
            errors[l].push(mse);
        }
    }
    let mean_error: Vec<f64> = errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let standard_error: Vec<f64> = errors
        .iter()
        .zip(&mean_error)
        .map(|(e, m)| {
            let k = e.len() as f64;
            if e.len() < 2 {
                return 0.0;
            }
            let var = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    let best = (0..lambdas.len())
        .min_by(|&a, &b| mean_error[a].total_cmp(&mean_error[b]).then(a.cmp(&b)))
        .expect("nonempty grid");
    let bound = mean_error[best] + standard_error[best];
    let chosen = (0..lambdas.len())
        .filter(|&l| mean_error[l] <= bound)
        .max_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]).then(b.cmp(&a)))
        .unwrap_or(best);
    Ok(CvCurve {
        lambdas: lambdas.to_vec(),
        mean_error,
        standard_error,
        chosen,
    })
}

/// Screens one CCS block: LASSO on the block's indicators only, penalty chosen
/// by 5-fold CV (one-SE rule), returning the nonzero features in catalog order.
///
/// `lambda_grid = None` uses the default 50-point log grid from λ_max.
pub fn select_block_features(
    records: &[PatientRecord],
    catalog: &[FeatureDef],
    block: FeatureBlock,
    lambda_grid: Option<&[f64]>,
) -> Result<Vec<String>> {
    let members: Vec<usize> = (0..catalog.len()).filter(|&j| catalog[j].block == block).collect();
    if members.is_empty() || records.is_empty() {
        return Ok(Vec::new());
    }
    let block_defs: Vec<FeatureDef> = members.iter().map(|&j| catalog[j].clone()).collect();
    let mut x = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        let outcome = r.outcome.ok_or_else(|| {
            Error::Validation(format!("training record {} has no outcome", r.id))
        })?;
        let row: Vec<f64> = encode_partial(r, &block_defs)?
            .into_iter()
            .map(|v| v.unwrap_or(0.0))
            .collect();
        x.push(row);
        y.push(f64::from(outcome));
    }
    let lmax = match lambda_max(&x, &y) {
        Ok(l) => l,
        Err(Error::Degenerate(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let grid = match lambda_grid {
        Some(g) => g.to_vec(),
        None => log_grid(lmax, GRID_POINTS, GRID_RATIO),
    };
    let cv = cross_validate(&x, &y, &grid, CV_FOLDS, CV_SEED)?;
    let fit = fit_lasso(&x, &y, grid[cv.chosen])?;
    Ok(fit.selected.iter().map(|&k| block_defs[k].name.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortSpec};

    fn fixture() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = vec![
            vec![1.0, 0.5, 3.0],
            vec![2.0, -1.0, 2.5],
            vec![3.0, 0.0, 1.0],
            vec![4.0, 1.5, 0.0],
            vec![5.0, -0.5, 2.0],
            vec![6.0, 2.0, 1.5],
        ];
        let y = vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        (x, y)
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, y) = fixture();
        let lmax = lambda_max(&x, &y).unwrap();
        let fit = fit_lasso(&x, &y, lmax).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        assert!(fit.selected.is_empty());
        let mean = y.iter().sum::<f64>() / 6.0;
        assert_eq!(fit.intercept, mean);
    }

    #[test]
    fn orthonormal_columns_recover_least_squares() {
        let x = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, -1.0, -1.0],
            vec![-1.0, 1.0, -1.0],
            vec![-1.0, -1.0, 1.0],
        ];
        let y = [0.7, -0.2, 1.3, 0.4];
        let fit = fit_lasso(&x, &y, 0.0).unwrap();
        for j in 0..3 {
            let ls: f64 = x.iter().zip(&y).map(|(r, v)| r[j] * v).sum::<f64>() / 4.0;
            assert!((fit.coefficients[j] - ls).abs() < 1e-8);
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let (x, y) = fixture();
        let fit = fit_lasso(&x, &y, 0.01).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn constant_columns_are_dropped() {
        let x = vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 5.0]];
        let fit = fit_lasso(&x, &[0.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(fit.standardization[0], None);
        assert_eq!(fit.coefficients[0], 0.0);
        let all_constant = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(
            fit_lasso(&all_constant, &[0.0, 1.0, 0.0], 0.1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rejects_bad_input() {
        let (mut x, y) = fixture();
        x[2][1] = f64::NAN;
        assert!(matches!(fit_lasso(&x, &y, 0.1), Err(Error::Numeric(_))));
        assert!(matches!(
            fit_lasso(&[vec![1.0]], &[1.0], 0.1),
            Err(Error::InsufficientData(_))
        ));
        let (x, y) = fixture();
        assert!(matches!(fit_lasso(&x, &y, -1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn sparsity_is_monotone_along_path() {
        let (x, y) = fixture();
        let lmax = lambda_max(&x, &y).unwrap();
        let grid = log_grid(lmax, 30, 1e-3);
        let path = lasso_path(&x, &y, &grid).unwrap();
        for w in path.windows(2) {
            assert!(w[1].selected.len() >= w[0].selected.len());
        }
    }

    #[test]
    fn column_scaling_divides_coefficient() {
        let (x, y) = fixture();
        let base = fit_lasso(&x, &y, 0.02).unwrap();
        let c = 7.5;
        let scaled: Vec<Vec<f64>> = x
            .iter()
            .map(|r| vec![r[0], r[1] * c, r[2]])
            .collect();
        let fit = fit_lasso(&scaled, &y, 0.02).unwrap();
        assert!((fit.coefficients[1] - base.coefficients[1] / c).abs() < 1e-6);
        assert!((fit.coefficients[0] - base.coefficients[0]).abs() < 1e-6);
    }

    #[test]
    fn single_lambda_max_grid_selects_nothing() {
        let spec = CohortSpec::synthetic(400, 3, 0.3);
        let records = generate_cohort(&spec).unwrap();
        let catalog = &spec.feature_catalog;
        let block: Vec<FeatureDef> = catalog
            .iter()
            .filter(|f| f.block == FeatureBlock::History)
            .cloned()
            .collect();
        let x: Vec<Vec<f64>> = records
            .iter()
            .map(|r| encode_partial(r, &block).unwrap().into_iter().map(Option::unwrap).collect())
            .collect();
        let y: Vec<f64> = records.iter().map(|r| f64::from(r.outcome.unwrap())).collect();
        let lmax = lambda_max(&x, &y).unwrap();
        let selected =
            select_block_features(&records, catalog, FeatureBlock::History, Some(&[lmax])).unwrap();
        assert!(selected.is_empty());
    }

    #[test]
    fn empty_block_selects_nothing() {
        let spec = CohortSpec::synthetic(50, 3, 0.3);
        let records = generate_cohort(&spec).unwrap();
        let numeric_only: Vec<FeatureDef> = spec
            .feature_catalog
            .iter()
            .filter(|f| !f.block.is_ccs())
            .cloned()
            .collect();
        let selected =
            select_block_features(&records, &numeric_only, FeatureBlock::Meds, None).unwrap();
        assert!(selected.is_empty());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-3).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}
