//! Independent reference implementations and fixture builders shared by the
//! integration tests and the acceptance report. The oracles never call the
//! code under test.

#![allow(dead_code)]

use gib_core::forest::{ForestParams, HonestForest, HonestTree, Node};
use gib_core::guidelines::{tokenize, Section};
use gib_core::lasso::LassoFit;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

pub const GOLDEN_DATA: &str = include_str!("../../fixtures/golden_data.json");
pub const GOLDEN_FOREST: &str = include_str!("../../fixtures/golden_forest.json");
pub const GUIDELINE_DOC: &str = include_str!("../../fixtures/ugib_guideline.md");
pub const PATIENTS: &str = include_str!("../../fixtures/patients.json");
pub const SURVEY_CSV: &str = include_str!("../../fixtures/survey.csv");

// ---- forest ----

#[derive(Deserialize)]
pub struct GoldenData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub medians: Vec<f64>,
}

pub fn golden_data() -> GoldenData {
    serde_json::from_str(GOLDEN_DATA).unwrap()
}

pub fn golden_forest() -> HonestForest {
    serde_json::from_str(GOLDEN_FOREST).unwrap()
}

pub fn golden_params() -> ForestParams {
    ForestParams {
        num_trees: 3,
        max_depth: 3,
        min_leaf: 1,
        features_per_split: Some(3),
        subsample_fraction: 1.0,
        seed: 42,
    }
}

/// Oracle tree: brute-force search over every (feature, midpoint) with the
/// variance criterion written out directly.
#[derive(Debug, PartialEq)]
pub enum OracleNode {
    Split(usize, f64, Box<OracleNode>, Box<OracleNode>),
    Leaf,
}

fn variance_sum(ids: &[usize], y: &[f64]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let mean = ids.iter().map(|&i| y[i]).sum::<f64>() / ids.len() as f64;
    ids.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

pub fn oracle_grow(x: &[Vec<f64>], y: &[f64], ids: &[usize], depth: usize, p: &ForestParams) -> OracleNode {
    if depth >= p.max_depth || ids.len() < 2 * p.min_leaf {
        return OracleNode::Leaf;
    }
    let parent = variance_sum(ids, y);
    if parent <= 0.0 {
        return OracleNode::Leaf;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..x[0].len() {
        let mut vals: Vec<f64> = ids.iter().map(|&i| x[i][j]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&i| x[i][j] <= t);
            if l.len() < p.min_leaf || r.len() < p.min_leaf {
                continue;
            }
            let score = variance_sum(&l, y) + variance_sum(&r, y);
            if best.is_none_or(|(s, _, _)| score < s - 1e-12) {
                best = Some((score, j, t));
            }
        }
    }
    match best {
        Some((score, j, t)) if score < parent - 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&i| x[i][j] <= t);
            OracleNode::Split(
                j,
                t,
                Box::new(oracle_grow(x, y, &l, depth + 1, p)),
                Box::new(oracle_grow(x, y, &r, depth + 1, p)),
            )
        }
        _ => OracleNode::Leaf,
    }
}

pub fn as_oracle(tree: &HonestTree, k: usize) -> OracleNode {
    match tree.nodes[k] {
        Node::Split { feature, threshold, left, right } => OracleNode::Split(
            feature,
            threshold,
            Box::new(as_oracle(tree, left)),
            Box::new(as_oracle(tree, right)),
        ),
        Node::Leaf { .. } => OracleNode::Leaf,
    }
}

/// Hand routing: the estimation rows reaching each node, then the mean at the
/// leaf or at the closest ancestor with rows.
pub fn oracle_estimate(tree: &HonestTree, x: &[Vec<f64>], y: &[f64], row: &[f64]) -> f64 {
    let mut k = 0;
    let mut members: Vec<usize> = tree.estimation_ids.clone();
    let mut fallback = members.clone();
    loop {
        if !members.is_empty() {
            fallback = members.clone();
        }
        match tree.nodes[k] {
            Node::Split { feature, threshold, left, right } => {
                if row[feature] <= threshold {
                    k = left;
                    members.retain(|&i| x[i][feature] <= threshold);
                } else {
                    k = right;
                    members.retain(|&i| x[i][feature] > threshold);
                }
            }
            Node::Leaf { .. } => break,
        }
    }
    let src = if members.is_empty() { &fallback } else { &members };
    src.iter().map(|&i| y[i]).sum::<f64>() / src.len() as f64
}

/// Replaces the labels of `ids` with a fixed derangement-like reordering.
pub fn permute_labels(y: &[f64], ids: &[usize]) -> Vec<f64> {
    let mut out = y.to_vec();
    let mut labels: Vec<f64> = ids.iter().map(|&i| y[i]).collect();
    labels.reverse();
    labels.rotate_left(1);
    for (&i, v) in ids.iter().zip(labels) {
        out[i] = v;
    }
    out
}

pub fn forest_problem(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = x
        .iter()
        .map(|r| f64::from(u8::from(r[0] + 0.5 * r[r.len() - 1] + rng.random_range(-1.0..1.0) > 0.0)))
        .collect();
    (x, y)
}

// ---- explain ----

/// Independent router over the node array.
pub fn route(tree: &HonestTree, x: &[f64]) -> (usize, f64) {
    let mut k = 0;
    loop {
        match &tree.nodes[k] {
            Node::Split { feature, threshold, left, right } => {
                k = if x[*feature] <= *threshold { *left } else { *right };
            }
            Node::Leaf { estimate, .. } => return (k, *estimate),
        }
    }
}

pub fn oracle_predict(f: &HonestForest, x: &[f64]) -> f64 {
    f.trees.iter().map(|t| route(t, x).1).sum::<f64>() / f.trees.len() as f64
}

pub fn forced(row: &[f64], pairs: &[(usize, f64)]) -> Vec<f64> {
    let mut r = row.to_vec();
    for &(j, v) in pairs {
        r[j] = v;
    }
    r
}

pub fn oracle_pdp(f: &HonestForest, rows: &[Vec<f64>], j: usize, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&v| rows.iter().map(|r| oracle_predict(f, &forced(r, &[(j, v)]))).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Brute-force ALE: quantile edges at rounded rank positions, (lo, hi] bins,
/// mean edge differences, left-to-right accumulation, edge-weighted centering.
pub fn oracle_ale(forest: &HonestForest, rows: &[Vec<f64>], j: usize, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s: Vec<f64> = rows.iter().map(|r| r[j]).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mut edges: Vec<f64> = (0..=bins)
        .map(|k| s[((k * (n - 1)) as f64 / bins as f64).round() as usize])
        .collect();
    edges.dedup();
    let b = edges.len() - 1;
    let mut acc = vec![0.0];
    let mut counts = vec![0usize; b];
    for k in 0..b {
        let inside: Vec<&Vec<f64>> = rows
            .iter()
            .filter(|r| (k == 0 && r[j] == edges[0]) || (r[j] > edges[k] && r[j] <= edges[k + 1]))
            .collect();
        counts[k] = inside.len();
        let mut total = 0.0;
        for r in &inside {
            total += oracle_predict(forest, &forced(r, &[(j, edges[k + 1])])) - oracle_predict(forest, &forced(r, &[(j, edges[k])]));
        }
        let effect = if inside.is_empty() { 0.0 } else { total / inside.len() as f64 };
        acc.push(acc[k] + effect);
    }
    let mut w = vec![0.0; b + 1];
    for k in 0..b {
        w[k] += counts[k] as f64 / (2.0 * n as f64);
        w[k + 1] += counts[k] as f64 / (2.0 * n as f64);
    }
    let c: f64 = acc.iter().zip(&w).map(|(a, w)| a * w).sum();
    (edges, acc.iter().map(|a| a - c).collect())
}

/// p = 0.1 + 0.6·x0 + 0.2·[x1 > 0.5]; x2 is noise.
pub fn additive_problem(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let y = x
        .iter()
        .map(|r| {
            let p = 0.1 + 0.6 * r[0] + 0.2 * f64::from(u8::from(r[1] > 0.5));
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    (x, y)
}

/// Sup-norm gap between an ALE curve and the PDP at the same edges, both
/// centered with the ALE edge weights.
pub fn centered_gap(ale_values: &[f64], weights: &[f64], pdp: &[f64]) -> f64 {
    let c: f64 = pdp.iter().zip(weights).map(|(p, w)| p * w).sum();
    ale_values
        .iter()
        .zip(pdp)
        .map(|(a, p)| (a - (p - c)).abs())
        .fold(0.0, f64::max)
}

/// Leaf paths by independent routing, and the exhaustive top-`n` ordering by
/// (similarity desc, index asc).
pub fn oracle_top_similar(f: &HonestForest, rows: &[Vec<f64>], probe: &[f64], n: usize) -> Vec<(f64, usize)> {
    let path: Vec<usize> = f.trees.iter().map(|t| route(t, probe).0).collect();
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let shared = f.trees.iter().zip(&path).filter(|(t, &k)| route(t, r).0 == k).count();
            (shared as f64 / f.trees.len() as f64, i)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.truncate(n);
    all
}

// ---- lasso ----

pub fn standardize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let p = x[0].len();
    let mut z = vec![vec![0.0; p]; x.len()];
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (zi, xi) in z.iter_mut().zip(x) {
            zi[j] = if sd > 0.0 { (xi[j] - mean) / sd } else { 0.0 };
        }
    }
    z
}

/// Worst violation of the stationarity conditions on the standardized scale.
pub fn kkt_violation(x: &[Vec<f64>], y: &[f64], fit: &LassoFit) -> f64 {
    let n = x.len() as f64;
    let z = standardize(x);
    let residual: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, yi)| yi - fit.intercept - r.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut worst = 0.0_f64;
    for j in 0..x[0].len() {
        if fit.standardization[j].is_none() {
            continue;
        }
        let g = z.iter().zip(&residual).map(|(zi, r)| zi[j] * r).sum::<f64>() / n;
        let b = fit.standardized_coefficients[j];
        let v = if b == 0.0 {
            (g.abs() - fit.lambda).max(0.0)
        } else {
            (g - fit.lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn lasso_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..120);
    let p = rng.random_range(2..12);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|j| rng.random_range(-3.0..3.0) * (1.0 + j as f64)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| f64::from(u8::from(r[0] - 0.3 * r[1] + rng.random_range(-2.0..2.0) > 0.0)))
        .collect();
    (x, y)
}

pub fn fixture_6x3() -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = vec![
        vec![1.0, 0.5, 3.0],
        vec![2.0, -1.0, 2.5],
        vec![3.0, 0.0, 1.0],
        vec![4.0, 1.5, 0.0],
        vec![5.0, -0.5, 2.0],
        vec![6.0, 2.0, 1.5],
    ];
    (x, vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0])
}

pub fn lasso_objective(z: &[Vec<f64>], yc: &[f64], b: &[f64; 3], lambda: f64) -> f64 {
    let n = z.len() as f64;
    let rss: f64 = z
        .iter()
        .zip(yc)
        .map(|(r, y)| (y - r[0] * b[0] - r[1] * b[1] - r[2] * b[2]).powi(2))
        .sum();
    rss / (2.0 * n) + lambda * (b[0].abs() + b[1].abs() + b[2].abs())
}

/// Exhaustive grid over the feasible cube, then a finer grid, then pattern search.
pub fn grid_oracle(z: &[Vec<f64>], yc: &[f64], lambda: f64) -> ([f64; 3], f64) {
    let bound = yc.iter().map(|v| v * v).sum::<f64>() / (2.0 * z.len() as f64) / lambda;
    let mut best = ([0.0; 3], lasso_objective(z, yc, &[0.0; 3], lambda));
    let scan = |center: [f64; 3], half: f64, step: f64, best: &mut ([f64; 3], f64)| {
        let k = (half / step).round() as i64;
        for a in -k..=k {
            for b in -k..=k {
                for c in -k..=k {
                    let p = [
                        center[0] + a as f64 * step,
                        center[1] + b as f64 * step,
                        center[2] + c as f64 * step,
                    ];
                    let o = lasso_objective(z, yc, &p, lambda);
                    if o < best.1 {
                        *best = (p, o);
                    }
                }
            }
        }
    };
    scan([0.0; 3], bound, 1e-2, &mut best);
    scan(best.0, 2e-2, 1e-3, &mut best);
    let mut step = 1e-3;
    while step > 1e-12 {
        let mut improved = false;
        for j in 0..3 {
            for s in [-step, step] {
                let mut p = best.0;
                p[j] += s;
                let o = lasso_objective(z, yc, &p, lambda);
                if o < best.1 {
                    best = (p, o);
                    improved = true;
                }
            }
            // Probe the kink at zero directly.
            let mut p = best.0;
            p[j] = 0.0;
            let o = lasso_objective(z, yc, &p, lambda);
            if o < best.1 {
                best = (p, o);
                improved = true;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

/// (fit objective, oracle objective, oracle coefficients) on the 6×3 fixture.
pub fn six_by_three_gap(fit: &LassoFit, lambda: f64) -> (f64, f64, [f64; 3]) {
    let (x, y) = fixture_6x3();
    let z = standardize(&x);
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let (oracle_b, oracle_obj) = grid_oracle(&z, &yc, lambda);
    let b = &fit.standardized_coefficients;
    (lasso_objective(&z, &yc, &[b[0], b[1], b[2]], lambda), oracle_obj, oracle_b)
}

// ---- calibrate ----

/// Enumerates every candidate cut point directly.
pub fn oracle_tau(preds: &[f64], labels: &[u8], target: f64) -> f64 {
    let positives: Vec<f64> = preds.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(p, _)| *p).collect();
    let mut candidates = positives.clone();
    candidates.push(0.0);
    candidates
        .into_iter()
        .filter(|&t| positives.iter().filter(|&&p| p >= t).count() as f64 / positives.len() as f64 >= target)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn oracle_auc(preds: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                den += 1.0;
                num += if preds[i] > preds[j] { 1.0 } else if preds[i] == preds[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

pub fn oracle_sensitivity(preds: &[f64], labels: &[u8], tau: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let caught = preds.iter().zip(labels).filter(|(&p, &l)| l == 1 && p >= tau).count() as f64;
    caught / pos
}

// ---- guidelines ----

/// Independent implementation of the default embedder.
pub fn oracle_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 256];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let d = Sha256::digest(token.as_bytes());
        let mut h = 0u64;
        for (i, b) in d.iter().take(8).enumerate() {
            h |= u64::from(*b) << (8 * i);
        }
        v[(h % 256) as usize] += if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Exhaustive cosine ranking: (score, chunk id) by score desc, id asc.
pub fn oracle_ranking(query: &str, chunks: &[(usize, String)]) -> Vec<(f64, usize)> {
    let q = oracle_embed(query);
    let mut all: Vec<(f64, usize)> = chunks
        .iter()
        .map(|(id, text)| {
            let e = oracle_embed(text);
            (q.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>(), *id)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all
}

pub fn guideline_vocabulary() -> Vec<String> {
    let mut v: Vec<String> = tokenize(GUIDELINE_DOC).collect();
    v.sort();
    v.dedup();
    v
}

/// Five sections of ten ~900-character paragraphs: one chunk per paragraph.
pub fn fifty_chunk_document() -> String {
    let vocab = guideline_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut doc = String::new();
    for s in Section::ALL {
        doc.push_str(&format!("## {}\n\n", s.title()));
        for _ in 0..10 {
            let mut para = String::new();
            while para.len() < 900 {
                if !para.is_empty() {
                    para.push(' ');
                }
                para.push_str(vocab.choose(&mut rng).unwrap());
            }
            doc.push_str(&para);
            doc.push_str("\n\n");
        }
    }
    doc
}

pub const FIVE_CHUNK_DOC: &str = "## Pre-endoscopic management\n\nRisk stratify with the Glasgow-Blatchford score and resuscitate before endoscopy.\n\n\
## Endoscopic management\n\nTreat active bleeding or a visible vessel with bipolar electrocoagulation or clips.\n\n\
## Summary of evidence\n\nTrials support a restrictive transfusion threshold of hemoglobin 7.\n\n\
## Recommendations\n\nWe recommend endoscopy within 24 hours and high-dose proton pump inhibitor therapy after hemostasis.\n\n\
## Conclusions\n\nRisk stratification and timely endoscopy improve outcomes.\n";

pub const FIVE_CHUNK_QUERIES: [&str; 5] = [
    "When should endoscopy happen?",
    "transfusion threshold hemoglobin",
    "clips for a visible vessel",
    "risk stratification score",
    "proton pump inhibitor after hemostasis",
];

// ---- studylab ----

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

/// Cronbach's alpha from population variances, written out directly.
pub fn hand_alpha(rows: &[Vec<f64>]) -> f64 {
    let k = rows[0].len();
    let item_var: f64 = (0..k).map(|j| mean_sd(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()).1.powi(2)).sum();
    let total_var = mean_sd(&rows.iter().map(|r| r.iter().sum()).collect::<Vec<_>>()).1.powi(2);
    k as f64 / (k as f64 - 1.0) * (1.0 - item_var / total_var)
}
