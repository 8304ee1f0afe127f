//! Multinomial logistic regression over flattened signatures, evaluated with
//! stratified k-fold cross-validation.
//!
//! The objective is mean cross-entropy plus `(l2/2) * ||W||^2` (biases are not
//! penalized), minimized by full-batch gradient descent with Armijo
//! backtracking from a zero initialization. Each fold fits its own scaler on
//! its training rows only.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_FOLDS};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub means: Array1<f64>,
    /// Zero-variance features store 1.
    pub stds: Array1<f64>,
}

impl Scaler {
    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        standardize_apply(self, features)
    }
}

pub fn standardize_fit(features: &Array2<f64>) -> Result<Scaler> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let means = features.mean_axis(Axis(0)).expect("n >= 2");
    let stds = features
        .columns()
        .into_iter()
        .zip(means.iter())
        .map(|(col, &m)| {
            let ss: f64 = col.iter().map(|&x| (x - m) * (x - m)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(Scaler { means, stds })
}

pub fn standardize_apply(scaler: &Scaler, features: &Array2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != scaler.means.len() {
        return Err(Error::DimensionMismatch(format!(
            "scaler fitted on {} features, got {}",
            scaler.means.len(),
            features.ncols()
        )));
    }
    Ok((features - &scaler.means) / &scaler.stds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub l2_strength: f64,
    pub max_iters: usize,
    /// Stop once the full gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            l2_strength: 1e-2,
            max_iters: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `C x D`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub hyperparams: HyperParams,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step, starting with the initial point.
    pub loss_history: Vec<f64>,
}

impl LogRegModel {
    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn scores(&self, features: &Array2<f64>) -> Array2<f64> {
        features.dot(&self.weights.t()) + &self.biases
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        self.scores(features)
            .rows()
            .into_iter()
            .map(|row| argmax(row.iter().copied()))
            .collect()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Row-wise softmax, shifted by the row max.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Regularized mean cross-entropy.
pub fn objective(
    weights: &Array2<f64>,
    biases: &Array1<f64>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    l2_strength: f64,
) -> f64 {
    let scores = features.dot(&weights.t()) + biases;
    let mut total = 0.0;
    for (row, &y) in scores.rows().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64 + 0.5 * l2_strength * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`objective`] with respect to weights and biases.
pub fn gradient(
    weights: &Array2<f64>,
    biases: &Array1<f64>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    l2_strength: f64,
) -> (Array2<f64>, Array1<f64>) {
    let n = labels.len() as f64;
    let mut residual = features.dot(&weights.t()) + biases;
    softmax_rows(&mut residual);
    for (mut row, &y) in residual.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    let grad_w = residual.t().dot(&features) / n + weights * l2_strength;
    let grad_b = residual.sum_axis(Axis(0)) / n;
    (grad_w, grad_b)
}

/// Fits the model. `seed` is accepted for interface uniformity; the zero
/// initialization makes the fit deterministic regardless of it.
pub fn fit_logreg(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    hyperparams: HyperParams,
    _seed: u64,
) -> Result<LogRegModel> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InsufficientData(
            "logistic regression needs at least 2 classes".into(),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("features contain non-finite values".into()));
    }

    let l2 = hyperparams.l2_strength;
    let x = features.view();
    let mut weights = Array2::zeros((num_classes, features.ncols()));
    let mut biases = Array1::zeros(num_classes);
    let mut loss = objective(&weights, &biases, x, labels, l2);
    let mut loss_history = vec![loss];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < hyperparams.max_iters {
        let (gw, gb) = gradient(&weights, &biases, x, labels, l2);
        let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb.iter().map(|g| g * g).sum::<f64>();
        if gnorm2.sqrt() < hyperparams.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        step *= 2.0;
        let accepted = loop {
            let w_try = &weights - &(&gw * step);
            let b_try = &biases - &(&gb * step);
            let loss_try = objective(&w_try, &b_try, x, labels, l2);
            if loss_try <= loss - 1e-4 * step * gnorm2 {
                break Some((w_try, b_try, loss_try));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some((w, b, l)) => {
                weights = w;
                biases = b;
                loss = l;
                loss_history.push(loss);
            }
            None => break,
        }
    }

    Ok(LogRegModel {
        weights,
        biases,
        hyperparams,
        iterations,
        converged,
        loss_history,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// A single fold holding every sample as test data (k = 1).
    pub fn is_degenerate(&self) -> bool {
        self.train.is_empty()
    }
}

/// Per class, shuffles member indices with `seed` and deals them round-robin
/// into `k` folds. The dealing position carries over between classes so fold
/// sizes stay balanced.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 {
        return Err(Error::Config("number of folds must be at least 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::InsufficientData(format!(
            "class {class} has {} member(s), fewer than {k} folds",
            members.len()
        )));
    }
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for (&class, members) in &by_class {
        let mut members = members.clone();
        members.shuffle(&mut rng_for(seed, STREAM_FOLDS, class as u64));
        for i in members {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len())
                .filter(|i| test.binary_search(i).is_err())
                .collect();
            Fold { train, test }
        })
        .collect())
}

fn select_rows(features: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    features.select(Axis(0), rows)
}

/// Scaler fitted on the fold's training rows only.
pub fn fold_scaler(features: &Array2<f64>, fold: &Fold) -> Result<Scaler> {
    standardize_fit(&select_rows(features, &fold.train))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub classes: Vec<String>,
    pub folds: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population std over the fold accuracies.
    pub std_accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    /// Rows are true classes, columns predictions, pooled over folds.
    pub confusion: Vec<Vec<usize>>,
    pub seed: u64,
    pub hyperparams: HyperParams,
}

impl CvReport {
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-class F1 from a confusion matrix; a class never predicted and never
/// present scores 0.
pub fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let predicted: usize = (0..c).map(|i| confusion[i][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let denom = (predicted + actual) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

pub fn cross_validate(
    features: &Array2<f64>,
    labels: &[usize],
    classes: &[String],
    k: usize,
    hyperparams: HyperParams,
    seed: u64,
) -> Result<CvReport> {
    let num_classes = classes.len();
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let folds = stratified_kfold(labels, k, seed)?;
    if folds.iter().any(Fold::is_degenerate) {
        return Err(Error::InsufficientData(
            "cross-validation needs at least 2 folds".into(),
        ));
    }

    let results: Vec<Result<(f64, Vec<Vec<usize>>)>> = folds
        .par_iter()
        .map(|fold| {
            let scaler = fold_scaler(features, fold)?;
            let train_x = standardize_apply(&scaler, &select_rows(features, &fold.train))?;
            let test_x = standardize_apply(&scaler, &select_rows(features, &fold.test))?;
            let train_y: Vec<usize> = fold.train.iter().map(|&i| labels[i]).collect();
            let model = fit_logreg(&train_x, &train_y, num_classes, hyperparams, seed)?;
            let predicted = model.predict(&test_x);
            let mut confusion = vec![vec![0usize; num_classes]; num_classes];
            let mut correct = 0;
            for (&i, &p) in fold.test.iter().zip(&predicted) {
                confusion[labels[i]][p] += 1;
                if labels[i] == p {
                    correct += 1;
                }
            }
            Ok((correct as f64 / fold.test.len() as f64, confusion))
        })
        .collect();

    let mut fold_accuracies = Vec::with_capacity(k);
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for result in results {
        let (accuracy, fold_confusion) = result?;
        fold_accuracies.push(accuracy);
        for (row, fold_row) in confusion.iter_mut().zip(&fold_confusion) {
            for (c, f) in row.iter_mut().zip(fold_row) {
                *c += f;
            }
        }
    }
    let f1 = per_class_f1(&confusion);
    Ok(CvReport {
        classes: classes.to_vec(),
        folds: k,
        mean_accuracy: stats::mean(&fold_accuracies),
        std_accuracy: stats::population_std(&fold_accuracies),
        fold_accuracies,
        macro_f1: stats::mean(&f1),
        per_class_f1: classes.iter().cloned().zip(f1).collect(),
        confusion,
        seed,
        hyperparams,
    })
}
