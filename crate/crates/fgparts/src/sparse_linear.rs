//! One-vs-rest linear classification with squared hinge loss.
//!
//! L1 regularization drives feature selection (the proximal step produces
//! exact zeros); an L2 variant serves as the final classifier. Features are
//! z-scored with training-set statistics before fitting and prediction, and
//! the bias is never regularized.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::backbone::FeatureVector;
use crate::error::{Error, Result};
use crate::grid::{read_tensor, write_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularization {
    L1,
    L2,
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularization::L1 => "l1",
            Regularization::L2 => "l2",
        })
    }
}

/// Stopping rule for the per-class solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

/// Per-class weight vectors and biases plus the standardization stats that
/// were in effect at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    num_classes: usize,
    dim: usize,
    weights: Vec<Vec<f32>>,
    biases: Vec<f32>,
    regularization: Regularization,
    lambda: f32,
    mean: Vec<f32>,
    scale: Vec<f32>,
}

impl LinearModel {
    pub fn new(
        weights: Vec<Vec<f32>>,
        biases: Vec<f32>,
        regularization: Regularization,
        lambda: f32,
        mean: Vec<f32>,
        scale: Vec<f32>,
    ) -> Result<Self> {
        let num_classes = weights.len();
        if num_classes < 2 {
            return Err(Error::invalid("a linear model needs at least 2 classes"));
        }
        let dim = weights[0].len();
        if weights.iter().any(|w| w.len() != dim)
            || biases.len() != num_classes
            || mean.len() != dim
            || scale.len() != dim
        {
            return Err(Error::invalid("linear model field lengths disagree"));
        }
        if weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear model weights must be finite"));
        }
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standardization scale must be positive"));
        }
        Ok(LinearModel {
            num_classes,
            dim,
            weights,
            biases,
            regularization,
            lambda,
            mean,
            scale,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regularization(&self) -> Regularization {
        self.regularization
    }

    pub fn lambda(&self) -> f32 {
        self.lambda
    }

    pub fn class_weights(&self, c: usize) -> &[f32] {
        &self.weights[c]
    }

    pub fn class_bias(&self, c: usize) -> f32 {
        self.biases[c]
    }
}

/// Channel indices with nonzero weight for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedChannels {
    pub class: usize,
    pub channels: Vec<usize>,
}

/// Per-class nonzero weight counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub dim: usize,
    /// (nonzero count, percentage of `dim`) per class.
    pub per_class: Vec<(usize, f32)>,
}

impl fmt::Display for SparsityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nonzero weights per class (dim {})", self.dim)?;
        for (c, (count, pct)) in self.per_class.iter().enumerate() {
            writeln!(f, "  class {c}: {count} ({pct}%)")?;
        }
        Ok(())
    }
}

/// Objective values recorded by the solver, one sequence per class.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub objectives: Vec<f64>,
}

/// Fits one binary classifier per class (one-vs-rest).
///
/// Per class `c` the solver minimizes
/// `lambda * R(w) + sum_i max(0, 1 - y_i (w . x_i + b))^2` over z-scored
/// features, with `R` either the L1 norm or half the squared L2 norm.
/// Proximal gradient descent (plain gradient for L2) with a halving
/// backtracking line search; deterministic.
pub fn fit_ovr(
    features: &[FeatureVector],
    labels: &[usize],
    regularization: Regularization,
    lambda: f32,
    cfg: &SolverConfig,
) -> Result<LinearModel> {
    fit_ovr_traced(features, labels, regularization, lambda, cfg).map(|(m, _)| m)
}

/// Like [`fit_ovr`] but also returns per-class objective traces.
pub fn fit_ovr_traced(
    features: &[FeatureVector],
    labels: &[usize],
    regularization: Regularization,
    lambda: f32,
    cfg: &SolverConfig,
) -> Result<(LinearModel, Vec<SolveTrace>)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid(
            "features and labels must be non-empty and equal length",
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::invalid("inconsistent feature dimensions"));
    }
    if features.iter().any(|f| f.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut seen = vec![false; num_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::invalid("fitting needs at least 2 classes"));
    }

    let (mean, scale) = standardization_stats(features, dim);
    let n = features.len();
    // Standardized design matrix, row-major, in f64.
    let mut x = vec![0.0f64; n * dim];
    for (i, f) in features.iter().enumerate() {
        for j in 0..dim {
            x[i * dim + j] = (f.data()[j] as f64 - mean[j]) / scale[j];
        }
    }

    let solved: Vec<(Vec<f64>, f64, SolveTrace)> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == c { 1.0 } else { -1.0 })
                .collect();
            solve_class(&x, &y, n, dim, regularization, lambda as f64, cfg)
        })
        .collect();

    let mut weights = Vec::with_capacity(num_classes);
    let mut biases = Vec::with_capacity(num_classes);
    let mut traces = Vec::with_capacity(num_classes);
    for (w, b, trace) in solved {
        weights.push(w.iter().map(|&v| v as f32).collect());
        biases.push(b as f32);
        traces.push(trace);
    }
    let model = LinearModel::new(
        weights,
        biases,
        regularization,
        lambda,
        mean.iter().map(|&v| v as f32).collect(),
        scale.iter().map(|&v| v as f32).collect(),
    )?;
    Ok((model, traces))
}

fn standardization_stats(features: &[FeatureVector], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for f in features {
        for j in 0..dim {
            mean[j] += f.data()[j] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for f in features {
        for j in 0..dim {
            let d = f.data()[j] as f64 - mean[j];
            var[j] += d * d;
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Proximal gradient descent for one binary subproblem.
///
/// Each iteration backtracks by halving from a Barzilai-Borwein trial step
/// until the Armijo sufficient-decrease condition holds, so the objective
/// is non-increasing throughout.
fn solve_class(
    x: &[f64],
    y: &[f64],
    n: usize,
    dim: usize,
    reg: Regularization,
    lambda: f64,
    cfg: &SolverConfig,
) -> (Vec<f64>, f64, SolveTrace) {
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut obj = objective(x, y, n, dim, &w, b, reg, lambda);
    let mut trace = SolveTrace {
        objectives: vec![obj],
    };
    let (mut grad_w, mut grad_b) = loss_gradient(x, y, n, dim, &w, b, reg, lambda);
    let mut step = 1.0f64;
    let mut prev: Option<(Vec<f64>, f64, Vec<f64>, f64)> = None; // w, b, grad_w, grad_b
    // BB progress comes in bursts, so a single sub-tol change is not yet
    // convergence; require a run of them.
    let mut quiet_iters = 0usize;
    const QUIET_RUN: usize = 10;
    const ARMIJO: f64 = 1e-4;

    for _ in 0..cfg.max_iter {
        // Barzilai-Borwein trial step from the last parameter/gradient
        // deltas; fall back to growing the previous step.
        let trial = match &prev {
            Some((pw, pb, pgw, pgb)) => {
                let mut ss = (b - pb) * (b - pb);
                let mut sy = (b - pb) * (grad_b - pgb);
                for j in 0..dim {
                    let s = w[j] - pw[j];
                    ss += s * s;
                    sy += s * (grad_w[j] - pgw[j]);
                }
                if sy > 1e-300 && ss.is_finite() {
                    (ss / sy).clamp(1e-12, 1e8)
                } else {
                    (step * 2.0).min(1e8)
                }
            }
            None => 1.0,
        };
        step = trial;
        let mut accepted = None;
        while step > 1e-18 {
            let mut w_new: Vec<f64> = w
                .iter()
                .zip(&grad_w)
                .map(|(&wi, &gi)| wi - step * gi)
                .collect();
            if reg == Regularization::L1 {
                let thresh = step * lambda;
                for v in w_new.iter_mut() {
                    *v = soft_threshold(*v, thresh);
                }
            }
            let b_new = b - step * grad_b;
            let obj_new = objective(x, y, n, dim, &w_new, b_new, reg, lambda);
            let move_sq: f64 = w_new
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                + (b_new - b) * (b_new - b);
            if obj_new <= obj - ARMIJO / step * move_sq {
                accepted = Some((w_new, b_new, obj_new));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, obj_new)) = accepted else {
            break; // no step produces progress; treat as converged
        };
        debug_assert!(
            obj_new <= obj + 1e-12 * obj.abs().max(1.0),
            "objective increased: {obj} -> {obj_new}"
        );
        let delta = obj - obj_new;
        let (grad_w_new, grad_b_new) = loss_gradient(x, y, n, dim, &w_new, b_new, reg, lambda);
        prev = Some((
            std::mem::replace(&mut w, w_new),
            std::mem::replace(&mut b, b_new),
            std::mem::replace(&mut grad_w, grad_w_new),
            std::mem::replace(&mut grad_b, grad_b_new),
        ));
        obj = obj_new;
        trace.objectives.push(obj);
        if delta <= cfg.tol * obj.abs().max(1.0) {
            quiet_iters += 1;
            if quiet_iters >= QUIET_RUN {
                break;
            }
        } else {
            quiet_iters = 0;
        }
    }
    (w, b, trace)
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn objective(
    x: &[f64],
    y: &[f64],
    n: usize,
    dim: usize,
    w: &[f64],
    b: f64,
    reg: Regularization,
    lambda: f64,
) -> f64 {
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = &x[i * dim..(i + 1) * dim];
        let s: f64 = row.iter().zip(w).map(|(&xi, &wi)| xi * wi).sum::<f64>() + b;
        let margin = 1.0 - y[i] * s;
        if margin > 0.0 {
            loss += margin * margin;
        }
    }
    let r = match reg {
        Regularization::L1 => w.iter().map(|v| v.abs()).sum::<f64>(),
        Regularization::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
    };
    loss + lambda * r
}

/// Gradient of the smooth part (loss, plus the L2 penalty when present).
fn loss_gradient(
    x: &[f64],
    y: &[f64],
    n: usize,
    dim: usize,
    w: &[f64],
    b: f64,
    reg: Regularization,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let mut grad_w = vec![0.0f64; dim];
    let mut grad_b = 0.0f64;
    for i in 0..n {
        let row = &x[i * dim..(i + 1) * dim];
        let s: f64 = row.iter().zip(w).map(|(&xi, &wi)| xi * wi).sum::<f64>() + b;
        let margin = 1.0 - y[i] * s;
        if margin > 0.0 {
            let coeff = -2.0 * y[i] * margin;
            for (g, &xi) in grad_w.iter_mut().zip(row) {
                *g += coeff * xi;
            }
            grad_b += coeff;
        }
    }
    if reg == Regularization::L2 {
        for (g, &wi) in grad_w.iter_mut().zip(w) {
            *g += lambda * wi;
        }
    }
    (grad_w, grad_b)
}

/// Scores every class for `x` and picks the argmax; ties go to the lowest
/// class index.
pub fn predict(model: &LinearModel, x: &FeatureVector) -> Result<(usize, Vec<f32>)> {
    if x.dim() != model.dim {
        return Err(Error::invalid(format!(
            "feature dim {} does not match model dim {}",
            x.dim(),
            model.dim
        )));
    }
    let scores: Vec<f32> = (0..model.num_classes)
        .map(|c| {
            let mut s = model.biases[c] as f64;
            for j in 0..model.dim {
                let z = (x.data()[j] as f64 - model.mean[j] as f64) / model.scale[j] as f64;
                s += model.weights[c][j] as f64 * z;
            }
            s as f32
        })
        .collect();
    let mut best = 0usize;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    Ok((best, scores))
}

/// The exact nonzero pattern of class `c`'s weights. Only meaningful for
/// L1 models, where the proximal step produces exact zeros.
pub fn selected_channels(model: &LinearModel, c: usize) -> Result<SelectedChannels> {
    if model.regularization != Regularization::L1 {
        return Err(Error::invalid(
            "selected_channels requires an L1-regularized model",
        ));
    }
    if c >= model.num_classes {
        return Err(Error::invalid(format!(
            "class {c} out of range for {} classes",
            model.num_classes
        )));
    }
    let channels = model.weights[c]
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(d, _)| d)
        .collect();
    Ok(SelectedChannels { class: c, channels })
}

/// Nonzero counts and percentages per class.
pub fn sparsity_report(model: &LinearModel) -> SparsityReport {
    let per_class = model
        .weights
        .iter()
        .map(|w| {
            let count = w.iter().filter(|&&v| v != 0.0).count();
            (count, count as f32 * 100.0 / model.dim as f32)
        })
        .collect();
    SparsityReport {
        dim: model.dim,
        per_class,
    }
}

const META_HEADER: &str = "fgparts-linear v1";

/// Writes the model as a tensor file (weights, biases, stats) plus a
/// plain-text metadata file.
pub fn save_linear_model(
    model: &LinearModel,
    tensor_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    let meta = format!(
        "{META_HEADER}\nregularization {}\nlambda {}\nnum_classes {}\ndim {}\n",
        model.regularization, model.lambda, model.num_classes, model.dim
    );
    let meta_path = meta_path.as_ref();
    fs::write(meta_path, meta).map_err(|e| Error::io(meta_path, e))?;

    let mut payload = Vec::with_capacity((model.num_classes + 2) * model.dim + model.num_classes);
    for w in &model.weights {
        payload.extend_from_slice(w);
    }
    payload.extend_from_slice(&model.biases);
    payload.extend_from_slice(&model.mean);
    payload.extend_from_slice(&model.scale);
    write_tensor(tensor_path, &[payload.len()], &payload)
}

/// Restores a model written by [`save_linear_model`].
pub fn load_linear_model(
    tensor_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<LinearModel> {
    let meta_path = meta_path.as_ref();
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let mut reg = None;
    let mut lambda = None;
    let mut num_classes = None;
    let mut dim = None;
    let mut lines = text.lines();
    if lines.next() != Some(META_HEADER) {
        return Err(Error::format(format!(
            "{}: header: expected {META_HEADER:?}",
            meta_path.display()
        )));
    }
    for line in lines {
        match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            [] => {}
            ["regularization", "l1"] => reg = Some(Regularization::L1),
            ["regularization", "l2"] => reg = Some(Regularization::L2),
            ["lambda", v] => {
                lambda = Some(v.parse::<f32>().map_err(|_| Error::format("lambda: not a number"))?)
            }
            ["num_classes", v] => {
                num_classes =
                    Some(v.parse::<usize>().map_err(|_| Error::format("num_classes: not a number"))?)
            }
            ["dim", v] => {
                dim = Some(v.parse::<usize>().map_err(|_| Error::format("dim: not a number"))?)
            }
            other => return Err(Error::format(format!("unknown metadata line {other:?}"))),
        }
    }
    let reg = reg.ok_or_else(|| Error::format("regularization: missing"))?;
    let lambda = lambda.ok_or_else(|| Error::format("lambda: missing"))?;
    let num_classes = num_classes.ok_or_else(|| Error::format("num_classes: missing"))?;
    let dim = dim.ok_or_else(|| Error::format("dim: missing"))?;

    let (dims, data) = read_tensor(tensor_path)?;
    let expected = num_classes * dim + num_classes + 2 * dim;
    if dims != vec![expected] {
        return Err(Error::format(format!(
            "model tensor: expected dims [{expected}], got {dims:?}"
        )));
    }
    let mut off = 0usize;
    let mut weights = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        weights.push(data[off..off + dim].to_vec());
        off += dim;
    }
    let biases = data[off..off + num_classes].to_vec();
    off += num_classes;
    let mean = data[off..off + dim].to_vec();
    off += dim;
    let scale = data[off..off + dim].to_vec();
    LinearModel::new(weights, biases, reg, lambda, mean, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f32]) -> FeatureVector {
        FeatureVector::new(values.to_vec())
    }

    fn one_d_problem() -> (Vec<FeatureVector>, Vec<usize>) {
        (vec![fv(&[-1.0]), fv(&[1.0])], vec![0, 1])
    }

    /// Independent objective for oracle checks: raw squared hinge over
    /// standardized inputs, recomputed from scratch.
    fn oracle_objective(
        xs: &[Vec<f64>],
        labels: &[usize],
        class: usize,
        w: &[f64],
        b: f64,
        lambda: f64,
        reg: Regularization,
    ) -> f64 {
        let mut loss = 0.0;
        for (x, &l) in xs.iter().zip(labels) {
            let y = if l == class { 1.0 } else { -1.0 };
            let s: f64 = x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            let m = 1.0 - y * s;
            if m > 0.0 {
                loss += m * m;
            }
        }
        let r = match reg {
            Regularization::L1 => w.iter().map(|v| v.abs()).sum(),
            Regularization::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
        };
        loss + lambda * r
    }

    fn standardize(features: &[FeatureVector]) -> Vec<Vec<f64>> {
        let n = features.len() as f64;
        let dim = features[0].dim();
        let mut mean = vec![0.0; dim];
        for f in features {
            for j in 0..dim {
                mean[j] += f.data()[j] as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in features {
            for j in 0..dim {
                var[j] += (f.data()[j] as f64 - mean[j]).powi(2);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        features
            .iter()
            .map(|f| {
                (0..dim)
                    .map(|j| (f.data()[j] as f64 - mean[j]) / scale[j])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn huge_lambda_shrinks_everything_to_zero() {
        let (x, y) = one_d_problem();
        let m = fit_ovr(&x, &y, Regularization::L1, 1e9, &SolverConfig::default()).unwrap();
        for c in 0..2 {
            assert!(m.class_weights(c).iter().all(|&w| w == 0.0), "class {c}");
        }
    }

    #[test]
    fn one_d_signs_and_accuracy() {
        let (x, y) = one_d_problem();
        let m = fit_ovr(&x, &y, Regularization::L1, 0.01, &SolverConfig::default()).unwrap();
        assert!(m.class_weights(1)[0] > 0.0);
        assert!(m.class_weights(0)[0] < 0.0);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(predict(&m, xi).unwrap().0, yi);
        }
        // Model from this data classifies x = +1 as class 1.
        assert_eq!(predict(&m, &fv(&[1.0])).unwrap().0, 1);
    }

    #[test]
    fn one_d_objective_matches_grid_search() {
        let (x, y) = one_d_problem();
        let lambda = 0.01;
        let (m, _) =
            fit_ovr_traced(&x, &y, Regularization::L1, lambda, &SolverConfig::default()).unwrap();
        let xs = standardize(&x);
        for class in 0..2 {
            let solver_obj = oracle_objective(
                &xs,
                &y,
                class,
                &[m.class_weights(class)[0] as f64],
                m.class_bias(class) as f64,
                lambda as f64,
                Regularization::L1,
            );
            let mut grid_best = f64::INFINITY;
            let steps = 4001; // [-2, 2] at 1e-3
            for wi in 0..steps {
                let w = -2.0 + wi as f64 * 1e-3;
                for bi in 0..steps {
                    let b = -2.0 + bi as f64 * 1e-3;
                    let o = oracle_objective(&xs, &y, class, &[w], b, lambda as f64, Regularization::L1);
                    if o < grid_best {
                        grid_best = o;
                    }
                }
            }
            assert!(
                (solver_obj - grid_best).abs() <= 1e-4,
                "class {class}: solver {solver_obj} vs grid {grid_best}"
            );
        }
    }

    #[test]
    fn l1_zeroes_noise_dimension() {
        // Dimension 0 carries the identical value pattern in both classes;
        // dimension 1 separates them exactly.
        let noise = [0.5f32, -0.5, 0.25, -0.25, 0.1, -0.1, 0.4, -0.4, 0.3, -0.3];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for class in 0..2usize {
            for i in 0..10 {
                let sep = if class == 0 { -1.0 } else { 1.0 };
                x.push(fv(&[noise[i], sep]));
                y.push(class);
            }
        }
        let lambda = 0.5f32;
        let m = fit_ovr(&x, &y, Regularization::L1, lambda, &SolverConfig::default()).unwrap();
        let xs = standardize(&x);
        for class in 0..2 {
            let w = m.class_weights(class);
            assert_eq!(w[0], 0.0, "class {class}: noise dim kept: {w:?}");
            assert!(w[1] != 0.0, "class {class}: separating dim dropped");

            // Coarse 3-D grid oracle over (w0, w1, b) confirms both the
            // objective level and that the optimum pattern zeroes dim 0.
            let solver_obj = oracle_objective(
                &xs,
                &y,
                class,
                &[w[0] as f64, w[1] as f64],
                m.class_bias(class) as f64,
                lambda as f64,
                Regularization::L1,
            );
            let mut grid_best = f64::INFINITY;
            let mut grid_arg = (0.0, 0.0, 0.0);
            let steps = 161; // [-2, 2] at 0.025
            for i0 in 0..steps {
                let w0 = -2.0 + i0 as f64 * 0.025;
                for i1 in 0..steps {
                    let w1 = -2.0 + i1 as f64 * 0.025;
                    for ib in 0..steps {
                        let b = -2.0 + ib as f64 * 0.025;
                        let o = oracle_objective(
                            &xs,
                            &y,
                            class,
                            &[w0, w1],
                            b,
                            lambda as f64,
                            Regularization::L1,
                        );
                        if o < grid_best {
                            grid_best = o;
                            grid_arg = (w0, w1, b);
                        }
                    }
                }
            }
            assert!(
                solver_obj <= grid_best + 1e-9,
                "class {class}: solver {solver_obj} worse than grid {grid_best}"
            );
            assert!(
                (solver_obj - grid_best).abs() <= 2e-2,
                "class {class}: solver {solver_obj} vs grid {grid_best}"
            );
            assert!(grid_arg.0.abs() <= 0.025 + 1e-12, "grid optimum keeps noise dim: {grid_arg:?}");
        }
    }

    #[test]
    fn predict_bias_argmax_and_ties() {
        let m = LinearModel::new(
            vec![vec![0.0; 2]; 3],
            vec![0.1, 0.5, 0.2],
            Regularization::L2,
            0.0,
            vec![0.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        assert_eq!(predict(&m, &fv(&[0.0, 0.0])).unwrap().0, 1);

        let tie = LinearModel::new(
            vec![vec![0.0; 2]; 3],
            vec![0.7, 0.7, 0.7],
            Regularization::L2,
            0.0,
            vec![0.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        assert_eq!(predict(&tie, &fv(&[1.0, 2.0])).unwrap().0, 0);
    }

    #[test]
    fn predict_rejects_dim_mismatch() {
        let (x, y) = one_d_problem();
        let m = fit_ovr(&x, &y, Regularization::L2, 0.1, &SolverConfig::default()).unwrap();
        assert!(predict(&m, &fv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn selected_channels_reads_nonzeros() {
        let m = LinearModel::new(
            vec![vec![0.0, 0.5, 0.0, -0.2], vec![0.0; 4]],
            vec![0.0, 0.0],
            Regularization::L1,
            0.1,
            vec![0.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        assert_eq!(selected_channels(&m, 0).unwrap().channels, vec![1, 3]);
        assert!(selected_channels(&m, 1).unwrap().channels.is_empty());
        assert!(selected_channels(&m, 7).is_err());
    }

    #[test]
    fn selected_channels_rejects_l2_models() {
        let (x, y) = one_d_problem();
        let m = fit_ovr(&x, &y, Regularization::L2, 0.1, &SolverConfig::default()).unwrap();
        assert!(selected_channels(&m, 0).is_err());
    }

    #[test]
    fn sparsity_report_counts() {
        let m = LinearModel::new(
            vec![vec![0.0; 64], {
                let mut w = vec![0.0; 64];
                w[3] = 1.0;
                w[10] = -2.0;
                w[63] = 0.5;
                w
            }],
            vec![0.0, 0.0],
            Regularization::L1,
            0.1,
            vec![0.0; 64],
            vec![1.0; 64],
        )
        .unwrap();
        let rep = sparsity_report(&m);
        assert_eq!(rep.per_class[0], (0, 0.0));
        assert_eq!(rep.per_class[1].0, 3);
        assert!((rep.per_class[1].1 - 4.6875).abs() < 1e-6);
    }

    #[test]
    fn shrinkage_is_monotone_over_lambda_ladder() {
        // Deterministic pseudo-random 6-D data, 3 classes.
        let mut state = 0x5a5a_5a5au64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) as f32
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for class in 0..3usize {
            for _ in 0..12 {
                let mut v = vec![0.0f32; 6];
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj = next() + if j == class { 1.5 } else { 0.0 };
                }
                x.push(fv(&v));
                y.push(class);
            }
        }
        let mut counts = Vec::new();
        for lambda in [0.01f32, 0.1, 1.0] {
            let m = fit_ovr(&x, &y, Regularization::L1, lambda, &SolverConfig::default()).unwrap();
            let total: usize = sparsity_report(&m).per_class.iter().map(|(c, _)| c).sum();
            counts.push(total);
        }
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let (x, y) = one_d_problem();
        for reg in [Regularization::L1, Regularization::L2] {
            let (_, traces) = fit_ovr_traced(&x, &y, reg, 0.05, &SolverConfig::default()).unwrap();
            for t in traces {
                for pair in t.objectives.windows(2) {
                    assert!(pair[1] <= pair[0] + 1e-12, "{:?}", pair);
                }
            }
        }
    }

    #[test]
    fn standardization_absorbs_feature_scaling() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let vals = [0.3f32, -0.2, 0.9, 0.5, -0.7, 0.1, 0.8, -0.4];
        for (i, &v) in vals.iter().enumerate() {
            x.push(fv(&[v, vals[(i + 3) % 8]]));
            y.push(i % 2);
        }
        let m1 = fit_ovr(&x, &y, Regularization::L1, 0.05, &SolverConfig::default()).unwrap();
        // Scale dimension 0 by an exact power of two.
        let x_scaled: Vec<FeatureVector> = x
            .iter()
            .map(|f| fv(&[f.data()[0] * 4.0, f.data()[1]]))
            .collect();
        let m2 = fit_ovr(&x_scaled, &y, Regularization::L1, 0.05, &SolverConfig::default()).unwrap();
        for (orig, scaled) in x.iter().zip(&x_scaled) {
            assert_eq!(
                predict(&m1, orig).unwrap().0,
                predict(&m2, scaled).unwrap().0
            );
        }
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let (x, _) = one_d_problem();
        assert!(fit_ovr(&x, &[0, 0], Regularization::L1, 0.1, &SolverConfig::default()).is_err());
        assert!(fit_ovr(&x, &[0, 1], Regularization::L1, -0.5, &SolverConfig::default()).is_err());
        let bad = vec![fv(&[f32::NAN]), fv(&[1.0])];
        assert!(fit_ovr(&bad, &[0, 1], Regularization::L1, 0.1, &SolverConfig::default()).is_err());
        let ragged = vec![fv(&[1.0]), fv(&[1.0, 2.0])];
        assert!(fit_ovr(&ragged, &[0, 1], Regularization::L1, 0.1, &SolverConfig::default()).is_err());
    }

    #[test]
    fn model_roundtrips_through_files() {
        let dir = std::env::temp_dir().join("fgparts-linear-io");
        std::fs::create_dir_all(&dir).unwrap();
        let (x, y) = one_d_problem();
        let m = fit_ovr(&x, &y, Regularization::L1, 0.01, &SolverConfig::default()).unwrap();
        let t = dir.join("m.tensor");
        let meta = dir.join("m.meta");
        save_linear_model(&m, &t, &meta).unwrap();
        let m2 = load_linear_model(&t, &meta).unwrap();
        assert_eq!(m, m2);
    }
}
