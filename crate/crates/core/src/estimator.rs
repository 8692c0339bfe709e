//! Travel-time estimation by a logit forward pass and a frozen-probability
//! gradient.
//!
//! Forward: path costs `c_path = A t`, route probabilities
//! `P = softmax(-theta * c_path)` within each (OD, interval) block, and the
//! expected OD travel time `c_hat = P c_path`. Backward: the gradient of the
//! weighted squared error with `P` held at its current value,
//! `-2/W * Aᵀ Pᵀ W (c̃ - c_hat)`, plus the prior penalties. Updates use
//! AdaGrad and are projected onto `t >= 0`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::vectorize::{Incidence, RowIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Start from the prior vector.
    Prior,
    /// Start from independent uniform draws in [0.5, 5] minutes.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PRefresh {
    Batch,
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub theta_init: f64,
    pub theta_learnable: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adagrad_epsilon: f64,
    pub prior_weight_links: f64,
    pub prior_weight_waits: f64,
    /// Stop once the relative change of the epoch loss stays below this for
    /// `patience` consecutive epochs.
    pub convergence_tol: f64,
    pub patience: usize,
    pub init: Init,
    pub p_refresh: PRefresh,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            theta_init: 0.3,
            theta_learnable: false,
            learning_rate: 0.1,
            batch_size: 8,
            max_epochs: 200,
            adagrad_epsilon: 1e-8,
            prior_weight_links: 0.0,
            prior_weight_waits: 0.0,
            convergence_tol: 1e-5,
            patience: 3,
            init: Init::Prior,
            p_refresh: PRefresh::Batch,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("theta_init", self.theta_init)?;
        positive("adagrad_epsilon", self.adagrad_epsilon)?;
        positive("convergence_tol", self.convergence_tol)?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("prior_weight_links", self.prior_weight_links),
            ("prior_weight_waits", self.prior_weight_waits),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the fit needs besides the configuration.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub a: &'a Incidence,
    pub rows: &'a RowIndex,
    /// Observed mean travel time per OD row.
    pub c_tilde: &'a [f64],
    /// Per-OD-row weight in the squared error.
    pub weights: &'a [f64],
    /// Prior value of every variable.
    pub priors: &'a [f64],
    /// Columns `0..n_link_columns` are links, the rest are waits.
    pub n_link_columns: usize,
}

impl Problem<'_> {
    pub fn check(&self) -> Result<()> {
        let n_od = self.rows.n_od_rows();
        let mismatch = |what: &str, got: usize, want: usize| {
            Err(Error::DimensionMismatch(format!(
                "{what}: {got}, expected {want}"
            )))
        };
        if self.a.n_rows != self.rows.n_path_rows() {
            return mismatch("matrix rows", self.a.n_rows, self.rows.n_path_rows());
        }
        if self.c_tilde.len() != n_od {
            return mismatch("observations", self.c_tilde.len(), n_od);
        }
        if self.weights.len() != n_od {
            return mismatch("row weights", self.weights.len(), n_od);
        }
        if self.priors.len() != self.a.n_cols {
            return mismatch("priors", self.priors.len(), self.a.n_cols);
        }
        if self.n_link_columns > self.a.n_cols {
            return mismatch("link columns", self.n_link_columns, self.a.n_cols);
        }
        if self.c_tilde.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observations"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::NonFinite("row weights"));
        }
        Ok(())
    }

    fn all_rows(&self) -> Vec<usize> {
        (0..self.rows.n_od_rows()).collect()
    }
}

/// Max-shifted softmax of `-theta * costs`.
pub fn softmax_neg(costs: &[f64], theta: f64) -> Vec<f64> {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = costs.iter().map(|&c| (-theta * (c - min)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Forward pass over a set of OD rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// Path cost for every path row (zero for rows outside the evaluated set).
    pub c_path: Vec<f64>,
    /// Route probability for every path row, block-stochastic per OD row.
    pub p: Vec<f64>,
    /// Expected travel time for every OD row.
    pub c_hat: Vec<f64>,
}

pub fn forward(a: &Incidence, rows: &RowIndex, t: &[f64], theta: f64) -> Result<Forward> {
    let all: Vec<usize> = (0..rows.n_od_rows()).collect();
    forward_rows(a, rows, t, theta, &all)
}

fn forward_rows(
    a: &Incidence,
    rows: &RowIndex,
    t: &[f64],
    theta: f64,
    od_rows: &[usize],
) -> Result<Forward> {
    if t.len() != a.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "t has {} entries for {} columns",
            t.len(),
            a.n_cols
        )));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t"));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::NonFinite("theta"));
    }
    let blocks: Vec<(usize, Vec<f64>, Vec<f64>, f64)> = od_rows
        .par_iter()
        .map(|&i| {
            let range = rows.blocks[i].clone();
            let costs: Vec<f64> = range
                .clone()
                .map(|r| a.row(r).iter().map(|&c| t[c]).sum())
                .collect();
            let p = softmax_neg(&costs, theta);
            let c_hat = p.iter().zip(&costs).map(|(p, c)| p * c).sum();
            (i, costs, p, c_hat)
        })
        .collect();

    let mut out = Forward {
        c_path: vec![0.0; a.n_rows],
        p: vec![0.0; a.n_rows],
        c_hat: vec![0.0; rows.n_od_rows()],
    };
    for (i, costs, p, c_hat) in blocks {
        let start = rows.blocks[i].start;
        out.c_path[start..start + costs.len()].copy_from_slice(&costs);
        out.p[start..start + p.len()].copy_from_slice(&p);
        out.c_hat[i] = c_hat;
    }
    Ok(out)
}

/// Weighted mean squared error over the given OD rows.
pub fn weighted_mse(c_hat: &[f64], c_tilde: &[f64], weights: &[f64], od_rows: &[usize]) -> f64 {
    let (num, den) = od_rows.iter().fold((0.0, 0.0), |(n, d), &i| {
        let e = c_tilde[i] - c_hat[i];
        (n + weights[i] * e * e, d + weights[i])
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Squared-error penalty pulling links and waits towards their priors.
pub fn prior_penalty(
    t: &[f64],
    priors: &[f64],
    n_link_columns: usize,
    lambda_links: f64,
    lambda_waits: f64,
) -> f64 {
    let sq =
        |range: std::ops::Range<usize>| -> f64 { range.map(|c| (t[c] - priors[c]).powi(2)).sum() };
    let mut total = 0.0;
    if lambda_links > 0.0 {
        total += lambda_links * sq(0..n_link_columns);
    }
    if lambda_waits > 0.0 {
        total += lambda_waits * sq(n_link_columns..t.len());
    }
    total
}

/// Mean squared error between estimated and observed OD times (all rows
/// weighted equally) plus the prior penalties.
pub fn loss(
    c_hat: &[f64],
    c_tilde: &[f64],
    t: &[f64],
    priors: &[f64],
    n_link_columns: usize,
    lambda_links: f64,
    lambda_waits: f64,
) -> f64 {
    let rows: Vec<usize> = (0..c_hat.len()).collect();
    let w = vec![1.0; c_hat.len()];
    weighted_mse(c_hat, c_tilde, &w, &rows)
        + prior_penalty(t, priors, n_link_columns, lambda_links, lambda_waits)
}

/// Objective of `problem` at `t` with route probabilities recomputed from
/// `t`, restricted to `od_rows`.
pub fn objective(
    problem: &Problem,
    t: &[f64],
    theta: f64,
    lambdas: (f64, f64),
    od_rows: &[usize],
) -> Result<f64> {
    let fw = forward_rows(problem.a, problem.rows, t, theta, od_rows)?;
    Ok(
        weighted_mse(&fw.c_hat, problem.c_tilde, problem.weights, od_rows)
            + prior_penalty(
                t,
                problem.priors,
                problem.n_link_columns,
                lambdas.0,
                lambdas.1,
            ),
    )
}

/// Objective with the route probabilities frozen at `p`.
pub fn objective_fixed_p(
    problem: &Problem,
    t: &[f64],
    p: &[f64],
    lambdas: (f64, f64),
    od_rows: &[usize],
) -> f64 {
    let mut c_hat = vec![0.0; problem.rows.n_od_rows()];
    for &i in od_rows {
        c_hat[i] = problem.rows.blocks[i]
            .clone()
            .map(|r| p[r] * problem.a.row(r).iter().map(|&c| t[c]).sum::<f64>())
            .sum();
    }
    weighted_mse(&c_hat, problem.c_tilde, problem.weights, od_rows)
        + prior_penalty(
            t,
            problem.priors,
            problem.n_link_columns,
            lambdas.0,
            lambdas.1,
        )
}

/// Gradient of the objective over `od_rows` with respect to `t`, treating
/// the route probabilities `p` as constants.
pub fn backward_fixed_p(
    problem: &Problem,
    t: &[f64],
    p: &[f64],
    lambdas: (f64, f64),
    od_rows: &[usize],
) -> Result<Vec<f64>> {
    let (a, rows) = (problem.a, problem.rows);
    if t.len() != a.n_cols || p.len() != a.n_rows {
        return Err(Error::DimensionMismatch(format!(
            "t has {} entries for {} columns, p has {} for {} rows",
            t.len(),
            a.n_cols,
            p.len(),
            a.n_rows
        )));
    }
    let total_weight: f64 = od_rows.iter().map(|&i| problem.weights[i]).sum();
    let mut grad = vec![0.0; a.n_cols];
    if total_weight > 0.0 {
        for &i in od_rows {
            let block = rows.blocks[i].clone();
            let c_hat: f64 = block
                .clone()
                .map(|r| p[r] * a.row(r).iter().map(|&c| t[c]).sum::<f64>())
                .sum();
            let scale = -2.0 * problem.weights[i] * (problem.c_tilde[i] - c_hat) / total_weight;
            for r in block {
                let s = scale * p[r];
                for &c in a.row(r) {
                    grad[c] += s;
                }
            }
        }
    }
    let (lambda_links, lambda_waits) = lambdas;
    for (c, g) in grad.iter_mut().enumerate() {
        let lambda = if c < problem.n_link_columns {
            lambda_links
        } else {
            lambda_waits
        };
        if lambda > 0.0 {
            *g += 2.0 * lambda * (t[c] - problem.priors[c]);
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub t_hat: Vec<f64>,
    pub theta_hat: f64,
    pub initial_loss: f64,
    /// Objective over all rows at the end of each epoch.
    pub loss_history: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// Expected travel time per OD row at `t_hat`.
    pub c_hat: Vec<f64>,
    /// Columns no path row touches; they keep their initial value.
    pub not_updated: Vec<usize>,
    /// R² of `c_hat` against the observations, when defined.
    pub r2_od: Option<f64>,
}

pub fn initial_vector(problem: &Problem, cfg: &EstimatorConfig) -> Vec<f64> {
    match cfg.init {
        Init::Prior => problem.priors.iter().map(|&v| v.max(0.0)).collect(),
        Init::Random => {
            let mut rng = rng::stream(cfg.seed, &[label::INIT]);
            (0..problem.a.n_cols)
                .map(|_| rng.random_range(0.5..5.0))
                .collect()
        }
    }
}

/// Mini-batch projected AdaGrad.
pub fn fit(problem: &Problem, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    problem.check()?;
    if problem.rows.n_od_rows() == 0 {
        return Err(Error::NoObservations);
    }
    let n = problem.a.n_cols;
    let lambdas = (cfg.prior_weight_links, cfg.prior_weight_waits);
    let counts = problem.a.column_counts();
    let frozen: Vec<bool> = counts.iter().map(|&c| c == 0).collect();
    let not_updated: Vec<usize> = (0..n).filter(|&c| frozen[c]).collect();

    let mut t = initial_vector(problem, cfg);
    let mut theta = cfg.theta_init;
    let mut accum = vec![0.0; n];
    let mut theta_accum = 0.0;
    let all = problem.all_rows();

    let initial_loss = objective(problem, &t, theta, lambdas, &all)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite("initial loss"));
    }
    let mut last_t = t.clone();
    let mut last_loss = initial_loss;
    let mut loss_history = Vec::with_capacity(cfg.max_epochs);
    let mut calm_epochs = 0;
    let mut converged = false;
    let mut order = all.clone();

    for epoch in 0..cfg.max_epochs {
        let mut rng = rng::stream(cfg.seed, &[label::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let epoch_p = match cfg.p_refresh {
            PRefresh::Epoch => Some(forward(problem.a, problem.rows, &t, theta)?.p),
            PRefresh::Batch => None,
        };
        for batch in order.chunks(cfg.batch_size) {
            let p = match &epoch_p {
                Some(p) => p.clone(),
                None => forward_rows(problem.a, problem.rows, &t, theta, batch)?.p,
            };
            let grad = backward_fixed_p(problem, &t, &p, lambdas, batch)?;
            let theta_grad = if cfg.theta_learnable {
                Some(theta_derivative(problem, &t, theta, lambdas, batch)?)
            } else {
                None
            };
            for c in 0..n {
                if frozen[c] {
                    continue;
                }
                accum[c] += grad[c] * grad[c];
                t[c] -= cfg.learning_rate * grad[c] / (accum[c].sqrt() + cfg.adagrad_epsilon);
                t[c] = t[c].max(0.0);
            }
            if let Some(g) = theta_grad {
                theta_accum += g * g;
                theta -= cfg.learning_rate * g / (theta_accum.sqrt() + cfg.adagrad_epsilon);
                theta = theta.max(1e-6);
            }
        }

        let epoch_loss = match objective(problem, &t, theta, lambdas, &all) {
            Ok(l) if l.is_finite() => l,
            _ => {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_t: last_t,
                    last_finite_loss: last_loss,
                })
            }
        };
        let rel = (last_loss - epoch_loss).abs() / last_loss.max(f64::MIN_POSITIVE);
        loss_history.push(epoch_loss);
        last_t.clone_from(&t);
        last_loss = epoch_loss;
        if rel < cfg.convergence_tol {
            calm_epochs += 1;
            if calm_epochs >= cfg.patience {
                converged = true;
                break;
            }
        } else {
            calm_epochs = 0;
        }
    }

    let fw = forward(problem.a, problem.rows, &t, theta)?;
    let r2_od = r_squared(&fw.c_hat, problem.c_tilde).ok();
    Ok(EstimationResult {
        t_hat: t,
        theta_hat: theta,
        initial_loss,
        epochs: loss_history.len(),
        loss_history,
        converged,
        c_hat: fw.c_hat,
        not_updated,
        r2_od,
    })
}

/// Central finite difference of the objective in `theta`.
pub fn theta_derivative(
    problem: &Problem,
    t: &[f64],
    theta: f64,
    lambdas: (f64, f64),
    od_rows: &[usize],
) -> Result<f64> {
    let h = (theta * 1e-4).max(1e-8);
    let up = objective(problem, t, theta + h, lambdas, od_rows)?;
    let down = objective(
        problem,
        t,
        (theta - h).max(f64::MIN_POSITIVE),
        lambdas,
        od_rows,
    )?;
    Ok((up - down) / (2.0 * h))
}

/// Coefficient of determination of `predicted` against `truth`.
pub fn r_squared(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} values",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::UndefinedR2);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2);
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, y)| (y - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
