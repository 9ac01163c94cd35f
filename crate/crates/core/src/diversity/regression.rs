//! Per-user L2-regularized logistic regression of "is this the winner?" on
//! response features.
//!
//! For `n` rows the objective is
//! `(1/n) * sum_i [log(1 + e^{z_i}) - y_i z_i] + (lambda / 2n) * |w|^2`
//! with `z = Xw + b`; the intercept is not penalized. Features are z-scored
//! (sample std) over the user's rows first. Optimization is damped Newton
//! with an Armijo backtracking line search from `w = 0, b = 0`, so the loss
//! never increases between iterations.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::persona::{self, Persona};

use super::features::FeatureTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub prompt_id: String,
    pub winner_model: String,
    pub loser_model: String,
}

/// The persona's winner/loser on each prompt.
pub fn labeled_pairs(persona: &Persona, corpus: &Corpus, prompt_ids: &[String]) -> Result<Vec<LabeledPair>> {
    prompt_ids
        .iter()
        .map(|id| {
            let w = persona::pick_winner(persona, id, corpus)?;
            let l = persona::pick_loser(persona, id, corpus)?;
            Ok(LabeledPair {
                prompt_id: id.clone(),
                winner_model: corpus.model_ids()[w].clone(),
                loser_model: corpus.model_ids()[l].clone(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionOptions {
    pub l2: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            l2: 1.0,
            grad_tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub persona_id: String,
    pub feature_names: Vec<String>,
    /// Coefficients on z-scored features; 0 for dropped features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Zero-variance features excluded from the fit.
    pub dropped: Vec<String>,
    /// Objective value at the start and after every iteration.
    pub loss_history: Vec<f64>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

pub fn fit_user_regression(
    persona_id: &str,
    pairs: &[LabeledPair],
    features: &FeatureTable,
    opts: &RegressionOptions,
) -> Result<RegressionResult> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("no labeled pairs for `{persona_id}`")));
    }
    let mut rows = Vec::with_capacity(pairs.len() * 2);
    let mut labels = Vec::with_capacity(pairs.len() * 2);
    for pair in pairs {
        for (model, y) in [(&pair.winner_model, 1.0), (&pair.loser_model, 0.0)] {
            let row = features.get(&pair.prompt_id, model).ok_or_else(|| Error::NotFound {
                what: "feature row",
                id: format!("{}::{model}", pair.prompt_id),
            })?;
            rows.push(row.to_vec());
            labels.push(y);
        }
    }
    let d = features.names.len();
    let (scaled, kept) = standardize(&rows, d);
    let dropped = (0..d)
        .filter(|j| !kept.contains(j))
        .map(|j| features.names[j].clone())
        .collect();
    let fit = fit_logistic(&scaled, &labels, opts);
    let mut coefficients = vec![0.0; d];
    for (k, &j) in kept.iter().enumerate() {
        coefficients[j] = fit.weights[k];
    }
    Ok(RegressionResult {
        persona_id: persona_id.to_string(),
        feature_names: features.names.clone(),
        coefficients,
        intercept: fit.intercept,
        converged: fit.converged,
        iterations: fit.iterations,
        dropped,
        loss_history: fit.loss_history,
    })
}

/// Z-scores each column with the sample std; returns the kept (non-constant)
/// columns and their original indices.
pub fn standardize(rows: &[Vec<f64>], d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rows.len() as f64;
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std = var.sqrt();
        if std > 1e-12 * mean.abs().max(1.0) {
            kept.push(j);
            stats.push((mean, std));
        }
    }
    let scaled = rows
        .iter()
        .map(|r| kept.iter().zip(&stats).map(|(&j, (m, s))| (r[j] - m) / s).collect())
        .collect();
    (scaled, kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameters are `[w_0, ..., w_{d-1}, b]`.
fn objective(x: &[Vec<f64>], y: &[f64], theta: &[f64], l2: f64) -> f64 {
    let d = theta.len() - 1;
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &yi)| {
            let z = r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
            log1p_exp(z) - yi * z
        })
        .sum();
    let reg: f64 = theta[..d].iter().map(|w| w * w).sum();
    data / n + 0.5 * l2 * reg / n
}

#[allow(clippy::needless_range_loop)]
fn gradient_hessian(x: &[Vec<f64>], y: &[f64], theta: &[f64], l2: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = theta.len() - 1;
    let n = x.len() as f64;
    let mut g = vec![0.0; d + 1];
    let mut h = vec![vec![0.0; d + 1]; d + 1];
    for (r, &yi) in x.iter().zip(y) {
        let z = r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
        let p = sigmoid(z);
        let s = p * (1.0 - p);
        let feat = |k: usize| if k == d { 1.0 } else { r[k] };
        for a in 0..=d {
            g[a] += (p - yi) * feat(a);
            for b in a..=d {
                h[a][b] += s * feat(a) * feat(b);
            }
        }
    }
    for a in 0..=d {
        g[a] /= n;
        for b in a..=d {
            h[a][b] /= n;
            h[b][a] = h[a][b];
        }
    }
    for k in 0..d {
        g[k] += l2 * theta[k] / n;
        h[k][k] += l2 / n;
    }
    (g, h)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

pub fn fit_logistic(x: &[Vec<f64>], y: &[f64], opts: &RegressionOptions) -> LogisticFit {
    let d = x.first().map_or(0, Vec::len);
    let mut theta = vec![0.0; d + 1];
    let mut loss = objective(x, y, &theta, opts.l2);
    let mut history = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (g, mut h) = gradient_hessian(x, y, &theta, opts.l2);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = solve(h.clone(), g.clone()).unwrap_or_else(|| {
            // Singular curvature (all-label-one data without features): ridge it.
            for (k, row) in h.iter_mut().enumerate() {
                row[k] += 1e-8;
            }
            solve(h, g.clone()).unwrap_or_else(|| g.clone())
        });
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut next;
        let mut next_loss;
        loop {
            next = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect::<Vec<_>>();
            next_loss = objective(x, y, &next, opts.l2);
            if next_loss <= loss - 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        if next_loss > loss {
            // No descent possible at machine precision.
            history.push(loss);
            break;
        }
        theta = next;
        loss = next_loss;
        history.push(loss);
    }
    if !converged {
        let (g, _) = gradient_hessian(x, y, &theta, opts.l2);
        converged = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol;
    }
    LogisticFit {
        intercept: theta[d],
        weights: theta[..d].to_vec(),
        converged,
        iterations,
        loss_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::features::FeatureKind;

    fn table_from(rows: &[(&str, &str, Vec<f64>)], names: &[&str]) -> FeatureTable {
        let mut t = FeatureTable::new(names.iter().map(|s| s.to_string()).collect(), FeatureKind::Syntactic);
        for (p, m, v) in rows {
            t.insert(p, m, v.clone()).unwrap();
        }
        t
    }

    #[test]
    fn larger_feature_wins_gives_positive_coefficient() {
        let mut rows = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..20 {
            let p = format!("p{i}");
            let base = i as f64;
            rows.push((p.clone(), "w", vec![base + 3.0, (i % 3) as f64]));
            rows.push((p.clone(), "l", vec![base, (i % 3) as f64]));
            pairs.push(LabeledPair {
                prompt_id: p,
                winner_model: "w".into(),
                loser_model: "l".into(),
            });
        }
        let rows: Vec<(&str, &str, Vec<f64>)> = rows.iter().map(|(p, m, v)| (p.as_str(), *m, v.clone())).collect();
        let t = table_from(&rows, &["f", "g"]);
        let r = fit_user_regression("u", &pairs, &t, &RegressionOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.coefficient("f").unwrap() > 0.0);
        // `g` ties within every pair; it only picks up its sample correlation with `f`.
        assert!(r.coefficient("g").unwrap().abs() < 0.1 * r.coefficient("f").unwrap());
    }

    #[test]
    fn identical_winner_loser_features_give_zero_coefficients() {
        let rows: Vec<(String, Vec<f64>)> = (0..10)
            .map(|i| (format!("p{i}"), vec![i as f64, (i * i) as f64]))
            .collect();
        let mut t = FeatureTable::new(vec!["a".into(), "b".into()], FeatureKind::Syntactic);
        let mut pairs = Vec::new();
        for (p, v) in &rows {
            t.insert(p, "w", v.clone()).unwrap();
            t.insert(p, "l", v.clone()).unwrap();
            pairs.push(LabeledPair {
                prompt_id: p.clone(),
                winner_model: "w".into(),
                loser_model: "l".into(),
            });
        }
        let r = fit_user_regression("u", &pairs, &t, &RegressionOptions::default()).unwrap();
        for c in &r.coefficients {
            assert!(c.abs() < 1e-6);
        }
        assert!(r.intercept.abs() < 1e-6);
    }

    #[test]
    fn constant_feature_dropped() {
        let t = table_from(
            &[
                ("p0", "w", vec![1.0, 5.0]),
                ("p0", "l", vec![0.0, 5.0]),
                ("p1", "w", vec![2.0, 5.0]),
                ("p1", "l", vec![1.5, 5.0]),
            ],
            &["x", "const"],
        );
        let pairs = ["p0", "p1"]
            .iter()
            .map(|p| LabeledPair {
                prompt_id: p.to_string(),
                winner_model: "w".into(),
                loser_model: "l".into(),
            })
            .collect::<Vec<_>>();
        let r = fit_user_regression("u", &pairs, &t, &RegressionOptions::default()).unwrap();
        assert_eq!(r.dropped, vec!["const".to_string()]);
        assert_eq!(r.coefficient("const"), Some(0.0));
    }

    #[test]
    fn missing_feature_row() {
        let t = table_from(&[("p0", "w", vec![1.0])], &["x"]);
        let pairs = vec![LabeledPair {
            prompt_id: "p0".into(),
            winner_model: "w".into(),
            loser_model: "l".into(),
        }];
        assert!(matches!(
            fit_user_regression("u", &pairs, &t, &RegressionOptions::default()),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn solver_matches_known_system() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }
}
