//! One-coin worker model fitted by expectation maximisation (binary labels).

use serde::{Deserialize, Serialize};

use crate::baselines::LabelDistribution;
use crate::data::Dataset;
use crate::error::{Error, Result};

const INITIAL_ACCURACY: f64 = 0.7;
const ACCURACY_BOUNDS: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneCoinModel {
    pub worker_accuracy: Vec<f64>,
    pub class_prior: Vec<f64>,
    pub task_posterior: Vec<LabelDistribution>,
    /// Observed-data log-likelihood before each M-step, in iteration order.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// E-step: task posteriors under the current parameters, and the
/// observed-data log-likelihood of those parameters.
fn expectation(
    d: &Dataset,
    accuracy: &[f64],
    prior: &[f64; 2],
    posterior: &mut [[f64; 2]],
) -> f64 {
    let mut ll = 0.0;
    for (i, post) in posterior.iter_mut().enumerate() {
        let mut logw = [prior[0].ln(), prior[1].ln()];
        for &j in d.task_judgments(i) {
            let jd = d.judgments()[j];
            let a = accuracy[jd.worker];
            for (c, lw) in logw.iter_mut().enumerate() {
                *lw += if jd.label == c { a.ln() } else { (1.0 - a).ln() };
            }
        }
        let m = logw[0].max(logw[1]);
        let (w0, w1) = ((logw[0] - m).exp(), (logw[1] - m).exp());
        ll += m + (w0 + w1).ln();
        *post = [w0 / (w0 + w1), w1 / (w0 + w1)];
    }
    ll
}

/// Fits the one-coin model. Stops when no parameter moves by more than
/// `tol`, or after `max_iters` rounds (`converged` is then false).
pub fn onecoin_em(d: &Dataset, max_iters: usize, tol: f64) -> Result<OneCoinModel> {
    if d.class_count() != 2 {
        return Err(Error::NotBinary(d.class_count()));
    }
    if let Some(i) = (0..d.task_count()).find(|&i| d.task_judgments(i).is_empty()) {
        return Err(Error::TaskWithoutJudgments(d.task_ids()[i].clone()));
    }
    let mut accuracy = vec![INITIAL_ACCURACY; d.worker_count()];
    let mut prior = [0.5, 0.5];
    let mut posterior = vec![[0.5; 2]; d.task_count()];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        trace.push(expectation(d, &accuracy, &prior, &mut posterior));

        let mut delta: f64 = 0.0;
        for (k, acc) in accuracy.iter_mut().enumerate() {
            let js = d.worker_judgments(k);
            if js.is_empty() {
                continue;
            }
            let agree: f64 = js
                .iter()
                .map(|&j| {
                    let jd = d.judgments()[j];
                    posterior[jd.task][jd.label]
                })
                .sum();
            let next = (agree / js.len() as f64).clamp(ACCURACY_BOUNDS.0, ACCURACY_BOUNDS.1);
            delta = delta.max((next - *acc).abs());
            *acc = next;
        }
        let n = d.task_count() as f64;
        let p1 = posterior.iter().map(|p| p[1]).sum::<f64>() / n;
        let next_prior = [1.0 - p1, p1];
        delta = delta.max((next_prior[1] - prior[1]).abs());
        prior = next_prior;

        if delta < tol {
            converged = true;
            break;
        }
    }
    trace.push(expectation(d, &accuracy, &prior, &mut posterior));
    debug_assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));

    Ok(OneCoinModel {
        worker_accuracy: accuracy,
        class_prior: prior.to_vec(),
        task_posterior: posterior
            .into_iter()
            .map(|p| LabelDistribution { probs: p.to_vec() })
            .collect(),
        log_likelihood: trace,
        iterations,
        converged,
    })
}
