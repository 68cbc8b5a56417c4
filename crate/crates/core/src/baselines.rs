//! Aggregators that do not learn anything about the workers.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Probability vector over the classes of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn uniform(classes: usize) -> Self {
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn point(label: usize, classes: usize) -> Self {
        let mut probs = vec![0.0; classes];
        probs[label] = 1.0;
        Self { probs }
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        Self {
            probs: weights.iter().map(|w| w / total).collect(),
        }
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.probs)
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn label_counts(d: &Dataset) -> Result<Vec<Vec<usize>>> {
    let classes = d.class_count();
    (0..d.task_count())
        .map(|i| {
            let js = d.task_judgments(i);
            if js.is_empty() {
                return Err(Error::TaskWithoutJudgments(d.task_ids()[i].clone()));
            }
            let mut counts = vec![0usize; classes];
            for &j in js {
                counts[d.judgments()[j].label] += 1;
            }
            Ok(counts)
        })
        .collect()
}

/// Point mass on the most frequent label of each task.
pub fn majority_vote(d: &Dataset) -> Result<Vec<LabelDistribution>> {
    let classes = d.class_count();
    Ok(label_counts(d)?
        .into_iter()
        .map(|counts| {
            let counts: Vec<f64> = counts.into_iter().map(|c| c as f64).collect();
            LabelDistribution::point(argmax_lowest(&counts), classes)
        })
        .collect())
}

/// Empirical label frequencies of each task.
pub fn vote_distribution(d: &Dataset) -> Result<Vec<LabelDistribution>> {
    Ok(label_counts(d)?
        .into_iter()
        .map(|counts| {
            let w: Vec<f64> = counts.into_iter().map(|c| c as f64).collect();
            LabelDistribution::from_weights(&w)
        })
        .collect())
}

pub fn random_baseline(d: &Dataset) -> Vec<LabelDistribution> {
    vec![LabelDistribution::uniform(d.class_count()); d.task_count()]
}
