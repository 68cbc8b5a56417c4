//! Forward sampler for the time-aware generative process, with planted
//! ground truth for recovery tests.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_gold_csv, write_judgments_csv, Dataset, JudgmentRecord, LabelSpace};
use crate::error::{Error, Result};
use crate::output::write_atomic;
use crate::sampling::RandomSource;

/// Per-task duration window, in log-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WindowSpec {
    /// Every task shares `(lower, upper)`.
    Global { lower: f64, upper: f64 },
    /// Each task's window is `(lower, upper)` shifted by a uniform draw
    /// in `[-jitter, jitter]`.
    Jittered { lower: f64, upper: f64, jitter: f64 },
}

impl WindowSpec {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            WindowSpec::Global { lower, upper } | WindowSpec::Jittered { lower, upper, .. } => {
                (lower, upper)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tasks: usize,
    pub workers: usize,
    pub classes: usize,
    /// `floor(spammer_fraction * workers)` workers never make a valid attempt.
    pub spammer_fraction: f64,
    /// Diagonal of every reliable worker's confusion matrix.
    pub reliable_accuracy: f64,
    /// Chance that a reliable worker's judgment is a genuine attempt.
    pub reliable_propensity: f64,
    pub window: WindowSpec,
    /// Spam times land up to this factor beyond the window edge, on either
    /// side. Must exceed 1.
    pub outlier_scale: f64,
    pub judgments_per_task: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tasks: 200,
            workers: 30,
            classes: 2,
            spammer_fraction: 0.2,
            reliable_accuracy: 0.85,
            reliable_propensity: 1.0,
            window: WindowSpec::Global {
                lower: 10f64.ln(),
                upper: 50f64.ln(),
            },
            outlier_scale: 50.0,
            judgments_per_task: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.tasks == 0 || self.workers == 0 {
            return bad("need at least one task and one worker".into());
        }
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if !(0.0..1.0).contains(&self.spammer_fraction) {
            return bad(format!("spammer fraction {} not in [0, 1)", self.spammer_fraction));
        }
        let chance = 1.0 / self.classes as f64;
        if !(self.reliable_accuracy > chance && self.reliable_accuracy <= 1.0) {
            return bad(format!(
                "reliable accuracy {} not in ({chance}, 1]",
                self.reliable_accuracy
            ));
        }
        if !(self.reliable_propensity > 0.0 && self.reliable_propensity <= 1.0) {
            return bad(format!("reliable propensity {} not in (0, 1]", self.reliable_propensity));
        }
        let (lo, hi) = self.window.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("window lower {lo} must be below upper {hi}"));
        }
        if let WindowSpec::Jittered { jitter, .. } = self.window {
            if !(jitter >= 0.0 && jitter.is_finite()) {
                return bad(format!("window jitter {jitter} must be non-negative"));
            }
        }
        if !(self.outlier_scale > 1.0 && self.outlier_scale.is_finite()) {
            return bad(format!("outlier scale {} must exceed 1", self.outlier_scale));
        }
        if self.judgments_per_task == 0 || self.judgments_per_task > self.workers {
            return bad(format!(
                "judgments per task {} not in [1, {}]",
                self.judgments_per_task, self.workers
            ));
        }
        Ok(())
    }

    pub fn spammer_count(&self) -> usize {
        (self.spammer_fraction * self.workers as f64).floor() as usize
    }
}

/// Planted latent state, aligned with the generated dataset's dense indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub task_ids: Vec<String>,
    pub worker_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub spammer: Vec<bool>,
    pub propensity: Vec<f64>,
    /// `(lower, upper)` in log-seconds.
    pub windows: Vec<(f64, f64)>,
    /// Row-major C x C matrix per worker; spammers get the uniform matrix.
    pub confusion: Vec<Vec<Vec<f64>>>,
    /// Validity of each judgment, in dataset order.
    pub valid: Vec<bool>,
}

impl GroundTruth {
    pub fn spammer_total(&self) -> usize {
        self.spammer.iter().filter(|&&s| s).count()
    }
}

/// Uniform draw in the open interval `(lo, hi)`.
fn open_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if x > lo && x < hi {
            return x;
        }
    }
}

fn draw_label<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    row.len() - 1
}

/// Samples a dataset (times in seconds, untransformed) and its ground truth.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = RandomSource::new(config.seed);
    let classes = config.classes;

    let task_ids: Vec<String> = (0..config.tasks).map(|i| format!("t{i:05}")).collect();
    let worker_ids: Vec<String> = (0..config.workers).map(|k| format!("w{k:04}")).collect();

    let mut order: Vec<usize> = (0..config.workers).collect();
    order.shuffle(&mut rng);
    let mut spammer = vec![false; config.workers];
    for &k in &order[..config.spammer_count()] {
        spammer[k] = true;
    }
    let propensity: Vec<f64> = spammer
        .iter()
        .map(|&s| if s { 0.0 } else { config.reliable_propensity })
        .collect();

    let off = (1.0 - config.reliable_accuracy) / (classes - 1) as f64;
    let reliable: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            (0..classes)
                .map(|j| if j == c { config.reliable_accuracy } else { off })
                .collect()
        })
        .collect();
    let uniform = vec![vec![1.0 / classes as f64; classes]; classes];
    let spam_row = vec![1.0 / classes as f64; classes];
    let confusion: Vec<Vec<Vec<f64>>> = spammer
        .iter()
        .map(|&s| if s { uniform.clone() } else { reliable.clone() })
        .collect();

    let labels: Vec<usize> = (0..config.tasks).map(|_| rng.random_range(0..classes)).collect();
    let windows: Vec<(f64, f64)> = (0..config.tasks)
        .map(|_| match config.window {
            WindowSpec::Global { lower, upper } => (lower, upper),
            WindowSpec::Jittered { lower, upper, jitter } => {
                let shift = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
                (lower + shift, upper + shift)
            }
        })
        .collect();

    let max_offset = config.outlier_scale.ln();
    let mut records = Vec::with_capacity(config.tasks * config.judgments_per_task);
    let mut valid = Vec::with_capacity(records.capacity());
    for i in 0..config.tasks {
        let (lo, hi) = windows[i];
        let mut chosen = index::sample(&mut rng, config.workers, config.judgments_per_task).into_vec();
        chosen.sort_unstable();
        for k in chosen {
            let is_valid = rng.random::<f64>() < propensity[k];
            let (label, log_time) = if is_valid {
                (draw_label(&confusion[k][labels[i]], &mut rng), open_uniform(lo, hi, &mut rng))
            } else {
                let offset = open_uniform(0.1 * max_offset, max_offset, &mut rng);
                let t = if rng.random::<bool>() { lo - offset } else { hi + offset };
                (draw_label(&spam_row, &mut rng), t)
            };
            records.push(JudgmentRecord {
                task_id: task_ids[i].clone(),
                worker_id: worker_ids[k].clone(),
                label,
                time_seconds: log_time.exp(),
            });
            valid.push(is_valid);
        }
    }

    let gold: HashMap<String, usize> =
        task_ids.iter().cloned().zip(labels.iter().copied()).collect();
    let d = Dataset::new(LabelSpace::new(classes)?, records, Some(gold))?;

    // Re-align worker-level truth with the dataset's first-appearance order.
    let by_id: HashMap<&str, usize> =
        worker_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let perm: Vec<usize> = d.worker_ids().iter().map(|id| by_id[id.as_str()]).collect();
    let truth = GroundTruth {
        config: config.clone(),
        task_ids: d.task_ids().to_vec(),
        worker_ids: d.worker_ids().to_vec(),
        labels,
        spammer: perm.iter().map(|&k| spammer[k]).collect(),
        propensity: perm.iter().map(|&k| propensity[k]).collect(),
        windows,
        confusion: perm.iter().map(|&k| confusion[k].clone()).collect(),
        valid,
    };
    Ok((d, truth))
}

/// Writes `judgments.csv`, `gold.csv` and `truth.json` into `dir`.
pub fn write_synthetic(d: &Dataset, truth: &GroundTruth, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_judgments_csv(d, &dir.join("judgments.csv"))?;
    write_gold_csv(d, &dir.join("gold.csv"))?;
    let json = serde_json::to_string_pretty(truth)?;
    write_atomic(&dir.join("truth.json"), json.as_bytes())
}
