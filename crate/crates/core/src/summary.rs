//! Model outputs and their on-disk representation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::LabelDistribution;
use crate::bcctime::TaskDuration;
use crate::data::{Dataset, Hyperparameters, TimeTransform};
use crate::error::{Error, Result};
use crate::output::{fmt_f64, write_atomic};
use crate::sampling::RandomSource;

/// Gibbs schedule shared by every sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSettings {
    /// Total sweeps per chain, burn-in included.
    pub iterations: usize,
    pub burnin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burnin: 500,
            chains: 1,
            seed: 0,
        }
    }
}

impl SamplerSettings {
    pub fn new(iterations: usize, burnin: usize, seed: u64) -> Self {
        Self {
            iterations,
            burnin,
            chains: 1,
            seed,
        }
    }

    pub fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burnin || self.chains == 0 {
            return Err(Error::InvalidIterationCounts {
                iterations: self.iterations,
                burnin: self.burnin,
            });
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burnin
    }
}

/// Runs one closure per chain, each with its own source forked from the
/// master seed. Results come back in chain order whatever the scheduling.
pub(crate) fn run_chains<T, F>(settings: &SamplerSettings, chain: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RandomSource) -> Result<T> + Sync,
{
    let master = RandomSource::new(settings.seed);
    if settings.chains == 1 {
        return Ok(vec![chain(master.fork(0))?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..settings.chains)
            .map(|c| {
                let rng = master.fork(c as u64);
                let chain = &chain;
                scope.spawn(move || chain(rng))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler chain panicked"))
            .collect()
    })
}

/// Element-wise mean of equally shaped vectors.
pub(crate) fn average(parts: impl IntoIterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut n = 0usize;
    let mut acc: Vec<f64> = Vec::new();
    for part in parts {
        if acc.is_empty() {
            acc = part;
        } else {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Row-stochastic C x C matrix; row `c` is the label distribution given true class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub(crate) fn from_flat(flat: &[f64], classes: usize) -> Self {
        Self {
            rows: flat.chunks(classes).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rows.iter().all(|r| {
            r.iter().all(|&x| x >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        })
    }

    pub fn diagonal_mass(&self) -> f64 {
        self.rows.iter().enumerate().map(|(c, r)| r[c]).sum()
    }

    pub fn off_diagonal_mass(&self) -> f64 {
        self.rows.len() as f64 - self.diagonal_mass()
    }
}

/// Posterior moments of one task's duration thresholds, in transformed units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub sigma_mean: f64,
    pub sigma_sd: f64,
    pub lambda_mean: f64,
    pub lambda_sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Retained sweeps over all chains.
    pub retained_samples: usize,
    /// Retained states with a valid judgment outside its task's window.
    pub indicator_violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burnin: Option<usize>,
    pub chains: Option<usize>,
    pub hyperparameters: Option<Hyperparameters>,
    pub time_transform: Option<TimeTransform>,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunMetadata {
    pub(crate) fn sampled(settings: &SamplerSettings, h: &Hyperparameters) -> Self {
        Self {
            seed: Some(settings.seed),
            iterations: Some(settings.iterations),
            burnin: Some(settings.burnin),
            chains: Some(settings.chains),
            hyperparameters: Some(h.clone()),
            time_transform: Some(h.time_transform),
            ..Default::default()
        }
    }
}

/// Everything a fitted aggregator reports. Per-task vectors follow the
/// dataset's task order, per-worker vectors its worker order and
/// `validity` its judgment order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub method: String,
    pub task_ids: Vec<String>,
    pub worker_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub labels: Vec<LabelDistribution>,
    pub confusion: Option<Vec<ConfusionMatrix>>,
    pub worker_accuracy: Option<Vec<f64>>,
    pub propensity: Option<Vec<f64>>,
    pub validity: Option<Vec<f64>>,
    pub communities: Option<Vec<usize>>,
    pub thresholds: Option<Vec<ThresholdStats>>,
    pub durations: Option<Vec<TaskDuration>>,
    pub diagnostics: Diagnostics,
    pub metadata: RunMetadata,
}

impl PosteriorSummary {
    pub fn new(method: &str, d: &Dataset, labels: Vec<LabelDistribution>) -> Self {
        Self {
            method: method.to_string(),
            task_ids: d.task_ids().to_vec(),
            worker_ids: d.worker_ids().to_vec(),
            class_names: d.label_space().names().to_vec(),
            labels,
            confusion: None,
            worker_accuracy: None,
            propensity: None,
            validity: None,
            communities: None,
            thresholds: None,
            durations: None,
            diagnostics: Diagnostics::default(),
            metadata: RunMetadata::default(),
        }
    }

    /// Hard labels, lowest index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        self.labels.iter().map(LabelDistribution::argmax).collect()
    }

    /// P(label = `class`) per task.
    pub fn scores(&self, class: usize) -> Vec<f64> {
        self.labels.iter().map(|l| l.probs[class]).collect()
    }

    pub fn labels_csv(&self) -> String {
        let mut out = String::from("task_id,label");
        for name in &self.class_names {
            let _ = write!(out, ",p_{name}");
        }
        out.push('\n');
        for (id, dist) in self.task_ids.iter().zip(&self.labels) {
            let _ = write!(out, "{},{}", csv_field(id), csv_field(&self.class_names[dist.argmax()]));
            for p in &dist.probs {
                let _ = write!(out, ",{}", fmt_f64(*p));
            }
            out.push('\n');
        }
        out
    }

    pub fn workers_csv(&self) -> String {
        let classes = self.class_names.len();
        let mut out = String::from("worker_id");
        if self.confusion.is_some() {
            for c in 0..classes {
                for j in 0..classes {
                    let _ = write!(out, ",pi_{c}_{j}");
                }
            }
        }
        if self.worker_accuracy.is_some() {
            out.push_str(",accuracy");
        }
        if self.propensity.is_some() {
            out.push_str(",propensity");
        }
        if self.communities.is_some() {
            out.push_str(",community");
        }
        out.push('\n');
        for (k, id) in self.worker_ids.iter().enumerate() {
            out.push_str(&csv_field(id));
            if let Some(cm) = &self.confusion {
                for x in cm[k].rows.iter().flatten() {
                    let _ = write!(out, ",{}", fmt_f64(*x));
                }
            }
            if let Some(a) = &self.worker_accuracy {
                let _ = write!(out, ",{}", fmt_f64(a[k]));
            }
            if let Some(p) = &self.propensity {
                let _ = write!(out, ",{}", fmt_f64(p[k]));
            }
            if let Some(m) = &self.communities {
                let _ = write!(out, ",{}", m[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn durations_csv(&self) -> Option<String> {
        let durations = self.durations.as_ref()?;
        let mut out = String::from(
            "task_id,sigma_mean,sigma_sd,lambda_mean,lambda_sd,lower_seconds,upper_seconds,half_width,midpoint,midpoint_seconds\n",
        );
        for t in durations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&t.task_id),
                fmt_f64(t.sigma_mean),
                fmt_f64(t.sigma_sd),
                fmt_f64(t.lambda_mean),
                fmt_f64(t.lambda_sd),
                fmt_f64(t.interval_seconds.0),
                fmt_f64(t.interval_seconds.1),
                fmt_f64(t.half_width),
                fmt_f64(t.midpoint),
                fmt_f64(t.midpoint_seconds),
            );
        }
        Some(out)
    }

    /// Per-judgment validity probabilities, keyed by (task, worker).
    pub fn validity_csv(&self, d: &Dataset) -> Option<String> {
        let validity = self.validity.as_ref()?;
        let mut out = String::from("task_id,worker_id,p_valid\n");
        for (jd, v) in d.judgments().iter().zip(validity) {
            let _ = writeln!(
                out,
                "{},{},{}",
                csv_field(&d.task_ids()[jd.task]),
                csv_field(&d.worker_ids()[jd.worker]),
                fmt_f64(*v)
            );
        }
        Some(out)
    }

    /// `run.json`: method, metadata and diagnostics.
    pub fn run_json(&self) -> Result<String> {
        let value = serde_json::json!({
            "method": self.method,
            "tasks": self.task_ids.len(),
            "workers": self.worker_ids.len(),
            "classes": self.class_names,
            "metadata": self.metadata,
            "diagnostics": self.diagnostics,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// Writes `labels.csv`, `workers.csv`, `run.json` and, where the model
    /// provides them, `durations.csv` and `validity.csv` into `dir`.
    pub fn write_dir(&self, d: &Dataset, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("labels.csv"), self.labels_csv().as_bytes())?;
        write_atomic(&dir.join("workers.csv"), self.workers_csv().as_bytes())?;
        if let Some(s) = self.durations_csv() {
            write_atomic(&dir.join("durations.csv"), s.as_bytes())?;
        }
        if let Some(s) = self.validity_csv(d) {
            write_atomic(&dir.join("validity.csv"), s.as_bytes())?;
        }
        write_atomic(&dir.join("run.json"), self.run_json()?.as_bytes())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
