//! Judgments, gold labels, hyperparameters and their CSV representation.
//!
//! A [`Dataset`] is built once and never mutated afterwards; every model takes
//! it by shared reference. Tasks and workers are given dense indices in order
//! of first appearance, and all model outputs are laid out by those indices.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::write_atomic;

/// The set of classes a task can belong to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    class_names: Vec<String>,
}

impl LabelSpace {
    /// Label space with names `"0"`, `"1"`, ... `"C-1"`.
    pub fn new(class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        Ok(Self {
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
        })
    }

    pub fn with_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let class_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if class_names.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let unique: HashSet<&str> = class_names.iter().map(String::as_str).collect();
        if unique.len() != class_names.len() {
            return Err(Error::InvalidLabelSpace("duplicate class names".into()));
        }
        Ok(Self { class_names })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn name(&self, label: usize) -> &str {
        &self.class_names[label]
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    /// Resolves a label string, trying class names first and then a
    /// zero-based integer index.
    pub fn parse(&self, raw: &str) -> Option<usize> {
        let raw = raw.trim();
        if let Some(i) = self.class_names.iter().position(|n| n == raw) {
            return Some(i);
        }
        raw.parse::<usize>()
            .ok()
            .filter(|&i| i < self.class_count())
    }
}

/// How completion times are represented inside a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeTransform {
    #[default]
    Log,
    None,
}

impl TimeTransform {
    pub fn apply(self, seconds: f64) -> f64 {
        match self {
            TimeTransform::Log => seconds.ln(),
            TimeTransform::None => seconds,
        }
    }

    pub fn invert(self, value: f64) -> f64 {
        match self {
            TimeTransform::Log => value.exp(),
            TimeTransform::None => value,
        }
    }
}

impl fmt::Display for TimeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeTransform::Log => "log",
            TimeTransform::None => "none",
        })
    }
}

impl std::str::FromStr for TimeTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "log" => Ok(TimeTransform::Log),
            "none" => Ok(TimeTransform::None),
            other => Err(format!("unknown time transform `{other}` (expected log|none)")),
        }
    }
}

/// One worker's label for one task, by dense index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgment {
    pub task: usize,
    pub worker: usize,
    pub label: usize,
    /// Completion time in the dataset's current time representation.
    pub time: f64,
}

/// A judgment as it appears in an input file, before indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentRecord {
    pub task_id: String,
    pub worker_id: String,
    pub label: usize,
    pub time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    task_ids: Vec<String>,
    worker_ids: Vec<String>,
    task_index: HashMap<String, usize>,
    worker_index: HashMap<String, usize>,
    judgments: Vec<Judgment>,
    /// Times as loaded, so conversions never accumulate rounding.
    seconds: Vec<f64>,
    by_task: Vec<Vec<usize>>,
    by_worker: Vec<Vec<usize>>,
    gold: Option<Vec<Option<usize>>>,
    transform: TimeTransform,
}

impl Dataset {
    /// Builds a dataset from raw records (times in seconds).
    ///
    /// Gold entries for tasks that have no judgments are dropped.
    pub fn new(
        label_space: LabelSpace,
        records: Vec<JudgmentRecord>,
        gold: Option<HashMap<String, usize>>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let classes = label_space.class_count();
        let mut task_ids = Vec::new();
        let mut worker_ids = Vec::new();
        let mut task_index = HashMap::new();
        let mut worker_index = HashMap::new();
        let mut seen = HashSet::new();
        let mut judgments = Vec::with_capacity(records.len());

        for (row, rec) in records.into_iter().enumerate() {
            let line = row as u64 + 2;
            if rec.label >= classes {
                return Err(Error::LabelOutOfRange {
                    line,
                    label: rec.label.to_string(),
                    classes,
                });
            }
            if !(rec.time_seconds > 0.0) || !rec.time_seconds.is_finite() {
                return Err(Error::NonPositiveTime {
                    line,
                    time: rec.time_seconds,
                });
            }
            let task = *task_index.entry(rec.task_id.clone()).or_insert_with(|| {
                task_ids.push(rec.task_id.clone());
                task_ids.len() - 1
            });
            let worker = *worker_index.entry(rec.worker_id.clone()).or_insert_with(|| {
                worker_ids.push(rec.worker_id.clone());
                worker_ids.len() - 1
            });
            if !seen.insert((task, worker)) {
                return Err(Error::DuplicateJudgment {
                    task: rec.task_id,
                    worker: rec.worker_id,
                });
            }
            judgments.push(Judgment {
                task,
                worker,
                label: rec.label,
                time: rec.time_seconds,
            });
        }

        let gold = match gold {
            Some(map) => {
                let mut dense = vec![None; task_ids.len()];
                for (task_id, label) in map {
                    if label >= classes {
                        return Err(Error::LabelOutOfRange {
                            line: 0,
                            label: label.to_string(),
                            classes,
                        });
                    }
                    if let Some(&i) = task_index.get(&task_id) {
                        dense[i] = Some(label);
                    }
                }
                Some(dense)
            }
            None => None,
        };

        let mut by_task = vec![Vec::new(); task_ids.len()];
        let mut by_worker = vec![Vec::new(); worker_ids.len()];
        for (j, jd) in judgments.iter().enumerate() {
            by_task[jd.task].push(j);
            by_worker[jd.worker].push(j);
        }

        Ok(Self {
            label_space,
            task_ids,
            worker_ids,
            task_index,
            worker_index,
            seconds: judgments.iter().map(|jd| jd.time).collect(),
            judgments,
            by_task,
            by_worker,
            gold,
            transform: TimeTransform::None,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn class_count(&self) -> usize {
        self.label_space.class_count()
    }

    pub fn task_count(&self) -> usize {
        self.task_ids.len()
    }

    pub fn worker_count(&self) -> usize {
        self.worker_ids.len()
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn worker_ids(&self) -> &[String] {
        &self.worker_ids
    }

    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.task_index.get(id).copied()
    }

    pub fn worker_index(&self, id: &str) -> Option<usize> {
        self.worker_index.get(id).copied()
    }

    /// Judgment indices for task `i`, in input order.
    pub fn task_judgments(&self, task: usize) -> &[usize] {
        &self.by_task[task]
    }

    pub fn worker_judgments(&self, worker: usize) -> &[usize] {
        &self.by_worker[worker]
    }

    /// Dense gold labels, `None` where a task has no gold.
    pub fn gold(&self) -> Option<&[Option<usize>]> {
        self.gold.as_deref()
    }

    pub fn require_gold(&self) -> Result<&[Option<usize>]> {
        self.gold().ok_or(Error::MissingGold)
    }

    pub fn transform(&self) -> TimeTransform {
        self.transform
    }

    /// Completion time of judgment `j` in seconds, whatever the representation.
    pub fn seconds(&self, j: usize) -> f64 {
        self.seconds[j]
    }

    /// Returns a copy whose times are in representation `mode`.
    ///
    /// `TimeTransform::None` means raw seconds, so applying it to an
    /// untransformed dataset leaves every time bit-for-bit unchanged.
    pub fn transform_times(&self, mode: TimeTransform) -> Dataset {
        if mode == self.transform {
            return self.clone();
        }
        let mut out = self.clone();
        for (jd, &seconds) in out.judgments.iter_mut().zip(&self.seconds) {
            jd.time = mode.apply(seconds);
        }
        out.transform = mode;
        out
    }

    /// Raw records in input order (times in seconds).
    pub fn records(&self) -> Vec<JudgmentRecord> {
        (0..self.judgments.len())
            .map(|j| {
                let jd = &self.judgments[j];
                JudgmentRecord {
                    task_id: self.task_ids[jd.task].clone(),
                    worker_id: self.worker_ids[jd.worker].clone(),
                    label: jd.label,
                    time_seconds: self.seconds(j),
                }
            })
            .collect()
    }

    pub fn gold_map(&self) -> Option<HashMap<String, usize>> {
        self.gold.as_ref().map(|g| {
            g.iter()
                .enumerate()
                .filter_map(|(i, l)| l.map(|l| (self.task_ids[i].clone(), l)))
                .collect()
        })
    }

    /// Dataset restricted to the given judgment indices, re-indexed from
    /// scratch. The time representation is preserved.
    pub fn subset(&self, judgment_indices: &[usize]) -> Result<Dataset> {
        let all = self.records();
        let records = judgment_indices.iter().map(|&j| all[j].clone()).collect();
        let d = Dataset::new(self.label_space.clone(), records, self.gold_map())?;
        Ok(d.transform_times(self.transform))
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub judgments: usize,
    pub tasks: usize,
    pub workers: usize,
    pub classes: usize,
    pub judgments_per_task: f64,
    pub judgments_per_worker: f64,
    /// Fraction of judgments equal to gold, over judgments whose task has gold.
    pub accuracy: Option<f64>,
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    let n = d.judgments.len();
    let accuracy = d.gold.as_ref().and_then(|gold| {
        let (hits, total) = d
            .judgments
            .iter()
            .filter_map(|j| gold[j.task].map(|g| g == j.label))
            .fold((0usize, 0usize), |(h, t), ok| (h + ok as usize, t + 1));
        (total > 0).then(|| hits as f64 / total as f64)
    });
    DatasetStats {
        judgments: n,
        tasks: d.task_count(),
        workers: d.worker_count(),
        classes: d.class_count(),
        judgments_per_task: n as f64 / d.task_count() as f64,
        judgments_per_worker: n as f64 / d.worker_count() as f64,
        accuracy,
    }
}

/// Pseudo-judgments behind the default propensity prior. A prior scaled with
/// the task count (0.7 N valid, 0.3 N invalid) outweighs any worker with
/// fewer than 0.4 N judgments, so even a pure spammer would keep a posterior
/// mean propensity above one half.
pub const DEFAULT_PROPENSITY_STRENGTH: f64 = 10.0;

/// Prior parameters shared by every Bayesian model in the crate.
///
/// Threshold means and precisions live in the same space as the dataset's
/// transformed times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub p0: Vec<f64>,
    pub s0: Vec<f64>,
    pub pi0_diag: f64,
    /// Total off-diagonal pseudo-count of a confusion row, spread evenly.
    pub pi0_offdiag: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub sigma0_mean: f64,
    pub gamma0_precision: f64,
    pub lambda0_mean: f64,
    pub delta0_precision: f64,
    pub time_transform: TimeTransform,
}

impl Hyperparameters {
    /// Defaults for `classes` classes with a propensity prior worth
    /// `propensity_strength` pseudo-judgments (70% valid).
    pub fn defaults(classes: usize, propensity_strength: f64) -> Self {
        Self {
            p0: vec![1.0; classes],
            s0: vec![1.0; classes],
            pi0_diag: 0.7,
            pi0_offdiag: 0.3,
            alpha0: 0.7 * propensity_strength,
            beta0: 0.3 * propensity_strength,
            sigma0_mean: 10f64.ln(),
            gamma0_precision: 0.1,
            lambda0_mean: 50f64.ln(),
            delta0_precision: 0.1,
            time_transform: TimeTransform::Log,
        }
    }

    /// Defaults for the label space of `d`, with the propensity prior worth
    /// [`DEFAULT_PROPENSITY_STRENGTH`] pseudo-judgments.
    pub fn for_dataset(d: &Dataset) -> Self {
        Self::defaults(d.class_count(), DEFAULT_PROPENSITY_STRENGTH)
    }

    /// Dirichlet pseudo-counts for row `c` of a confusion matrix.
    pub fn confusion_prior_row(&self, c: usize) -> Vec<f64> {
        let classes = self.p0.len();
        let off = self.pi0_offdiag / (classes - 1) as f64;
        (0..classes)
            .map(|j| if j == c { self.pi0_diag } else { off })
            .collect()
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameters(msg));
        if self.p0.len() != classes || self.s0.len() != classes {
            return bad(format!(
                "p0/s0 must have {classes} entries (got {}/{})",
                self.p0.len(),
                self.s0.len()
            ));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !self.p0.iter().chain(&self.s0).all(|&x| positive(x)) {
            return bad("p0 and s0 must be strictly positive".into());
        }
        for (name, v) in [
            ("pi0_diag", self.pi0_diag),
            ("pi0_offdiag", self.pi0_offdiag),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("gamma0_precision", self.gamma0_precision),
            ("delta0_precision", self.delta0_precision),
        ] {
            if !positive(v) {
                return bad(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !self.sigma0_mean.is_finite() || !self.lambda0_mean.is_finite() {
            return bad("threshold means must be finite".into());
        }
        if self.sigma0_mean >= self.lambda0_mean {
            return bad(format!(
                "sigma0_mean ({}) must be below lambda0_mean ({})",
                self.sigma0_mean, self.lambda0_mean
            ));
        }
        Ok(())
    }
}

fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.timestamp_micros() as f64 / 1e6);
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|t| t.and_utc().timestamp_micros() as f64 / 1e6)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Reads a judgment CSV (`task_id,worker_id,label,time_seconds`, or
/// `accept_ts,submit_ts` in place of the time column) and an optional gold
/// CSV (`task_id,gold_label`).
pub fn load_judgments_csv(
    path: impl AsRef<Path>,
    label_space: LabelSpace,
    gold_path: Option<&Path>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?
        .clone();
    let missing = |name: &str| Error::MalformedRow {
        line: 1,
        reason: format!("header lacks `{name}` column"),
    };
    let task_col = column(&headers, "task_id").ok_or_else(|| missing("task_id"))?;
    let worker_col = column(&headers, "worker_id").ok_or_else(|| missing("worker_id"))?;
    let label_col = column(&headers, "label").ok_or_else(|| missing("label"))?;
    let time_col = column(&headers, "time_seconds");
    let stamp_cols = column(&headers, "accept_ts").zip(column(&headers, "submit_ts"));
    if time_col.is_none() && stamp_cols.is_none() {
        return Err(missing("time_seconds"));
    }

    let classes = label_space.class_count();
    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let rec = result.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let field = |col: usize| rec.get(col).unwrap_or("");
        let raw_label = field(label_col);
        let label = label_space
            .parse(raw_label)
            .ok_or_else(|| Error::LabelOutOfRange {
                line,
                label: raw_label.to_string(),
                classes,
            })?;
        let explicit_time = time_col.map(field).filter(|s| !s.is_empty());
        let time_seconds = match (explicit_time, stamp_cols) {
            (Some(raw), _) => raw.parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("time_seconds `{raw}` is not a number"),
            })?,
            (None, Some((a, s))) => {
                let accept = parse_timestamp(field(a));
                let submit = parse_timestamp(field(s));
                match accept.zip(submit) {
                    Some((a, s)) => s - a,
                    None => {
                        return Err(Error::MalformedRow {
                            line,
                            reason: "unparseable accept_ts/submit_ts".into(),
                        })
                    }
                }
            }
            (None, None) => {
                return Err(Error::MalformedRow {
                    line,
                    reason: "missing time_seconds".into(),
                })
            }
        };
        if !(time_seconds > 0.0) || !time_seconds.is_finite() {
            return Err(Error::NonPositiveTime {
                line,
                time: time_seconds,
            });
        }
        let task_id = field(task_col);
        let worker_id = field(worker_col);
        if task_id.is_empty() || worker_id.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty task_id or worker_id".into(),
            });
        }
        records.push(JudgmentRecord {
            task_id: task_id.to_string(),
            worker_id: worker_id.to_string(),
            label,
            time_seconds,
        });
    }

    let gold = gold_path
        .map(|g| load_gold_csv(g, &label_space))
        .transpose()?;
    Dataset::new(label_space, records, gold)
}

pub fn load_gold_csv(path: &Path, label_space: &LabelSpace) -> Result<HashMap<String, usize>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?
        .clone();
    let (task_col, gold_col) = column(&headers, "task_id")
        .zip(column(&headers, "gold_label"))
        .ok_or(Error::MalformedRow {
            line: 1,
            reason: "gold header must be `task_id,gold_label`".into(),
        })?;
    let mut gold = HashMap::new();
    for (row, result) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let rec = result.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let raw = rec.get(gold_col).unwrap_or("");
        let label = label_space
            .parse(raw)
            .ok_or_else(|| Error::LabelOutOfRange {
                line,
                label: raw.to_string(),
                classes: label_space.class_count(),
            })?;
        gold.insert(rec.get(task_col).unwrap_or("").to_string(), label);
    }
    Ok(gold)
}

/// Writes judgments in input order with times in seconds.
pub fn write_judgments_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    w.write_record(["task_id", "worker_id", "label", "time_seconds"])
        .map_err(csv_err)?;
    for r in d.records() {
        w.write_record([
            r.task_id.as_str(),
            r.worker_id.as_str(),
            d.label_space().name(r.label),
            &r.time_seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn write_gold_csv(d: &Dataset, path: &Path) -> Result<()> {
    let gold = d.require_gold()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    w.write_record(["task_id", "gold_label"]).map_err(csv_err)?;
    for (i, g) in gold.iter().enumerate() {
        if let Some(g) = g {
            w.write_record([d.task_ids()[i].as_str(), d.label_space().name(*g)])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}
