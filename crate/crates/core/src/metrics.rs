//! Evaluation against gold labels, and quality-versus-time tables.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::sampling::RandomSource;
use crate::summary::{csv_field, PosteriorSummary};

/// Attempts per subsample before giving up on covering every task.
const SUBSAMPLE_RETRIES: usize = 200;

/// Area under the ROC curve, i.e. the probability that a random positive
/// outscores a random negative, ties counting half. Uses midranks.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), positive.len(), "scores and gold differ in length");
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassGold);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| positive[i]).count();
        pos_rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Recall of each class; `None` for classes absent from `gold`.
pub fn per_class_recall(predictions: &[usize], gold: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        totals[g] += 1;
        hits[g] += (p == g) as usize;
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}

/// Mean recall over the classes that occur in `gold`.
pub fn average_recall(predictions: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    assert_eq!(predictions.len(), gold.len(), "predictions and gold differ in length");
    if gold.is_empty() {
        return Err(Error::EmptyInput("no gold-labelled predictions".into()));
    }
    let present: Vec<f64> = per_class_recall(predictions, gold, classes)
        .into_iter()
        .flatten()
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    /// Binary problems only, and only when both classes occur in gold.
    pub auc: Option<f64>,
    pub average_recall: f64,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub n_tasks_scored: usize,
}

/// Scores `summary` on the gold-labelled tasks of `d`. The AUC uses the
/// posterior probability of class 1.
pub fn evaluate(summary: &PosteriorSummary, d: &Dataset) -> Result<EvaluationReport> {
    let gold = d.require_gold()?;
    let classes = d.class_count();
    let scored: Vec<usize> = (0..d.task_count()).filter(|&i| gold[i].is_some()).collect();
    if scored.is_empty() {
        return Err(Error::EmptyInput("no task has a gold label".into()));
    }
    let truth: Vec<usize> = scored.iter().map(|&i| gold[i].unwrap()).collect();
    let all_predictions = summary.predictions();
    let predictions: Vec<usize> = scored.iter().map(|&i| all_predictions[i]).collect();

    let auc = if classes == 2 {
        let scores: Vec<f64> = scored.iter().map(|&i| summary.labels[i].probs[1]).collect();
        let positive: Vec<bool> = truth.iter().map(|&g| g == 1).collect();
        match roc_auc(&scores, &positive) {
            Ok(a) => Some(a),
            Err(Error::SingleClassGold) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let correct = predictions.iter().zip(&truth).filter(|(p, g)| p == g).count();
    Ok(EvaluationReport {
        method: summary.method.clone(),
        auc,
        average_recall: average_recall(&predictions, &truth, classes)?,
        accuracy: correct as f64 / scored.len() as f64,
        per_class_recall: per_class_recall(&predictions, &truth, classes),
        n_tasks_scored: scored.len(),
    })
}

/// Quality of the judgments completed within `threshold_seconds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedQuality {
    pub threshold_seconds: f64,
    pub judgments: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    /// Binary data only; class 1 is the positive class.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// One row per edge, plus a final row at `+inf` covering every judgment.
/// Rows are cumulative: each covers all gold-labelled judgments whose time
/// is at most the threshold. Recall is relative to the positive judgments
/// inside that subset.
pub fn time_binned_quality(d: &Dataset, edges: &[f64]) -> Result<Vec<BinnedQuality>> {
    let gold = d.require_gold()?;
    let binary = d.class_count() == 2;
    let mut judged: Vec<(f64, usize, usize)> = d
        .judgments()
        .iter()
        .enumerate()
        .filter_map(|(j, jd)| gold[jd.task].map(|g| (d.seconds(j), jd.label, g)))
        .collect();
    judged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds: Vec<f64> = edges.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.push(f64::INFINITY);

    let (mut n, mut correct, mut tp, mut fp, mut pos) = (0, 0, 0, 0, 0);
    let mut rows = Vec::with_capacity(thresholds.len());
    let mut next = judged.iter().peekable();
    for threshold in thresholds {
        while let Some(&&(time, label, g)) = next.peek() {
            if time > threshold {
                break;
            }
            next.next();
            n += 1;
            correct += (label == g) as usize;
            if binary {
                tp += (label == 1 && g == 1) as usize;
                fp += (label == 1 && g == 0) as usize;
                pos += (g == 1) as usize;
            }
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        rows.push(BinnedQuality {
            threshold_seconds: threshold,
            judgments: n,
            correct,
            accuracy: ratio(correct, n),
            precision: if binary { ratio(tp, tp + fp) } else { None },
            recall: if binary { ratio(tp, pos) } else { None },
        });
    }
    Ok(rows)
}

/// `count` edges spaced evenly in log-time between the fastest and slowest
/// judgment.
pub fn log_spaced_edges(d: &Dataset, count: usize) -> Vec<f64> {
    let (lo, hi) = (0..d.judgments().len())
        .map(|j| d.seconds(j))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    if count == 0 || !lo.is_finite() {
        return Vec::new();
    }
    if count == 1 || lo == hi {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut edges: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    edges[0] = lo;
    edges[count - 1] = hi;
    edges
}

/// Correlation between completion time and correctness on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCorrelation {
    pub task_id: String,
    pub n: usize,
    /// `None` when time or correctness is constant on the task.
    pub pearson_r: Option<f64>,
    /// Two-sided, from the t approximation with `n - 2` degrees of freedom.
    pub p_value: Option<f64>,
}

/// Pearson correlation, `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under no correlation.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Time/correctness correlation for every task with at least
/// `min_judgments` judgments and a gold label. Times are in seconds.
pub fn per_task_quality_time(d: &Dataset, min_judgments: usize) -> Result<Vec<TaskCorrelation>> {
    let gold = d.require_gold()?;
    let mut rows = Vec::new();
    for i in 0..d.task_count() {
        let (Some(g), js) = (gold[i], d.task_judgments(i)) else {
            continue;
        };
        if js.len() < min_judgments.max(1) {
            continue;
        }
        let times: Vec<f64> = js.iter().map(|&j| d.seconds(j)).collect();
        let correct: Vec<f64> = js
            .iter()
            .map(|&j| (d.judgments()[j].label == g) as u8 as f64)
            .collect();
        let r = pearson(&times, &correct);
        rows.push(TaskCorrelation {
            task_id: d.task_ids()[i].clone(),
            n: js.len(),
            pearson_r: r,
            p_value: r.and_then(|r| pearson_p_value(r, js.len())),
        });
    }
    Ok(rows)
}

/// Judgment counts per task and log-spaced time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub task_id: String,
    pub lower_seconds: f64,
    pub upper_seconds: f64,
    pub judgments: usize,
    /// Judgments matching gold; `None` when the task has no gold label.
    pub correct: Option<usize>,
}

/// Per-task histograms over the bins `[edges[b], edges[b+1])`; the last bin
/// is closed. Judgments outside the edges are not counted.
pub fn task_time_histograms(d: &Dataset, edges: &[f64]) -> Vec<HistogramBin> {
    let gold = d.gold();
    let mut rows = Vec::new();
    if edges.len() < 2 {
        return rows;
    }
    let last = edges.len() - 2;
    for i in 0..d.task_count() {
        let g = gold.and_then(|g| g[i]);
        for b in 0..=last {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let inside = |s: f64| s >= lo && (s < hi || (b == last && s <= hi));
            let js: Vec<usize> = d
                .task_judgments(i)
                .iter()
                .copied()
                .filter(|&j| inside(d.seconds(j)))
                .collect();
            rows.push(HistogramBin {
                task_id: d.task_ids()[i].clone(),
                lower_seconds: lo,
                upper_seconds: hi,
                judgments: js.len(),
                correct: g.map(|g| js.iter().filter(|&&j| d.judgments()[j].label == g).count()),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePoint {
    pub fraction: f64,
    /// `auc` for binary data with both classes in gold, else `average_recall`.
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

fn headline(report: &EvaluationReport) -> (&'static str, f64) {
    match report.auc {
        Some(a) => ("auc", a),
        None => ("average_recall", report.average_recall),
    }
}

/// Evaluates `aggregate` on random judgment subsets of each size. The
/// aggregator always receives `seed`; subsets come from streams derived
/// from it, so fraction 1.0 reproduces the full-data metric exactly.
pub fn subsample_curve<F>(
    d: &Dataset,
    fractions: &[f64],
    aggregate: F,
    seed: u64,
    repeats: usize,
) -> Result<Vec<SubsamplePoint>>
where
    F: Fn(&Dataset, u64) -> Result<PosteriorSummary>,
{
    d.require_gold()?;
    let total = d.judgments().len();
    let master = RandomSource::new(seed);
    let mut points = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::FractionTooSmall(fraction));
        }
        let keep = ((fraction * total as f64).round() as usize).clamp(1, total);
        let mut values = Vec::with_capacity(repeats.max(1));
        let mut metric = "";
        for r in 0..repeats.max(1) {
            let report = if keep == total {
                evaluate(&aggregate(d, seed)?, d)?
            } else {
                let mut rng = master.fork(((fi as u64) << 32) | r as u64);
                let sub = (0..SUBSAMPLE_RETRIES)
                    .find_map(|_| {
                        let mut picked = index::sample(&mut rng, total, keep).into_vec();
                        picked.sort_unstable();
                        let mut covered = vec![false; d.task_count()];
                        for &j in &picked {
                            covered[d.judgments()[j].task] = true;
                        }
                        covered.iter().all(|&c| c).then_some(picked)
                    })
                    .ok_or(Error::FractionTooSmall(fraction))?;
                let sub = d.subset(&sub)?;
                evaluate(&aggregate(&sub, seed)?, &sub)?
            };
            let (name, value) = headline(&report);
            metric = name;
            values.push(value);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        points.push(SubsamplePoint {
            fraction,
            metric: metric.to_string(),
            mean,
            sd,
            values,
        });
    }
    Ok(points)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// One row per report; per-class recall columns use `class_names`.
pub fn evaluation_csv(reports: &[EvaluationReport], class_names: &[String]) -> String {
    let mut out = String::from("method,auc,average_recall,accuracy,n_tasks");
    for name in class_names {
        out.push_str(&format!(",recall_{}", csv_field(name)));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}",
            csv_field(&r.method),
            opt(r.auc),
            fmt_f64(r.average_recall),
            fmt_f64(r.accuracy),
            r.n_tasks_scored
        ));
        for recall in &r.per_class_recall {
            out.push_str(&format!(",{}", opt(*recall)));
        }
        out.push('\n');
    }
    out
}

/// Precision and recall columns are left out unless `binary`.
pub fn binned_quality_csv(rows: &[BinnedQuality], binary: bool) -> String {
    let mut out = String::from("threshold_seconds,judgments,correct,accuracy");
    if binary {
        out.push_str(",precision,recall");
    }
    out.push('\n');
    for r in rows {
        let threshold = if r.threshold_seconds.is_infinite() {
            "inf".to_string()
        } else {
            fmt_f64(r.threshold_seconds)
        };
        out.push_str(&format!("{threshold},{},{},{}", r.judgments, r.correct, opt(r.accuracy)));
        if binary {
            out.push_str(&format!(",{},{}", opt(r.precision), opt(r.recall)));
        }
        out.push('\n');
    }
    out
}

/// Undefined correlations are written as empty fields with `defined=false`.
pub fn correlation_csv(rows: &[TaskCorrelation]) -> String {
    let mut out = String::from("task_id,n,pearson_r,p_value,defined\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&r.task_id),
            r.n,
            opt(r.pearson_r),
            opt(r.p_value),
            r.pearson_r.is_some()
        ));
    }
    out
}

pub fn histogram_csv(rows: &[HistogramBin]) -> String {
    let mut out = String::from("task_id,lower_seconds,upper_seconds,judgments,correct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&r.task_id),
            fmt_f64(r.lower_seconds),
            fmt_f64(r.upper_seconds),
            r.judgments,
            r.correct.map(|c| c.to_string()).unwrap_or_default()
        ));
    }
    out
}

pub fn subsample_csv(method: &str, points: &[SubsamplePoint]) -> String {
    let mut out = String::from("method,fraction,metric,mean,sd,repeats\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(method),
            fmt_f64(p.fraction),
            p.metric,
            fmt_f64(p.mean),
            fmt_f64(p.sd),
            p.values.len()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{JudgmentRecord, LabelSpace};
    use std::collections::HashMap;

    #[test]
    fn auc_edges() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.3, 0.4], &[true, true]), Err(Error::SingleClassGold)));
        // One positive tied with one of two negatives: (1 + 0.5) / 2.
        assert_eq!(roc_auc(&[0.5, 0.5, 0.1], &[true, false, false]).unwrap(), 0.75);
    }

    #[test]
    fn recall_conventions() {
        assert_eq!(average_recall(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(average_recall(&[0, 2, 2], &[0, 2, 2], 3).unwrap(), 1.0);
        // Class 0: 1/2, class 1: 1/1.
        assert_eq!(average_recall(&[0, 1, 1], &[0, 0, 1], 2).unwrap(), 0.75);
        assert!(matches!(average_recall(&[], &[], 2), Err(Error::EmptyInput(_))));
        assert_eq!(per_class_recall(&[1], &[1], 3), vec![None, Some(1.0), None]);
    }

    fn fixture() -> Dataset {
        // (task, worker, label, seconds); gold a=1, b=0.
        let rows = [
            ("a", "1", 1, 5.0),
            ("a", "2", 0, 12.0),
            ("a", "3", 1, 40.0),
            ("b", "1", 1, 3.0),
            ("b", "2", 0, 20.0),
            ("b", "3", 0, 90.0),
        ];
        let records = rows
            .iter()
            .map(|&(t, w, l, s)| JudgmentRecord {
                task_id: t.into(),
                worker_id: w.into(),
                label: l,
                time_seconds: s,
            })
            .collect();
        let gold = HashMap::from([("a".to_string(), 1), ("b".to_string(), 0)]);
        Dataset::new(LabelSpace::new(2).unwrap(), records, Some(gold)).unwrap()
    }

    #[test]
    fn binned_quality_hand_table() {
        let rows = time_binned_quality(&fixture(), &[4.0, 15.0, 50.0]).unwrap();
        // <=4s: b/1 -> FP. <=15s: + a/1 TP, a/2 FN. <=50s: + b/2 TN, a/3 TP.
        let expect = [
            (1, 0, Some(0.0), None),
            (3, 1, Some(0.5), Some(0.5)),
            (5, 3, Some(2.0 / 3.0), Some(2.0 / 3.0)),
            (6, 4, Some(2.0 / 3.0), Some(2.0 / 3.0)),
        ];
        assert_eq!(rows.len(), 4);
        for (row, (n, correct, precision, recall)) in rows.iter().zip(expect) {
            assert_eq!(row.judgments, n);
            assert_eq!(row.correct, correct);
            assert_eq!(row.precision, precision);
            assert_eq!(row.recall, recall);
        }
        assert!(rows[3].threshold_seconds.is_infinite());

        let csv = binned_quality_csv(&rows, true);
        assert_eq!(csv.lines().next(), Some("threshold_seconds,judgments,correct,accuracy,precision,recall"));
        assert_eq!(csv.lines().nth(1), Some("4.000000,1,0,0.000000,0.000000,"));
        assert_eq!(csv.lines().nth(4), Some("inf,6,4,0.666667,0.666667,0.666667"));
        assert!(!binned_quality_csv(&rows, false).contains("precision"));
    }

    #[test]
    fn pearson_fixture_and_flags() {
        let d = fixture();
        let rows = per_task_quality_time(&d, 3).unwrap();
        assert_eq!(rows.len(), 2);
        let r = rows[0].pearson_r.unwrap();
        // Task a: times (5, 12, 40), correct (1, 0, 1).
        let (x, y) = ([5.0, 12.0, 40.0], [1.0, 0.0, 1.0]);
        let (mx, my) = (19.0, 2.0 / 3.0);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        assert!((r - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        assert!(per_task_quality_time(&d, 4).unwrap().is_empty());
    }

    #[test]
    fn p_value_reference() {
        // r = 0.5, n = 12: t = 1.8257, two-sided p = 0.097855.
        let p = pearson_p_value(0.5, 12).unwrap();
        assert!((p - 0.097_855).abs() < 1e-5, "{p}");
        assert_eq!(pearson_p_value(1.0, 5), Some(0.0));
        assert_eq!(pearson_p_value(0.3, 2), None);
    }

    #[test]
    fn histograms_and_edges() {
        let d = fixture();
        let edges = log_spaced_edges(&d, 3);
        assert!((edges[0] - 3.0).abs() < 1e-9 && (edges[2] - 90.0).abs() < 1e-9);
        let h = task_time_histograms(&d, &edges);
        assert_eq!(h.len(), 4);
        let total: usize = h.iter().map(|b| b.judgments).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn missing_gold_is_reported() {
        let d = Dataset::new(
            LabelSpace::new(2).unwrap(),
            vec![JudgmentRecord {
                task_id: "a".into(),
                worker_id: "w".into(),
                label: 0,
                time_seconds: 1.0,
            }],
            None,
        )
        .unwrap();
        assert!(matches!(time_binned_quality(&d, &[]), Err(Error::MissingGold)));
        assert!(matches!(per_task_quality_time(&d, 1), Err(Error::MissingGold)));
    }
}
