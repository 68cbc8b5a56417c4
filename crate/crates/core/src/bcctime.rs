//! Time-aware classifier combination.
//!
//! Each judgment is either a valid attempt, labelled through the worker's
//! confusion matrix and submitted inside the task's latent duration window
//! `(sigma_i, lambda_i)`, or an invalid one, labelled from a shared spam
//! distribution `s` at any time. Validity is Bernoulli with the worker's
//! propensity `psi_k`. All latent variables are resampled by systematic-scan
//! Gibbs; the window bounds have one-sided truncated Gaussian conditionals.
//!
//! The propensity-only variant keeps the windows open so every time is
//! admissible and only labels inform validity.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::LabelDistribution;
use crate::bcc::{
    check_inputs, cm_index, confusion_counts, initial_confusions, initial_labels, prior_mean,
    sample_class_proportions, sample_confusions, sample_true_labels,
};
use crate::data::{Dataset, Hyperparameters, TimeTransform};
use crate::error::{Error, Result};
use crate::sampling::{sample_beta, sample_dirichlet, sample_truncated_gaussian};
use crate::summary::{
    average, run_chains, ConfusionMatrix, Diagnostics, PosteriorSummary, RunMetadata,
    SamplerSettings, ThresholdStats,
};

/// Offset keeping the initial window strictly around the observed times.
const INIT_MARGIN: f64 = 1e-3;

/// Posterior duration of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDuration {
    pub task_id: String,
    pub sigma_mean: f64,
    pub sigma_sd: f64,
    pub lambda_mean: f64,
    pub lambda_sd: f64,
    /// Posterior mean bounds mapped back to seconds.
    pub interval_seconds: (f64, f64),
    /// `(E[lambda] - E[sigma]) / 2`, transformed units.
    pub half_width: f64,
    /// `(E[sigma] + E[lambda]) / 2`, transformed units.
    pub midpoint: f64,
    /// The midpoint mapped back to seconds.
    pub midpoint_seconds: f64,
}

/// Full latent state of one chain.
#[derive(Debug, Clone)]
pub struct BccTimeState {
    pub t: Vec<usize>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    /// Flattened K x C x C confusion matrices.
    pub pi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Validity of each judgment, in dataset order.
    pub v: Vec<bool>,
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl BccTimeState {
    /// Majority-vote labels, prior-mean parameters, every judgment valid,
    /// and windows wide enough to contain every observed time.
    pub fn initial(d: &Dataset, h: &Hyperparameters, timed: bool) -> Result<Self> {
        let n = d.task_count();
        let mut sigma = vec![f64::NEG_INFINITY; n];
        let mut lambda = vec![f64::INFINITY; n];
        if timed {
            for i in 0..n {
                let (lo, hi) = time_range(d, i, |_| true);
                sigma[i] = h.sigma0_mean.min(lo - INIT_MARGIN);
                lambda[i] = h.lambda0_mean.max(hi + INIT_MARGIN);
            }
        }
        let psi0 = h.alpha0 / (h.alpha0 + h.beta0);
        Ok(Self {
            t: initial_labels(d)?,
            p: prior_mean(&h.p0),
            s: prior_mean(&h.s0),
            pi: initial_confusions(d, h),
            psi: vec![psi0; d.worker_count()],
            v: vec![true; d.judgments().len()],
            sigma,
            lambda,
        })
    }

    /// Number of valid judgments lying outside their task's window.
    pub fn indicator_violations(&self, d: &Dataset) -> usize {
        d.judgments()
            .iter()
            .zip(&self.v)
            .filter(|(jd, &ok)| {
                ok && !(self.sigma[jd.task] < jd.time && jd.time < self.lambda[jd.task])
            })
            .count()
    }
}

/// (min, max) time over the judgments of task `i` selected by `keep`;
/// `(inf, -inf)` when none is selected.
fn time_range(d: &Dataset, i: usize, keep: impl Fn(usize) -> bool) -> (f64, f64) {
    d.task_judgments(i)
        .iter()
        .filter(|&&j| keep(j))
        .map(|&j| d.judgments()[j].time)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        })
}

/// Running sums collected over retained sweeps.
#[derive(Debug, Clone)]
struct Accumulators {
    label_freq: Vec<f64>,
    confusion_mean: Vec<f64>,
    propensity_mean: Vec<f64>,
    validity: Vec<f64>,
    sigma: Vec<f64>,
    sigma_sq: Vec<f64>,
    lambda: Vec<f64>,
    lambda_sq: Vec<f64>,
    violations: usize,
}

impl Accumulators {
    fn new(d: &Dataset) -> Self {
        let (n, k, c) = (d.task_count(), d.worker_count(), d.class_count());
        Self {
            label_freq: vec![0.0; n * c],
            confusion_mean: vec![0.0; k * c * c],
            propensity_mean: vec![0.0; k],
            validity: vec![0.0; d.judgments().len()],
            sigma: vec![0.0; n],
            sigma_sq: vec![0.0; n],
            lambda: vec![0.0; n],
            lambda_sq: vec![0.0; n],
            violations: 0,
        }
    }

    fn scale(&mut self, by: f64) {
        for v in [
            &mut self.label_freq,
            &mut self.confusion_mean,
            &mut self.propensity_mean,
            &mut self.validity,
            &mut self.sigma,
            &mut self.sigma_sq,
            &mut self.lambda,
            &mut self.lambda_sq,
        ] {
            v.iter_mut().for_each(|x| *x /= by);
        }
    }
}

/// One systematic Gibbs sweep over every latent variable.
pub struct BccTimeSampler<'a> {
    d: &'a Dataset,
    h: &'a Hyperparameters,
    timed: bool,
    prior_rows: Vec<Vec<f64>>,
    counts: Vec<f64>,
}

impl<'a> BccTimeSampler<'a> {
    pub fn new(d: &'a Dataset, h: &'a Hyperparameters, timed: bool) -> Self {
        let classes = d.class_count();
        Self {
            d,
            h,
            timed,
            prior_rows: (0..classes).map(|c| h.confusion_prior_row(c)).collect(),
            counts: vec![0.0; d.worker_count() * classes * classes],
        }
    }

    fn admissible(&self, state: &BccTimeState, task: usize, time: f64) -> bool {
        !self.timed || (state.sigma[task] < time && time < state.lambda[task])
    }

    /// Runs one sweep. When `acc` is given, conditional posterior means of
    /// the conjugate parameters are added to it.
    fn sweep_with<R: Rng + ?Sized>(
        &mut self,
        state: &mut BccTimeState,
        mut acc: Option<&mut Accumulators>,
        rng: &mut R,
    ) -> Result<()> {
        let d = self.d;
        let h = self.h;
        let classes = d.class_count();

        // Validity of each judgment.
        for (j, jd) in d.judgments().iter().enumerate() {
            let psi = state.psi[jd.worker];
            let valid_w = if self.admissible(state, jd.task, jd.time) {
                psi * state.pi[cm_index(classes, jd.worker, state.t[jd.task], jd.label)]
            } else {
                0.0
            };
            let invalid_w = (1.0 - psi) * state.s[jd.label];
            state.v[j] = rng.random::<f64>() * (valid_w + invalid_w) < valid_w;
        }

        // Propensities.
        for k in 0..d.worker_count() {
            let js = d.worker_judgments(k);
            let valid = js.iter().filter(|&&j| state.v[j]).count() as f64;
            let a = h.alpha0 + valid;
            let b = h.beta0 + (js.len() as f64 - valid);
            state.psi[k] = sample_beta(a, b, rng)?;
            if let Some(acc) = acc.as_deref_mut() {
                acc.propensity_mean[k] += a / (a + b);
            }
        }

        sample_true_labels(d, &state.p, &state.pi, &state.v, &mut state.t, rng)?;
        state.p = sample_class_proportions(&h.p0, &state.t, rng)?;

        // Spam label distribution from invalid judgments.
        let mut spam = h.s0.clone();
        for (jd, &ok) in d.judgments().iter().zip(&state.v) {
            if !ok {
                spam[jd.label] += 1.0;
            }
        }
        state.s = sample_dirichlet(&spam, rng)?;

        confusion_counts(d, &state.t, &state.v, &mut self.counts);
        let prior_rows = &self.prior_rows;
        sample_confusions(
            classes,
            d.worker_count(),
            &self.counts,
            |_, c, out| out.copy_from_slice(&prior_rows[c]),
            &mut state.pi,
            acc.as_mut().map(|a| a.confusion_mean.as_mut_slice()),
            rng,
        )?;

        if self.timed {
            for i in 0..d.task_count() {
                let (lo, hi) = time_range(d, i, |j| state.v[j]);
                state.sigma[i] = sample_truncated_gaussian(
                    h.sigma0_mean,
                    h.gamma0_precision,
                    f64::NEG_INFINITY,
                    lo,
                    rng,
                )?;
                state.lambda[i] = sample_truncated_gaussian(
                    h.lambda0_mean,
                    h.delta0_precision,
                    hi,
                    f64::INFINITY,
                    rng,
                )?;
                // Bounds are closed in the sampler; keep the window open.
                if state.sigma[i] >= lo {
                    state.sigma[i] = lo.next_down();
                }
                if state.lambda[i] <= hi {
                    state.lambda[i] = hi.next_up();
                }
            }
        }
        Ok(())
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut BccTimeState, rng: &mut R) -> Result<()> {
        self.sweep_with(state, None, rng)
    }

    fn record(&self, state: &BccTimeState, acc: &mut Accumulators) {
        let classes = self.d.class_count();
        for (i, &ti) in state.t.iter().enumerate() {
            acc.label_freq[i * classes + ti] += 1.0;
        }
        for (a, &ok) in acc.validity.iter_mut().zip(&state.v) {
            *a += ok as u8 as f64;
        }
        if self.timed {
            for i in 0..state.sigma.len() {
                let (s, l) = (state.sigma[i], state.lambda[i]);
                acc.sigma[i] += s;
                acc.sigma_sq[i] += s * s;
                acc.lambda[i] += l;
                acc.lambda_sq[i] += l * l;
            }
            acc.violations += state.indicator_violations(self.d);
        }
    }
}

fn run_chain<R: Rng + ?Sized>(
    d: &Dataset,
    h: &Hyperparameters,
    s: &SamplerSettings,
    timed: bool,
    rng: &mut R,
) -> Result<Accumulators> {
    let mut state = BccTimeState::initial(d, h, timed)?;
    let mut sampler = BccTimeSampler::new(d, h, timed);
    let mut acc = Accumulators::new(d);
    for sweep in 0..s.iterations {
        if sweep >= s.burnin {
            sampler.sweep_with(&mut state, Some(&mut acc), rng)?;
            sampler.record(&state, &mut acc);
        } else {
            sampler.sweep(&mut state, rng)?;
        }
    }
    acc.scale(s.retained() as f64);
    Ok(acc)
}

fn fit(
    d: &Dataset,
    h: &Hyperparameters,
    settings: &SamplerSettings,
    timed: bool,
) -> Result<PosteriorSummary> {
    check_inputs(d, h, settings)?;
    if timed && d.transform() != h.time_transform {
        warn!(
            "dataset times are `{}` but priors assume `{}`; duration priors may be on the wrong scale",
            d.transform(),
            h.time_transform
        );
    }
    let start = std::time::Instant::now();
    let classes = d.class_count();
    let chains = run_chain_set(d, h, settings, timed)?;
    let violations = chains.iter().map(|c| c.violations).sum();

    macro_rules! merged {
        ($field:ident) => {
            average(chains.iter().map(|c| c.$field.clone()))
        };
    }
    let label_freq = merged!(label_freq);
    let method = if timed { "bcctime" } else { "bccprop" };
    let mut summary = PosteriorSummary::new(
        method,
        d,
        label_freq
            .chunks(classes)
            .map(|r| LabelDistribution { probs: r.to_vec() })
            .collect(),
    );
    summary.confusion = Some(
        merged!(confusion_mean)
            .chunks(classes * classes)
            .map(|m| ConfusionMatrix::from_flat(m, classes))
            .collect(),
    );
    summary.propensity = Some(merged!(propensity_mean));
    summary.validity = Some(merged!(validity));
    summary.diagnostics = Diagnostics {
        retained_samples: settings.retained() * settings.chains,
        indicator_violations: violations,
    };
    summary.metadata = RunMetadata::sampled(settings, h);
    if timed {
        let (s1, s2, l1, l2) = (
            merged!(sigma),
            merged!(sigma_sq),
            merged!(lambda),
            merged!(lambda_sq),
        );
        let sd = |m: f64, m2: f64| (m2 - m * m).max(0.0).sqrt();
        summary.thresholds = Some(
            (0..d.task_count())
                .map(|i| ThresholdStats {
                    sigma_mean: s1[i],
                    sigma_sd: sd(s1[i], s2[i]),
                    lambda_mean: l1[i],
                    lambda_sd: sd(l1[i], l2[i]),
                })
                .collect(),
        );
        summary.durations = Some(extract_durations(&summary, d.transform())?);
    }
    summary.metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

fn run_chain_set(
    d: &Dataset,
    h: &Hyperparameters,
    settings: &SamplerSettings,
    timed: bool,
) -> Result<Vec<Accumulators>> {
    run_chains(settings, |mut rng| run_chain(d, h, settings, timed, &mut rng))
}

/// Fits the full time-aware model. `d` should already carry times in
/// `h.time_transform`; a mismatch is logged, not rejected.
pub fn bcctime_gibbs(
    d: &Dataset,
    h: &Hyperparameters,
    settings: &SamplerSettings,
) -> Result<PosteriorSummary> {
    fit(d, h, settings, true)
}

/// Propensity-only variant: windows are held open so every observed time is
/// admissible. No durations are reported.
pub fn bccpropensity_gibbs(
    d: &Dataset,
    h: &Hyperparameters,
    settings: &SamplerSettings,
) -> Result<PosteriorSummary> {
    fit(d, h, settings, false)
}

/// Converts threshold moments into per-task durations, mapping bounds back
/// to seconds through `transform`.
pub fn extract_durations(
    summary: &PosteriorSummary,
    transform: TimeTransform,
) -> Result<Vec<TaskDuration>> {
    let stats = summary
        .thresholds
        .as_ref()
        .ok_or_else(|| Error::MissingDurationState(summary.method.clone()))?;
    Ok(summary
        .task_ids
        .iter()
        .zip(stats)
        .map(|(id, st)| duration_from_stats(id, st, transform))
        .collect())
}

pub fn duration_from_stats(task_id: &str, st: &ThresholdStats, transform: TimeTransform) -> TaskDuration {
    let midpoint = 0.5 * (st.sigma_mean + st.lambda_mean);
    TaskDuration {
        task_id: task_id.to_string(),
        sigma_mean: st.sigma_mean,
        sigma_sd: st.sigma_sd,
        lambda_mean: st.lambda_mean,
        lambda_sd: st.lambda_sd,
        interval_seconds: (transform.invert(st.sigma_mean), transform.invert(st.lambda_mean)),
        half_width: 0.5 * (st.lambda_mean - st.sigma_mean),
        midpoint,
        midpoint_seconds: transform.invert(midpoint),
    }
}
