//! Bayesian classifier combination and its community variant, by Gibbs sampling.
//!
//! The conditional updates here are also used by the time-aware sampler in
//! [`crate::bcctime`]: they take a per-judgment validity mask, which is all
//! `true` for plain BCC.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::baselines::{argmax_lowest, majority_vote, LabelDistribution};
use crate::data::{Dataset, Hyperparameters};
use crate::error::{Error, Result};
use crate::sampling::{sample_dirichlet, sample_dirichlet_into, sample_log_categorical};
use crate::summary::{
    average, run_chains, ConfusionMatrix, Diagnostics, PosteriorSummary, RunMetadata,
    SamplerSettings,
};

/// Index of `pi[k][c][j]` in a flattened K x C x C array.
#[inline]
pub(crate) fn cm_index(classes: usize, k: usize, c: usize, j: usize) -> usize {
    (k * classes + c) * classes + j
}

pub(crate) fn check_inputs(d: &Dataset, h: &Hyperparameters, s: &SamplerSettings) -> Result<()> {
    s.validate()?;
    h.validate(d.class_count())?;
    if let Some(i) = (0..d.task_count()).find(|&i| d.task_judgments(i).is_empty()) {
        return Err(Error::TaskWithoutJudgments(d.task_ids()[i].clone()));
    }
    Ok(())
}

/// Starting labels: per-task majority vote.
pub(crate) fn initial_labels(d: &Dataset) -> Result<Vec<usize>> {
    Ok(majority_vote(d)?.iter().map(LabelDistribution::argmax).collect())
}

pub(crate) fn prior_mean(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// Confusion matrices at their prior mean, for every worker.
pub(crate) fn initial_confusions(d: &Dataset, h: &Hyperparameters) -> Vec<f64> {
    let classes = d.class_count();
    let mut pi = Vec::with_capacity(d.worker_count() * classes * classes);
    for _ in 0..d.worker_count() {
        for c in 0..classes {
            pi.extend(prior_mean(&h.confusion_prior_row(c)));
        }
    }
    pi
}

/// Counts of true labels in `t`.
pub(crate) fn class_counts(t: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    for &c in t {
        counts[c] += 1.0;
    }
    counts
}

/// `counts[k][c][j]`: valid judgments of worker k labelled j on tasks with t = c.
pub(crate) fn confusion_counts(d: &Dataset, t: &[usize], valid: &[bool], out: &mut [f64]) {
    let classes = d.class_count();
    out.iter_mut().for_each(|x| *x = 0.0);
    for (jd, &ok) in d.judgments().iter().zip(valid) {
        if ok {
            out[cm_index(classes, jd.worker, t[jd.task], jd.label)] += 1.0;
        }
    }
}

/// Resamples every t_i from p_c * prod over valid judgments of pi[k][c][label].
pub(crate) fn sample_true_labels<R: Rng + ?Sized>(
    d: &Dataset,
    p: &[f64],
    pi: &[f64],
    valid: &[bool],
    t: &mut [usize],
    rng: &mut R,
) -> Result<()> {
    let classes = d.class_count();
    let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let mut logw = vec![0.0; classes];
    for (i, ti) in t.iter_mut().enumerate() {
        logw.copy_from_slice(&log_p);
        for &j in d.task_judgments(i) {
            if !valid[j] {
                continue;
            }
            let jd = d.judgments()[j];
            for (c, lw) in logw.iter_mut().enumerate() {
                *lw += pi[cm_index(classes, jd.worker, c, jd.label)].ln();
            }
        }
        *ti = sample_log_categorical(&mut logw, rng)?;
    }
    Ok(())
}

/// Resamples every confusion row from Dirichlet(prior row + counts). The
/// prior row for (worker, class) is written by `prior` into its buffer.
/// When `mean_acc` is given, the conditional posterior mean of each row is
/// added to it.
pub(crate) fn sample_confusions<R: Rng + ?Sized>(
    classes: usize,
    workers: usize,
    counts: &[f64],
    mut prior: impl FnMut(usize, usize, &mut [f64]),
    pi: &mut [f64],
    mut mean_acc: Option<&mut [f64]>,
    rng: &mut R,
) -> Result<()> {
    let mut alpha = vec![0.0; classes];
    for k in 0..workers {
        for c in 0..classes {
            prior(k, c, &mut alpha);
            let start = cm_index(classes, k, c, 0);
            for (a, n) in alpha.iter_mut().zip(&counts[start..start + classes]) {
                *a += n;
            }
            sample_dirichlet_into(&alpha, &mut pi[start..start + classes], rng)?;
            if let Some(acc) = mean_acc.as_deref_mut() {
                let total: f64 = alpha.iter().sum();
                for (m, a) in acc[start..start + classes].iter_mut().zip(&alpha) {
                    *m += a / total;
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn sample_class_proportions<R: Rng + ?Sized>(
    p0: &[f64],
    t: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let counts = class_counts(t, p0.len());
    let alpha: Vec<f64> = p0.iter().zip(&counts).map(|(a, n)| a + n).collect();
    sample_dirichlet(&alpha, rng)
}

/// Labels + confusion accumulators of one chain, already divided by the
/// number of retained sweeps.
struct ChainTotals {
    label_freq: Vec<f64>,
    confusion_mean: Vec<f64>,
    community_freq: Vec<f64>,
}

fn to_distributions(freq: &[f64], classes: usize) -> Vec<LabelDistribution> {
    freq.chunks(classes)
        .map(|row| LabelDistribution { probs: row.to_vec() })
        .collect()
}

fn bcc_chain<R: Rng + ?Sized>(
    d: &Dataset,
    h: &Hyperparameters,
    s: &SamplerSettings,
    rng: &mut R,
) -> Result<ChainTotals> {
    let classes = d.class_count();
    let workers = d.worker_count();
    let valid = vec![true; d.judgments().len()];
    let prior_rows: Vec<Vec<f64>> = (0..classes).map(|c| h.confusion_prior_row(c)).collect();

    let mut t = initial_labels(d)?;
    let mut p = prior_mean(&h.p0);
    let mut pi = initial_confusions(d, h);
    let mut counts = vec![0.0; pi.len()];
    let mut label_freq = vec![0.0; d.task_count() * classes];
    let mut confusion_mean = vec![0.0; pi.len()];

    for sweep in 0..s.iterations {
        let keep = sweep >= s.burnin;
        sample_true_labels(d, &p, &pi, &valid, &mut t, rng)?;
        p = sample_class_proportions(&h.p0, &t, rng)?;
        confusion_counts(d, &t, &valid, &mut counts);
        sample_confusions(
            classes,
            workers,
            &counts,
            |_, c, out| out.copy_from_slice(&prior_rows[c]),
            &mut pi,
            keep.then_some(confusion_mean.as_mut_slice()),
            rng,
        )?;
        if keep {
            for (i, &ti) in t.iter().enumerate() {
                label_freq[i * classes + ti] += 1.0;
            }
        }
    }
    let retained = s.retained() as f64;
    label_freq.iter_mut().for_each(|x| *x /= retained);
    confusion_mean.iter_mut().for_each(|x| *x /= retained);
    Ok(ChainTotals {
        label_freq,
        confusion_mean,
        community_freq: Vec::new(),
    })
}

fn confusion_list(flat: &[f64], classes: usize) -> Vec<ConfusionMatrix> {
    flat.chunks(classes * classes)
        .map(|m| ConfusionMatrix::from_flat(m, classes))
        .collect()
}

/// Fits BCC. Task posteriors are the frequencies of sampled labels after
/// burn-in; worker matrices are averaged conditional posterior means.
pub fn bcc_gibbs(
    d: &Dataset,
    h: &Hyperparameters,
    settings: &SamplerSettings,
) -> Result<PosteriorSummary> {
    check_inputs(d, h, settings)?;
    let start = std::time::Instant::now();
    let classes = d.class_count();
    let chains = run_chains(settings, |mut rng| bcc_chain(d, h, settings, &mut rng))?;
    let (labels, confusion): (Vec<_>, Vec<_>) = chains
        .into_iter()
        .map(|c| (c.label_freq, c.confusion_mean))
        .unzip();

    let mut summary = PosteriorSummary::new("bcc", d, to_distributions(&average(labels), classes));
    summary.confusion = Some(confusion_list(&average(confusion), classes));
    summary.diagnostics = Diagnostics {
        retained_samples: settings.retained() * settings.chains,
        indicator_violations: 0,
    };
    summary.metadata = RunMetadata::sampled(settings, h);
    summary.metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Community settings for [`cbcc_gibbs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityConfig {
    pub communities: usize,
    /// Pseudo-count weight of the community matrix in each worker's row prior.
    pub concentration: f64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self {
            communities: 2,
            concentration: 10.0,
        }
    }
}

fn ln_dirichlet(x: &[f64], alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    ln_gamma(total)
        + x.iter()
            .zip(alpha)
            .map(|(xi, a)| (a - 1.0) * xi.ln() - ln_gamma(*a))
            .sum::<f64>()
}

/// Metropolis steps per community row per sweep.
const COMMUNITY_MH_STEPS: usize = 3;
/// Concentration of the Dirichlet random-walk proposal for community rows.
const COMMUNITY_PROPOSAL_SCALE: f64 = 200.0;

/// Worker row prior: base confusion prior plus `concentration` times the
/// community's row.
fn community_row_prior(base: &[f64], community_row: &[f64], concentration: f64, out: &mut [f64]) {
    for ((o, b), m) in out.iter_mut().zip(base).zip(community_row) {
        *o = b + concentration * m;
    }
}

fn cbcc_chain<R: Rng + ?Sized>(
    d: &Dataset,
    h: &Hyperparameters,
    cfg: &CommunityConfig,
    s: &SamplerSettings,
    rng: &mut R,
) -> Result<ChainTotals> {
    let classes = d.class_count();
    let workers = d.worker_count();
    let m_count = cfg.communities;
    let valid = vec![true; d.judgments().len()];
    let base_rows: Vec<Vec<f64>> = (0..classes).map(|c| h.confusion_prior_row(c)).collect();

    // Communities start with decreasing diagonals so they are distinguishable.
    let mut community = vec![0.0; m_count * classes * classes];
    for m in 0..m_count {
        let diag = if m_count == 1 {
            prior_mean(&base_rows[0])[0]
        } else {
            0.9 - (0.9 - 1.0 / classes as f64 - 0.05) * m as f64 / (m_count - 1) as f64
        };
        let off = (1.0 - diag) / (classes - 1) as f64;
        for c in 0..classes {
            for j in 0..classes {
                community[cm_index(classes, m, c, j)] = if c == j { diag } else { off };
            }
        }
    }
    let mut assignment = vec![0usize; workers];

    let mut t = initial_labels(d)?;
    let mut p = prior_mean(&h.p0);
    let mut pi = initial_confusions(d, h);
    let mut counts = vec![0.0; pi.len()];
    let mut label_freq = vec![0.0; d.task_count() * classes];
    let mut confusion_mean = vec![0.0; pi.len()];
    let mut community_freq = vec![0.0; workers * m_count];
    let mut alpha = vec![0.0; classes];
    let mut logw = vec![0.0; m_count];

    for sweep in 0..s.iterations {
        let keep = sweep >= s.burnin;
        sample_true_labels(d, &p, &pi, &valid, &mut t, rng)?;
        p = sample_class_proportions(&h.p0, &t, rng)?;
        confusion_counts(d, &t, &valid, &mut counts);
        {
            let community = &community;
            let assignment = &assignment;
            sample_confusions(
                classes,
                workers,
                &counts,
                |k, c, out| {
                    let start = cm_index(classes, assignment[k], c, 0);
                    community_row_prior(
                        &base_rows[c],
                        &community[start..start + classes],
                        cfg.concentration,
                        out,
                    )
                },
                &mut pi,
                keep.then_some(confusion_mean.as_mut_slice()),
                rng,
            )?;
        }

        // Community membership given the worker's matrix.
        for k in 0..workers {
            for (m, lw) in logw.iter_mut().enumerate() {
                *lw = (0..classes)
                    .map(|c| {
                        let cs = cm_index(classes, m, c, 0);
                        community_row_prior(
                            &base_rows[c],
                            &community[cs..cs + classes],
                            cfg.concentration,
                            &mut alpha,
                        );
                        let ws = cm_index(classes, k, c, 0);
                        ln_dirichlet(&pi[ws..ws + classes], &alpha)
                    })
                    .sum();
            }
            assignment[k] = sample_log_categorical(&mut logw, rng)?;
        }

        // Community rows: Metropolis-Hastings with a Dirichlet proposal.
        for m in 0..m_count {
            let members: Vec<usize> = (0..workers).filter(|&k| assignment[k] == m).collect();
            for c in 0..classes {
                let cs = cm_index(classes, m, c, 0);
                let log_target = |row: &[f64], alpha: &mut [f64]| {
                    let mut lt = ln_dirichlet(row, &base_rows[c]);
                    community_row_prior(&base_rows[c], row, cfg.concentration, alpha);
                    for &k in &members {
                        let ws = cm_index(classes, k, c, 0);
                        lt += ln_dirichlet(&pi[ws..ws + classes], alpha);
                    }
                    lt
                };
                let proposal_alpha =
                    |row: &[f64]| -> Vec<f64> { row.iter().map(|x| COMMUNITY_PROPOSAL_SCALE * x + 1.0).collect() };
                for _ in 0..COMMUNITY_MH_STEPS {
                    let current = community[cs..cs + classes].to_vec();
                    let fwd = proposal_alpha(&current);
                    let candidate = sample_dirichlet(&fwd, rng)?;
                    let back = proposal_alpha(&candidate);
                    let log_ratio = log_target(&candidate, &mut alpha) - log_target(&current, &mut alpha)
                        + ln_dirichlet(&current, &back)
                        - ln_dirichlet(&candidate, &fwd);
                    if rng.random::<f64>().ln() < log_ratio {
                        community[cs..cs + classes].copy_from_slice(&candidate);
                    }
                }
            }
        }

        if keep {
            for (i, &ti) in t.iter().enumerate() {
                label_freq[i * classes + ti] += 1.0;
            }
            for (k, &m) in assignment.iter().enumerate() {
                community_freq[k * m_count + m] += 1.0;
            }
        }
    }
    let retained = s.retained() as f64;
    for v in [&mut label_freq, &mut confusion_mean, &mut community_freq] {
        v.iter_mut().for_each(|x| *x /= retained);
    }
    Ok(ChainTotals {
        label_freq,
        confusion_mean,
        community_freq,
    })
}

/// Fits community BCC. Each worker belongs to one of `cfg.communities`
/// latent communities; a worker's confusion row for class c has prior
/// Dirichlet(base row + concentration * community row). Reported
/// communities are the most frequent assignment per worker.
pub fn cbcc_gibbs(
    d: &Dataset,
    h: &Hyperparameters,
    cfg: &CommunityConfig,
    settings: &SamplerSettings,
) -> Result<PosteriorSummary> {
    check_inputs(d, h, settings)?;
    if cfg.communities == 0 || !(cfg.concentration > 0.0) {
        return Err(Error::InvalidHyperparameters(format!(
            "need >= 1 community and positive concentration, got {} / {}",
            cfg.communities, cfg.concentration
        )));
    }
    let start = std::time::Instant::now();
    let classes = d.class_count();
    let chains = run_chains(settings, |mut rng| cbcc_chain(d, h, cfg, settings, &mut rng))?;
    let mut labels = Vec::new();
    let mut confusion = Vec::new();
    let mut communities = Vec::new();
    for c in chains {
        labels.push(c.label_freq);
        confusion.push(c.confusion_mean);
        communities.push(c.community_freq);
    }
    let community_freq = average(communities);

    let mut summary = PosteriorSummary::new("cbcc", d, to_distributions(&average(labels), classes));
    summary.confusion = Some(confusion_list(&average(confusion), classes));
    summary.communities = Some(
        community_freq
            .chunks(cfg.communities)
            .map(argmax_lowest)
            .collect(),
    );
    summary.diagnostics.retained_samples = settings.retained() * settings.chains;
    summary.metadata = RunMetadata::sampled(settings, h);
    summary
        .metadata
        .extra
        .insert("communities".into(), cfg.communities.into());
    summary
        .metadata
        .extra
        .insert("community_concentration".into(), cfg.concentration.into());
    summary.metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}
