//! Uniform entry point over every aggregator.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{majority_vote, random_baseline, vote_distribution};
use crate::bcc::{bcc_gibbs, cbcc_gibbs, CommunityConfig};
use crate::bcctime::{bccpropensity_gibbs, bcctime_gibbs};
use crate::data::{Dataset, Hyperparameters};
use crate::error::{Error, Result};
use crate::onecoin::onecoin_em;
use crate::summary::{ConfusionMatrix, PosteriorSummary, SamplerSettings};

pub const ONECOIN_MAX_ITERS: usize = 1000;
pub const ONECOIN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mv,
    Vd,
    Random,
    OneCoin,
    Bcc,
    Cbcc,
    BccProp,
    BccTime,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Mv,
        Method::Vd,
        Method::Random,
        Method::OneCoin,
        Method::Bcc,
        Method::Cbcc,
        Method::BccProp,
        Method::BccTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mv => "mv",
            Method::Vd => "vd",
            Method::Random => "random",
            Method::OneCoin => "onecoin",
            Method::Bcc => "bcc",
            Method::Cbcc => "cbcc",
            Method::BccProp => "bccprop",
            Method::BccTime => "bcctime",
        }
    }

    /// Whether the method reads completion times.
    pub fn uses_time(self) -> bool {
        self == Method::BccTime
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Everything a fit may need beyond the data.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub hyperparameters: Hyperparameters,
    pub sampler: SamplerSettings,
    pub communities: CommunityConfig,
}

impl FitOptions {
    pub fn for_dataset(d: &Dataset) -> Self {
        Self {
            hyperparameters: Hyperparameters::for_dataset(d),
            sampler: SamplerSettings::default(),
            communities: CommunityConfig::default(),
        }
    }
}

/// Runs `method` on `d`, whose times are in seconds. The time-aware model
/// sees times converted with `options.hyperparameters.time_transform`.
pub fn fit(method: Method, d: &Dataset, options: &FitOptions) -> Result<PosteriorSummary> {
    let h = &options.hyperparameters;
    let s = &options.sampler;
    let start = Instant::now();
    let mut summary = match method {
        Method::Mv => PosteriorSummary::new("mv", d, majority_vote(d)?),
        Method::Vd => PosteriorSummary::new("vd", d, vote_distribution(d)?),
        Method::Random => PosteriorSummary::new("random", d, random_baseline(d)),
        Method::OneCoin => {
            let model = onecoin_em(d, ONECOIN_MAX_ITERS, ONECOIN_TOLERANCE)?;
            let mut summary = PosteriorSummary::new("onecoin", d, model.task_posterior);
            summary.confusion = Some(
                model
                    .worker_accuracy
                    .iter()
                    .map(|&a| ConfusionMatrix {
                        rows: vec![vec![a, 1.0 - a], vec![1.0 - a, a]],
                    })
                    .collect(),
            );
            summary.worker_accuracy = Some(model.worker_accuracy);
            let meta = &mut summary.metadata.extra;
            meta.insert("em_iterations".into(), model.iterations.into());
            meta.insert("em_converged".into(), model.converged.into());
            meta.insert(
                "log_likelihood".into(),
                model.log_likelihood.last().copied().unwrap_or(f64::NAN).into(),
            );
            summary
        }
        Method::Bcc => bcc_gibbs(d, h, s)?,
        Method::Cbcc => cbcc_gibbs(d, h, &options.communities, s)?,
        Method::BccProp => bccpropensity_gibbs(d, h, s)?,
        Method::BccTime => {
            let transformed = d.transform_times(h.time_transform);
            bcctime_gibbs(&transformed, h, s)?
        }
    };
    summary.metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}
