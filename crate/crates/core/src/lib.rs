//! Label aggregation for crowdsourced judgments, with models that use how
//! long each worker spent on a task to tell genuine answers from spam.

pub mod aggregate;
pub mod baselines;
pub mod bcc;
pub mod bcctime;
pub mod data;
pub mod error;
pub mod metrics;
pub mod onecoin;
pub mod output;
pub mod sampling;
pub mod summary;
pub mod synth;

pub use aggregate::{fit, FitOptions, Method};
pub use baselines::{majority_vote, random_baseline, vote_distribution, LabelDistribution};
pub use bcc::{bcc_gibbs, cbcc_gibbs, CommunityConfig};
pub use bcctime::{bccpropensity_gibbs, bcctime_gibbs, extract_durations, TaskDuration};
pub use data::{
    load_gold_csv, load_judgments_csv, Dataset, DatasetStats, Hyperparameters, Judgment,
    JudgmentRecord, LabelSpace, TimeTransform,
};
pub use error::{Error, Result};
pub use metrics::{average_recall, evaluate, roc_auc, EvaluationReport};
pub use onecoin::{onecoin_em, OneCoinModel};
pub use sampling::RandomSource;
pub use summary::{ConfusionMatrix, PosteriorSummary, RunMetadata, SamplerSettings};
pub use synth::{generate, GroundTruth, SynthConfig, WindowSpec};
