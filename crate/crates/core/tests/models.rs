//! Recovery checks for the fitted models on data with planted structure.

use rand::Rng;

use crowdtime::aggregate::{fit, FitOptions, Method};
use crowdtime::bcctime::{BccTimeSampler, BccTimeState};
use crowdtime::data::{Dataset, JudgmentRecord, LabelSpace, TimeTransform};
use crowdtime::sampling::RandomSource;
use crowdtime::synth::{generate, GroundTruth, SynthConfig};
use crowdtime::{
    bcc_gibbs, bccpropensity_gibbs, bcctime_gibbs, cbcc_gibbs, onecoin_em, CommunityConfig,
    Hyperparameters, PosteriorSummary, SamplerSettings,
};

fn accuracy(s: &PosteriorSummary, truth: &[usize]) -> f64 {
    let p = s.predictions();
    p.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / p.len() as f64
}

fn record(task: usize, worker: usize, label: usize, seconds: f64) -> JudgmentRecord {
    JudgmentRecord {
        task_id: format!("t{task}"),
        worker_id: format!("w{worker}"),
        label,
        time_seconds: seconds,
    }
}

/// Every worker labels every task with a fixed per-worker accuracy.
fn dense_binary(tasks: usize, accuracies: &[f64], seed: u64) -> (Dataset, Vec<usize>) {
    let mut rng = RandomSource::new(seed);
    let truth: Vec<usize> = (0..tasks).map(|_| rng.random_range(0..2)).collect();
    let mut records = Vec::new();
    for (i, &t) in truth.iter().enumerate() {
        for (k, &a) in accuracies.iter().enumerate() {
            let label = if rng.random::<f64>() < a { t } else { 1 - t };
            records.push(record(i, k, label, 20.0));
        }
    }
    let d = Dataset::new(LabelSpace::new(2).unwrap(), records, None).unwrap();
    (d, truth)
}

#[test]
fn bcc_recovers_planted_labels() {
    let cfg = SynthConfig {
        workers: 20,
        spammer_fraction: 0.0,
        reliable_accuracy: 0.8,
        judgments_per_task: 10,
        seed: 3,
        ..SynthConfig::default()
    };
    let (d, truth) = generate(&cfg).unwrap();
    let s = bcc_gibbs(&d, &Hyperparameters::for_dataset(&d), &SamplerSettings::new(1500, 300, 1)).unwrap();
    assert!(accuracy(&s, &truth.labels) >= 0.92);
}

#[test]
fn bcc_flags_an_inverting_worker() {
    let (mut d, truth) = dense_binary(150, &[0.85, 0.85, 0.85, 0.85, 0.85], 8);
    let mut records = d.records();
    for (i, &t) in truth.iter().enumerate() {
        records.push(record(i, 99, 1 - t, 20.0));
    }
    d = Dataset::new(LabelSpace::new(2).unwrap(), records, None).unwrap();
    let s = bcc_gibbs(&d, &Hyperparameters::for_dataset(&d), &SamplerSettings::new(1500, 300, 2)).unwrap();
    let k = d.worker_index("w99").unwrap();
    let m = &s.confusion.as_ref().unwrap()[k];
    assert!(m.off_diagonal_mass() > m.diagonal_mass(), "{m:?}");
}

#[test]
fn cbcc_separates_two_populations() {
    let accuracies: Vec<f64> = (0..16).map(|k| if k % 2 == 0 { 0.9 } else { 0.55 }).collect();
    let (d, _) = dense_binary(150, &accuracies, 21);
    let cfg = CommunityConfig {
        communities: 2,
        concentration: 10.0,
    };
    let s = cbcc_gibbs(&d, &Hyperparameters::for_dataset(&d), &cfg, &SamplerSettings::new(2000, 500, 4)).unwrap();
    let communities = s.communities.unwrap();
    // Purity: majority community per planted group.
    let mut table = [[0usize; 2]; 2];
    for (k, id) in d.worker_ids().iter().enumerate() {
        let planted = id[1..].parse::<usize>().unwrap() % 2;
        table[planted][communities[k]] += 1;
    }
    let pure = table[0].iter().max().unwrap() + table[1].iter().max().unwrap();
    assert!(pure as f64 / 16.0 >= 0.9, "{table:?}");
}

#[test]
fn onecoin_recovers_accuracies() {
    let accuracies = [0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.5, 0.5];
    let (d, _) = dense_binary(200, &accuracies, 13);
    let m = onecoin_em(&d, 1000, 1e-10).unwrap();
    assert!(m.converged);
    for (k, id) in d.worker_ids().iter().enumerate() {
        let planted = accuracies[id[1..].parse::<usize>().unwrap()];
        assert!((m.worker_accuracy[k] - planted).abs() <= 0.07, "{id}: {}", m.worker_accuracy[k]);
    }
}

#[test]
fn propensity_model_detects_label_spammers() {
    // Spammers answer inside the window, so only their labels give them away.
    let cfg = SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    };
    let (d, truth) = generate(&cfg).unwrap();
    let mut records = d.records();
    let mut rng = RandomSource::new(1);
    for (r, jd) in records.iter_mut().zip(d.judgments()) {
        if truth.spammer[jd.worker] {
            r.time_seconds = rng.random_range(12.0..45.0);
        }
    }
    let d = Dataset::new(LabelSpace::new(2).unwrap(), records, d.gold_map()).unwrap();
    let s = bccpropensity_gibbs(&d, &Hyperparameters::for_dataset(&d), &SamplerSettings::new(2000, 500, 9)).unwrap();
    let psi = s.propensity.unwrap();
    let right = psi.iter().zip(&truth.spammer).filter(|(&p, &sp)| (p > 0.5) != sp).count();
    assert!(right as f64 / psi.len() as f64 >= 0.8);
}

#[test]
fn inferred_windows_cover_planted_interiors() {
    let (d, truth) = generate(&SynthConfig { seed: 17, ..SynthConfig::default() }).unwrap();
    let s = fit(Method::BccTime, &d, &FitOptions::for_dataset(&d)).unwrap();
    let durations = s.durations.unwrap();
    let covered = durations
        .iter()
        .zip(&truth.windows)
        .filter(|(dur, &(lo, hi))| {
            let w = hi - lo;
            dur.sigma_mean <= lo + 0.1 * w && dur.lambda_mean >= hi - 0.1 * w
        })
        .count();
    assert!(covered as f64 / durations.len() as f64 >= 0.8, "{covered}");
    for dur in &durations {
        assert!(dur.sigma_mean <= dur.lambda_mean);
    }
}

fn planted_state(truth: &GroundTruth, classes: usize) -> BccTimeState {
    BccTimeState {
        t: truth.labels.clone(),
        p: vec![1.0 / classes as f64; classes],
        s: vec![1.0 / classes as f64; classes],
        pi: truth.confusion.iter().flatten().flatten().copied().collect(),
        psi: truth.propensity.iter().map(|p| p.clamp(0.01, 0.99)).collect(),
        v: truth.valid.clone(),
        sigma: truth.windows.iter().map(|w| w.0).collect(),
        lambda: truth.windows.iter().map(|w| w.1).collect(),
    }
}

#[test]
fn chain_started_at_truth_stays_there() {
    let (raw, truth) = generate(&SynthConfig { seed: 23, ..SynthConfig::default() }).unwrap();
    let d = raw.transform_times(TimeTransform::Log);
    let h = Hyperparameters::for_dataset(&d);

    let mut state = planted_state(&truth, 2);
    let mut sampler = BccTimeSampler::new(&d, &h, true);
    let mut rng = RandomSource::new(5);
    let mut freq = vec![[0usize; 2]; d.task_count()];
    for _ in 0..500 {
        sampler.sweep(&mut state, &mut rng).unwrap();
        for (f, &t) in freq.iter_mut().zip(&state.t) {
            f[t] += 1;
        }
    }
    let from_truth = freq
        .iter()
        .zip(&truth.labels)
        .filter(|(f, &t)| (f[1] > f[0]) as usize == t)
        .count() as f64
        / d.task_count() as f64;

    let standard = bcctime_gibbs(&d, &h, &SamplerSettings::new(2000, 500, 5)).unwrap();
    let baseline = accuracy(&standard, &truth.labels);
    assert!((from_truth - baseline).abs() <= 0.02, "{from_truth} vs {baseline}");
}

#[test]
fn extra_outliers_never_raise_propensity() {
    let mut before = 0.0;
    let mut after = 0.0;
    for seed in 0..4 {
        let (d, truth) = generate(&SynthConfig { seed: 40 + seed, ..SynthConfig::default() }).unwrap();
        let spammer = truth.spammer.iter().position(|&s| s).unwrap();
        let options = FitOptions::for_dataset(&d);
        let psi = |d: &Dataset| {
            let s = fit(Method::BccTime, d, &options).unwrap();
            s.propensity.unwrap()[spammer]
        };
        before += psi(&d);

        let judged: Vec<bool> = (0..d.task_count())
            .map(|i| d.task_judgments(i).iter().any(|&j| d.judgments()[j].worker == spammer))
            .collect();
        let mut rng = RandomSource::new(seed);
        let mut records = d.records();
        let id = d.worker_ids()[spammer].clone();
        for (i, _) in judged.iter().enumerate().filter(|(_, &j)| !j).take(20) {
            records.push(JudgmentRecord {
                task_id: d.task_ids()[i].clone(),
                worker_id: id.clone(),
                label: rng.random_range(0..2),
                time_seconds: if rng.random::<bool>() { 0.5 } else { 1500.0 },
            });
        }
        let more = Dataset::new(LabelSpace::new(2).unwrap(), records, None).unwrap();
        after += psi(&more);
    }
    assert!(after <= before + 0.02, "{before} -> {after}");
}

#[test]
fn renaming_workers_permutes_outputs_only() {
    let (d, _) = generate(&SynthConfig { seed: 31, tasks: 60, ..SynthConfig::default() }).unwrap();
    let mut records = d.records();
    for r in &mut records {
        r.worker_id = format!("renamed-{}", r.worker_id.chars().rev().collect::<String>());
    }
    let renamed = Dataset::new(LabelSpace::new(2).unwrap(), records, None).unwrap();
    let options = FitOptions {
        sampler: SamplerSettings::new(400, 100, 2),
        ..FitOptions::for_dataset(&d)
    };
    for method in [Method::Bcc, Method::BccTime, Method::Cbcc] {
        let a = fit(method, &d, &options).unwrap();
        let b = fit(method, &renamed, &options).unwrap();
        assert_eq!(a.labels, b.labels, "{method}");
        assert_eq!(a.confusion, b.confusion);
        assert_eq!(a.propensity, b.propensity);
    }
}

#[test]
fn multiple_chains_are_reproducible() {
    let (d, _) = generate(&SynthConfig { seed: 2, tasks: 50, ..SynthConfig::default() }).unwrap();
    let options = FitOptions {
        sampler: SamplerSettings::new(300, 100, 7).with_chains(3),
        ..FitOptions::for_dataset(&d)
    };
    let a = fit(Method::BccTime, &d, &options).unwrap();
    let b = fit(Method::BccTime, &d, &options).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.durations, b.durations);
    assert_eq!(a.diagnostics.retained_samples, 600);
}
