use std::path::Path;

use crowdtime::metrics::{
    binned_quality_csv, correlation_csv, evaluation_csv, histogram_csv, log_spaced_edges,
    per_task_quality_time, subsample_csv, subsample_curve, task_time_histograms,
    time_binned_quality,
};
use crowdtime::output::{create_dir, write_atomic};
use crowdtime::synth::write_synthetic;
use crowdtime::{
    evaluate as score, fit, generate, load_judgments_csv, CommunityConfig, Dataset, Error,
    FitOptions, Hyperparameters, LabelSpace, Method, Result, SamplerSettings, SynthConfig,
    TimeTransform, WindowSpec,
};

use crate::{AggregateArgs, AnalyzeTimeArgs, EvaluateArgs, HyperArgs, InputArgs, SamplerArgs, SimulateArgs};

fn load(input: &InputArgs) -> Result<Dataset> {
    let space = match &input.class_names {
        Some(names) => LabelSpace::with_names(names.iter().map(|n| n.trim().to_string()))?,
        None => LabelSpace::new(input.classes)?,
    };
    let d = load_judgments_csv(&input.judgments, space, input.gold.as_deref())?;
    let stats = d.stats();
    log::info!(
        "loaded {} judgments over {} tasks and {} workers",
        stats.judgments,
        stats.tasks,
        stats.workers
    );
    Ok(d)
}

fn per_class(values: &[f64], classes: usize, name: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; classes]),
        n if n == classes => Ok(values.to_vec()),
        n => Err(Error::InvalidHyperparameters(format!(
            "{name} takes 1 or {classes} values, got {n}"
        ))),
    }
}

fn hyperparameters(d: &Dataset, sampler: &SamplerArgs, hp: &HyperArgs) -> Result<Hyperparameters> {
    let classes = d.class_count();
    let mut h = Hyperparameters::for_dataset(d);
    h.time_transform = sampler.time_transform;
    if sampler.time_transform == TimeTransform::None {
        // Default threshold priors are in log-seconds.
        h.sigma0_mean = h.sigma0_mean.exp();
        h.lambda0_mean = h.lambda0_mean.exp();
    }
    if let Some(v) = &hp.p0 {
        h.p0 = per_class(v, classes, "hp.p0")?;
    }
    if let Some(v) = &hp.s0 {
        h.s0 = per_class(v, classes, "hp.s0")?;
    }
    let scalars = [
        (hp.pi0_diag, &mut h.pi0_diag),
        (hp.pi0_offdiag, &mut h.pi0_offdiag),
        (hp.alpha0, &mut h.alpha0),
        (hp.beta0, &mut h.beta0),
        (hp.sigma0_mean, &mut h.sigma0_mean),
        (hp.gamma0_precision, &mut h.gamma0_precision),
        (hp.lambda0_mean, &mut h.lambda0_mean),
        (hp.delta0_precision, &mut h.delta0_precision),
    ];
    for (value, slot) in scalars {
        if let Some(v) = value {
            *slot = v;
        }
    }
    h.validate(classes)?;
    Ok(h)
}

fn options(d: &Dataset, sampler: &SamplerArgs, hp: &HyperArgs) -> Result<FitOptions> {
    let settings = SamplerSettings::new(sampler.iterations, sampler.burnin, sampler.seed)
        .with_chains(sampler.chains);
    settings.validate()?;
    log::info!("seed {}", sampler.seed);
    Ok(FitOptions {
        hyperparameters: hyperparameters(d, sampler, hp)?,
        sampler: settings,
        communities: CommunityConfig {
            communities: sampler.communities,
            concentration: sampler.community_concentration,
        },
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

pub fn aggregate(args: AggregateArgs) -> Result<()> {
    let method: Method = args.model.parse()?;
    let d = load(&args.input)?;
    let options = options(&d, &args.sampler, &args.hyper)?;
    let mut summary = fit(method, &d, &options)?;
    let extra = &mut summary.metadata.extra;
    extra.insert("judgments_path".into(), args.input.judgments.display().to_string().into());
    if let Some(g) = &args.input.gold {
        extra.insert("gold_path".into(), g.display().to_string().into());
    }
    summary.write_dir(&d, &args.out)?;
    log::info!("{method} finished in {:.2}s", summary.metadata.wall_time_seconds);
    Ok(())
}

fn parse_models(names: &[String]) -> Result<Vec<Method>> {
    if names.len() == 1 && names[0].trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut methods = parse_models(&args.models)?;
    let d = load(&args.input)?;
    d.require_gold()?;
    if d.class_count() != 2 && args.models.iter().any(|m| m.trim().eq_ignore_ascii_case("all")) {
        methods.retain(|&m| m != Method::OneCoin);
        log::warn!("skipping onecoin: it needs binary labels");
    }
    let options = options(&d, &args.sampler, &args.hyper)?;
    create_dir(&args.out)?;

    let mut reports = Vec::new();
    let mut subsample = String::new();
    for &method in &methods {
        let summary = fit(method, &d, &options)?;
        let report = score(&summary, &d)?;
        log::info!(
            "{method}: average recall {:.4}, accuracy {:.4}",
            report.average_recall,
            report.accuracy
        );
        reports.push(report);

        if let Some(fractions) = &args.subsample {
            let run = |part: &Dataset, seed: u64| {
                let mut o = options.clone();
                o.sampler.seed = seed;
                fit(method, part, &o)
            };
            let points = subsample_curve(&d, fractions, run, args.sampler.seed, args.repeats)?;
            let table = subsample_csv(method.name(), &points);
            if subsample.is_empty() {
                subsample.push_str(&table);
            } else {
                subsample.extend(table.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
    }

    write_atomic(
        &args.out.join("evaluation.csv"),
        evaluation_csv(&reports, d.label_space().names()).as_bytes(),
    )?;
    write_json(&args.out.join("evaluation.json"), &serde_json::to_value(&reports)?)?;
    if !subsample.is_empty() {
        write_atomic(&args.out.join("subsample.csv"), subsample.as_bytes())?;
    }
    let run = serde_json::json!({
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "judgments_path": args.input.judgments.display().to_string(),
        "gold_path": args.input.gold.as_ref().map(|g| g.display().to_string()),
        "seed": options.sampler.seed,
        "iterations": options.sampler.iterations,
        "burnin": options.sampler.burnin,
        "chains": options.sampler.chains,
        "hyperparameters": options.hyperparameters,
        "subsample_fractions": args.subsample,
        "repeats": args.repeats,
    });
    write_json(&args.out.join("run.json"), &run)
}

pub fn analyze_time(args: AnalyzeTimeArgs) -> Result<()> {
    let d = load(&args.input)?;
    d.require_gold()?;
    let default_edges = args.bin_edges.is_none();
    let edges = match args.bin_edges {
        Some(mut e) => {
            e.sort_by(f64::total_cmp);
            e
        }
        None => log_spaced_edges(&d, args.bins),
    };
    create_dir(&args.out)?;
    let binned = time_binned_quality(&d, &edges)?;
    write_atomic(
        &args.out.join("binned_quality.csv"),
        binned_quality_csv(&binned, d.class_count() == 2).as_bytes(),
    )?;
    let correlations = per_task_quality_time(&d, args.min_judgments)?;
    write_atomic(&args.out.join("per_task_correlation.csv"), correlation_csv(&correlations).as_bytes())?;
    let histograms = task_time_histograms(&d, &edges);
    write_atomic(&args.out.join("time_histograms.csv"), histogram_csv(&histograms).as_bytes())?;
    let run = serde_json::json!({
        "judgments_path": args.input.judgments.display().to_string(),
        "gold_path": args.input.gold.as_ref().map(|g| g.display().to_string()),
        "bin_edges_seconds": edges,
        "default_edges": default_edges,
        "min_judgments": args.min_judgments,
    });
    write_json(&args.out.join("run.json"), &run)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    if !(args.window_lower > 0.0 && args.window_upper > args.window_lower) {
        return Err(Error::ConfigInvalid(format!(
            "window must satisfy 0 < lower < upper, got [{}, {}]",
            args.window_lower, args.window_upper
        )));
    }
    let (lower, upper) = (args.window_lower.ln(), args.window_upper.ln());
    let window = if args.window_jitter > 0.0 {
        WindowSpec::Jittered { lower, upper, jitter: args.window_jitter }
    } else {
        WindowSpec::Global { lower, upper }
    };
    let config = SynthConfig {
        tasks: args.tasks,
        workers: args.workers,
        classes: args.classes,
        spammer_fraction: args.spammer_fraction,
        reliable_accuracy: args.accuracy,
        reliable_propensity: args.propensity,
        window,
        outlier_scale: args.outlier_scale,
        judgments_per_task: args.judgments_per_task,
        seed: args.seed,
    };
    log::info!("seed {}", args.seed);
    let (d, truth) = generate(&config)?;
    write_synthetic(&d, &truth, &args.out)?;
    log::info!(
        "wrote {} judgments with {} spammers to {}",
        d.judgments().len(),
        truth.spammer_total(),
        args.out.display()
    );
    Ok(())
}
