//! Fits every aggregator to synthetic data with planted spammers and prints
//! label recovery, spammer detection and AUC.
//!
//! cargo run --release -p crowdtime-core --example recovery -- [seeds] [first-seed]

use crowdtime::aggregate::{fit, FitOptions, Method};
use crowdtime::metrics::evaluate;
use crowdtime::synth::{generate, SynthConfig};

fn main() -> crowdtime::Result<()> {
    let arg = |i: usize, default: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (seeds, first) = (arg(1, 3), arg(2, 0));
    for seed in first..first + seeds {
        let cfg = SynthConfig { seed, ..SynthConfig::default() };
        let (d, truth) = generate(&cfg)?;
        let mut options = FitOptions::for_dataset(&d);
        options.sampler.seed = seed;
        println!("seed {seed}: {} judgments, {} spammers", d.judgments().len(), truth.spammer_total());
        for method in Method::ALL {
            if method == Method::Cbcc {
                continue;
            }
            let start = std::time::Instant::now();
            let s = fit(method, &d, &options)?;
            let report = evaluate(&s, &d)?;
            let detection = s.propensity.as_ref().map(|psi| {
                let hits = psi.iter().zip(&truth.spammer).filter(|(p, &sp)| (**p > 0.5) != sp).count();
                hits as f64 / psi.len() as f64
            });
            println!(
                "  {:8} acc {:.3} auc {:.3} spam-detect {:?} ({:.1}s)",
                method.name(),
                report.accuracy,
                report.auc.unwrap_or(f64::NAN),
                detection,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
