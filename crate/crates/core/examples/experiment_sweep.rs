//! Seen-fraction sweep on a synthetic 8-topic corpus.
//!
//!     cargo run --release --example experiment_sweep -- 0.25 5

use std::time::Instant;

use doc_open::eval::{run_experiment, ExperimentSpec};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::EncoderConfig;

fn main() -> doc_open::Result<()> {
    let mut args = std::env::args().skip(1);
    let fraction: f64 = args.next().map_or(Ok(0.25), |a| a.parse()).expect("fraction");
    let reps: usize = args.next().map_or(Ok(3), |a| a.parse()).expect("repetitions");

    let dataset = generate(&SyntheticConfig::default());
    let spec = ExperimentSpec {
        seen_fractions: vec![fraction],
        repetitions: reps,
        encoder: EncoderConfig {
            embed_dim: 50,
            doc_len: 200,
            ..EncoderConfig::default()
        },
        ..ExperimentSpec::default()
    };
    let start = Instant::now();
    let report = run_experiment(&spec, &dataset)?;
    print!("{}", report.to_text());
    for run in &report.runs {
        let scores: Vec<String> = run
            .scores
            .iter()
            .map(|s| format!("{}={:.4}", s.method, s.macro_f1))
            .collect();
        println!("rep {} seen {:?}: {}", run.repetition, run.seen_classes, scores.join(" "));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
