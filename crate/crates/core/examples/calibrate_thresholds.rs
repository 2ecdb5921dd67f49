//! Fits per-class thresholds and compares them with a flat 0.5 cut-off on a
//! test set that contains unseen classes.

use doc_open::calibration::{fit_thresholds, DEFAULT_ALPHA};
use doc_open::data::make_open_split;
use doc_open::encoder::EncoderConfig;
use doc_open::eval::{evaluate, macro_f1, Decision};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::trainer::{train, TrainConfig};

fn main() -> doc_open::Result<()> {
    let dataset = generate(&SyntheticConfig::default());
    let split = make_open_split(&dataset, 0.5, 3)?;
    let vocab = split.build_vocab(&dataset, 5000)?;
    let encoded = split.encode(&dataset, &vocab, 120);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        embed_dim: 16,
        doc_len: 120,
        filter_widths: vec![3, 4],
        filters_per_width: 24,
        hidden_dim: 48,
        conv_relu: true,
    };
    let quick = TrainConfig {
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let (params, _) = train(encoded.training_view(), &config, &quick)?;

    let fitted = fit_thresholds(&params, &encoded.train, DEFAULT_ALPHA, &encoded.seen_classes)?;
    println!("{:<8} {:>8} {:>8}", "class", "sigma", "t");
    for ((name, s), t) in encoded.seen_classes.iter().zip(&fitted.sigmas).zip(&fitted.thresholds) {
        println!("{name:<8} {s:>8.4} {t:>8.4}");
    }

    let half = vec![0.5; encoded.num_classes()];
    for (name, thresholds) in [("fitted", &fitted.thresholds), ("t=0.5", &half)] {
        let cm = evaluate(&params, Decision::open(thresholds), &encoded.test)?;
        let m = cm.seen_classes();
        let rejected: u64 = (0..=m).map(|g| cm.get(g, m)).sum();
        println!(
            "{name:<6} macro-F1 {:.4}, rejected {rejected} (of which {} unseen)",
            macro_f1(&cm),
            cm.get(m, m)
        );
    }
    Ok(())
}
