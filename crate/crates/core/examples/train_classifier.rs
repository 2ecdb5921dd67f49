//! Trains the 1-vs-rest classifier on every class and scores it closed-world.

use doc_open::data::make_open_split;
use doc_open::encoder::EncoderConfig;
use doc_open::eval::{evaluate, macro_f1, Decision};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::trainer::{train, TrainConfig};

fn main() -> doc_open::Result<()> {
    let dataset = generate(&SyntheticConfig {
        docs_per_class: 100,
        ..SyntheticConfig::default()
    });
    let split = make_open_split(&dataset, 1.0, 1)?;
    let vocab = split.build_vocab(&dataset, 5000)?;
    let encoded = split.encode(&dataset, &vocab, 80);

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        embed_dim: 16,
        doc_len: 80,
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
    let (params, report) = train(encoded.training_view(), &config, &quick)?;
    for (epoch, (t, v)) in report.train_loss.iter().zip(&report.validation_loss).enumerate() {
        println!("epoch {:>2}  train {t:.4}  validation {v:.4}", epoch + 1);
    }
    let cm = evaluate(&params, Decision::Closed, &encoded.test)?;
    println!("closed-world macro-F1 {:.4} on {} documents", macro_f1(&cm), cm.total());
    Ok(())
}
