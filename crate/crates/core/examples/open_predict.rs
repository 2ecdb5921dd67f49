//! Classifies raw text with a calibrated model: known topics get a label,
//! text from held-out topics is rejected.

use doc_open::calibration::{fit_thresholds, DEFAULT_ALPHA};
use doc_open::data::make_open_split;
use doc_open::encoder::EncoderConfig;
use doc_open::head::{predict_open, ClassProbabilities, OpenPrediction};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::trainer::{train, TrainConfig};

fn main() -> doc_open::Result<()> {
    let dataset = generate(&SyntheticConfig::default());
    let split = make_open_split(&dataset, 0.5, 9)?;
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
    let thresholds = fit_thresholds(&params, &encoded.train, DEFAULT_ALPHA, &encoded.seen_classes)?;

    for &i in split.test.iter().step_by(37).take(8) {
        let doc = &dataset[i];
        let ids = vocab.encode_text(&doc.text, config.doc_len);
        let probs = ClassProbabilities::from_logits(&params.forward(&ids)?);
        let verdict = match predict_open(&probs, &thresholds.thresholds)? {
            OpenPrediction::Reject => "REJECT".to_owned(),
            OpenPrediction::Class { index, probability } => {
                format!("{} ({probability:.3})", encoded.seen_classes[index])
            }
        };
        let seen = if split.seen_classes.contains(&doc.label) { "seen" } else { "unseen" };
        println!("{:<8} {seen:<7} -> {verdict}", doc.label);
    }
    Ok(())
}
