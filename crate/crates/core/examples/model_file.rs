//! Saves a calibrated model, reloads it and checks that predictions and
//! bytes survive the round trip.

use doc_open::calibration::fit_thresholds;
use doc_open::data::make_open_split;
use doc_open::encoder::EncoderConfig;
use doc_open::model_file::ModelFile;
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::trainer::{train, TrainConfig};
use doc_open::HeadKind;

fn main() -> doc_open::Result<()> {
    let dataset = generate(&SyntheticConfig {
        classes: 4,
        docs_per_class: 100,
        ..SyntheticConfig::default()
    });
    let split = make_open_split(&dataset, 0.75, 2)?;
    let vocab = split.build_vocab(&dataset, 5000)?;
    let encoded = split.encode(&dataset, &vocab, 40);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        embed_dim: 8,
        doc_len: 40,
        filter_widths: vec![2, 3],
        filters_per_width: 8,
        hidden_dim: 16,
        conv_relu: true,
    };
    let quick = TrainConfig {
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let (params, _) = train(encoded.training_view(), &config, &quick)?;
    let thresholds = fit_thresholds(&params, &encoded.train, 3.0, &encoded.seen_classes)?;
    let model = ModelFile {
        head: HeadKind::OneVsRest,
        vocab,
        classes: encoded.seen_classes.clone(),
        params,
        thresholds: Some(thresholds),
    };

    let path = std::env::temp_dir().join(format!("doc-open-example-{}.bin", std::process::id()));
    model.save(&path)?;
    let loaded = ModelFile::load(&path)?;
    let bytes = std::fs::read(&path)?;
    std::fs::remove_file(&path)?;

    assert_eq!(loaded, model);
    assert_eq!(loaded.to_bytes(), bytes);
    let doc = &encoded.test[0].ids;
    assert_eq!(loaded.params.forward(doc)?, model.params.forward(doc)?);
    println!(
        "{} bytes, format version {}, classes {:?}, thresholds {:?}",
        bytes.len(),
        doc_open::model_file::VERSION,
        loaded.classes,
        loaded.thresholds.as_ref().map(|t| &t.thresholds)
    );
    Ok(())
}
