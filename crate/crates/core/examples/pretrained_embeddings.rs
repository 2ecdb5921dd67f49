//! Loads word vectors into the embedding table and trains with the table
//! frozen.

use std::io::Cursor;

use doc_open::data::make_open_split;
use doc_open::encoder::{load_pretrained_embeddings, EncoderConfig, ModelParams};
use doc_open::eval::{evaluate, macro_f1, Decision};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::trainer::{train_from, TrainConfig};

fn main() -> doc_open::Result<()> {
    let syn = SyntheticConfig {
        docs_per_class: 100,
        ..SyntheticConfig::default()
    };
    let dataset = generate(&syn);
    let split = make_open_split(&dataset, 1.0, 4)?;
    let vocab = split.build_vocab(&dataset, 5000)?;
    let encoded = split.encode(&dataset, &vocab, 80);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        embed_dim: 8,
        doc_len: 80,
        filter_widths: vec![3],
        filters_per_width: 16,
        hidden_dim: 32,
        conv_relu: true,
    };

    // keywords point along their topic axis, background words stay near zero
    let mut vectors = String::new();
    for c in 0..syn.classes {
        for j in 0..syn.keywords_per_class {
            let v: Vec<String> = (0..8).map(|d| if d == c { "1.0".into() } else { "0.0".into() }).collect();
            vectors.push_str(&format!("k{c}x{j} {}\n", v.join(" ")));
        }
    }
    for j in 0..syn.background_words {
        let v: Vec<String> = (0..8).map(|d| format!("{:.3}", ((j * 7 + d) % 11) as f64 / 110.0)).collect();
        vectors.push_str(&format!("w{j} {}\n", v.join(" ")));
    }

    let mut params = ModelParams::init(&config, 4)?;
    let replaced = load_pretrained_embeddings(&mut params, Cursor::new(vectors), &vocab)?;
    println!("replaced {replaced} of {} embedding rows", vocab.len());

    let tc = TrainConfig {
        freeze_embeddings: true,
        ..TrainConfig::default()
    };
    let before = params.embedding.clone();
    let (trained, report) = train_from(encoded.training_view(), params, &tc)?;
    assert_eq!(before, trained.embedding);
    let cm = evaluate(&trained, Decision::Closed, &encoded.test)?;
    println!(
        "{} epochs with frozen embeddings, closed-world macro-F1 {:.4}",
        report.epochs_run(),
        macro_f1(&cm)
    );
    Ok(())
}
