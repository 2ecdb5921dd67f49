//! Tokenization, vocabulary building and the open-world split.

use doc_open::data::{make_open_split, tokenize};
use doc_open::synthetic::{generate, SyntheticConfig};

fn main() -> doc_open::Result<()> {
    println!("{:?}", tokenize("Re: GPU drivers (v2.1) -- don't work!"));

    let dataset = generate(&SyntheticConfig::default());
    let split = make_open_split(&dataset, 0.5, 42)?;
    println!("seen:   {:?}", split.seen_classes);
    println!("unseen: {:?}", split.unseen_classes);
    println!(
        "train {} / validation {} / test {} documents",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let vocab = split.build_vocab(&dataset, 5000)?;
    let encoded = split.encode(&dataset, &vocab, 24);
    println!("vocabulary of {} tokens", vocab.len());
    let first = &encoded.train[0];
    println!("{} {:?} -> {:?}", first.label, first.gold, first.ids);
    let unseen = encoded.test.iter().find(|d| d.gold.seen().is_none()).expect("unseen test document");
    let unknown = unseen.ids.iter().filter(|&&id| id == 1).count();
    println!("{} document has {unknown} of 24 ids mapped to <unk>", unseen.label);
    Ok(())
}
