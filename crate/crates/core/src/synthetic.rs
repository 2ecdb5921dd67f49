//! Synthetic topic corpora for smoke tests and examples.
//!
//! Every class owns a block of keywords. A document mixes shared background
//! words, keywords of its own class, and a smaller share of keywords
//! borrowed from the next class (cyclically), so neighbouring topics
//! overlap the way real newsgroups do.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledText;
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub docs_per_class: usize,
    pub background_words: usize,
    pub keywords_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a keyword of the document's own class.
    pub own_rate: f64,
    /// Probability that a token is a keyword of the neighbouring class.
    pub neighbour_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 8,
            docs_per_class: 200,
            background_words: 400,
            keywords_per_class: 40,
            min_len: 30,
            max_len: 90,
            own_rate: 0.25,
            neighbour_rate: 0.08,
            seed: 0,
        }
    }
}

pub fn class_name(c: usize) -> String {
    format!("topic{c:02}")
}

/// Generates `classes × docs_per_class` labeled documents, grouped by class.
pub fn generate(config: &SyntheticConfig) -> Vec<LabeledText> {
    let mut out = Vec::with_capacity(config.classes * config.docs_per_class);
    for c in 0..config.classes {
        let mut rng = stream_rng(config.seed, c as u64);
        let neighbour = (c + 1) % config.classes;
        for _ in 0..config.docs_per_class {
            let len = rng.gen_range(config.min_len..=config.max_len);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let r: f64 = rng.gen();
                    if r < config.own_rate {
                        format!("k{c}x{}", rng.gen_range(0..config.keywords_per_class))
                    } else if r < config.own_rate + config.neighbour_rate {
                        format!("k{neighbour}x{}", rng.gen_range(0..config.keywords_per_class))
                    } else {
                        format!("w{}", rng.gen_range(0..config.background_words))
                    }
                })
                .collect();
            out.push(LabeledText {
                label: class_name(c),
                text: words.join(" "),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            classes: 3,
            docs_per_class: 5,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg);
        assert_eq!(a.len(), 15);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a[0].label, "topic00");
        assert_eq!(a[14].label, "topic02");
        assert!(a[0].text.contains("k0x"));
    }
}
