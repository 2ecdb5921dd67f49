//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//!     cargo test --release --test acceptance

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use doc_open::calibration::{fit_sigma, fit_thresholds, threshold};
use doc_open::cli::{self, Cli, Command};
use doc_open::data::{make_open_split, write_dataset, LabeledText, PAD_ID};
use doc_open::encoder::{EncoderConfig, ModelParams};
use doc_open::eval::{
    confusion_from_logits, evaluate, macro_f1, predict_logits, run_experiment, ConfusionMatrix,
    Decision, ExperimentSpec, METHOD_DOC, METHOD_DOC_HALF, METHOD_SOFTMAX,
};
use doc_open::head::{predict_open, ClassProbabilities, HeadKind, OpenPrediction};
use doc_open::synthetic::{generate, SyntheticConfig};
use doc_open::tensor::{grad_check, Tensor};
use doc_open::trainer::{example_gradients, train, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_encoder() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 50,
        doc_len: 200,
        ..EncoderConfig::default()
    }
}

fn criterion_1_gradients() -> Outcome {
    let start = Instant::now();
    let seeds = 20u64;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let doc_len = rng.gen_range(4..=12);
        let mut widths: Vec<usize> = (1..=4).filter(|_| rng.gen_bool(0.6)).collect();
        if widths.is_empty() {
            widths.push(2);
        }
        let config = EncoderConfig {
            vocab_size: rng.gen_range(3..=20),
            embed_dim: rng.gen_range(1..=8),
            filter_widths: widths,
            filters_per_width: rng.gen_range(1..=3),
            hidden_dim: rng.gen_range(1..=5),
            num_classes: rng.gen_range(2..=4),
            doc_len,
            conv_relu: rng.gen_bool(0.5),
        };
        let mut params = ModelParams::init(&config, seed).map_err(|e| e.to_string())?;
        for t in params.tensors_mut().into_iter().skip(1) {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let used = rng.gen_range(1..=doc_len);
        let doc: Vec<usize> = (0..doc_len)
            .map(|i| if i < used { rng.gen_range(1..config.vocab_size) } else { PAD_ID })
            .collect();
        let label = rng.gen_range(0..config.num_classes);
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let err = grad_check(&tensors, 1e-5, |ps| {
            let mut ps = ps.to_vec();
            ps[0].row_mut(PAD_ID).fill(0.0);
            let model = ModelParams::from_tensors(config.clone(), ps)?;
            let (loss, grads) = example_gradients(&model, &doc, label, HeadKind::OneVsRest)?;
            Ok((Tensor::scalar(loss), grads))
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("{seeds} seeds, max relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn mirrored_std(p: &[f64]) -> f64 {
    let points: Vec<f64> = p.iter().flat_map(|&x| [x, 2.0 - x]).collect();
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    (points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn criterion_2_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let p: Vec<f64> = (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let sigma = fit_sigma(&p).map_err(|e| e.to_string())?;
        worst = worst.max((sigma - mirrored_std(&p)).abs());
        let alpha = rng.gen_range(0.1..5.0);
        let t = threshold(sigma, alpha);
        if t != 0.5f64.max(1.0 - alpha * sigma) {
            return Err(format!("threshold({sigma}, {alpha}) = {t}"));
        }
    }
    let hand = [
        (vec![0.9, 1.0], 0.0707107, 1e-7),
        (vec![0.5], 0.5, 1e-15),
        (vec![1.0, 1.0, 1.0], 0.0, 0.0),
    ];
    for (p, expected, tol) in hand {
        let got = fit_sigma(&p).map_err(|e| e.to_string())?;
        if (got - expected).abs() > tol {
            return Err(format!("fit_sigma({p:?}) = {got}, expected {expected}"));
        }
    }
    check(worst <= 1e-12, format!("1000 random inputs, max deviation {worst:.2e}; hand examples match"))
}

fn brute_force_open(p: &[f64], t: &[f64]) -> Option<(usize, f64)> {
    let mut any = false;
    for i in 0..p.len() {
        if p[i] >= t[i] {
            any = true;
        }
    }
    if !any {
        return None;
    }
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    Some((best, p[best]))
}

fn criterion_3_open_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut kinds = [0usize; 3];
    for case in 0..10_000 {
        let m = rng.gen_range(1..=8);
        let t: Vec<f64> = match case % 3 {
            0 => vec![rng.gen_range(0.5..1.0); m],
            _ => (0..m).map(|_| rng.gen_range(0.5..1.0)).collect(),
        };
        let p: Vec<f64> = match case % 4 {
            0 => t.iter().map(|&ti| ti * rng.gen::<f64>()).collect(),
            1 => {
                let k = rng.gen_range(0..m);
                (0..m)
                    .map(|i| if i == k { rng.gen_range(t[i]..=1.0) } else { t[i] * rng.gen::<f64>() })
                    .collect()
            }
            2 => t.iter().map(|&ti| if rng.gen_bool(0.3) { ti } else { rng.gen() }).collect(),
            _ => (0..m).map(|_| rng.gen()).collect(),
        };
        let expected = brute_force_open(&p, &t);
        let above = p.iter().zip(&t).filter(|(a, b)| a >= b).count();
        kinds[above.min(2)] += 1;
        let got = match predict_open(&ClassProbabilities(p.clone()), &t).map_err(|e| e.to_string())? {
            OpenPrediction::Reject => None,
            OpenPrediction::Class { index, probability } => Some((index, probability)),
        };
        if got != expected {
            return Err(format!("p={p:?} t={t:?}: got {got:?}, expected {expected:?}"));
        }
    }
    check(
        kinds.iter().all(|&k| k > 0),
        format!(
            "10000 pairs agree ({} all-below, {} one-above, {} several-above)",
            kinds[0], kinds[1], kinds[2]
        ),
    )
}

fn pairwise_macro_f1(pairs: &[(usize, usize)], m: usize) -> f64 {
    let classes = if pairs.iter().any(|&(g, _)| g == m) { m + 1 } else { m };
    let mut total = 0.0;
    for c in 0..classes {
        let tp = pairs.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let gold = pairs.iter().filter(|&&(g, _)| g == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if gold > 0.0 { tp / gold } else { 0.0 };
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / classes as f64
}

fn criterion_4_macro_f1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=6);
        let n = m + 1;
        let sparse = rng.gen_bool(0.3);
        let rows: Vec<Vec<u64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| if sparse && rng.gen_bool(0.6) { 0 } else { rng.gen_range(0..20) })
                    .collect()
            })
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let mut pairs = Vec::new();
        for (g, row) in rows.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                pairs.extend(std::iter::repeat((g, p)).take(count as usize));
            }
        }
        worst = worst.max((macro_f1(&cm) - pairwise_macro_f1(&pairs, m)).abs());
    }
    let hand = ConfusionMatrix::from_rows(&[vec![8, 1, 1], vec![0, 9, 1], vec![2, 0, 8]])
        .map_err(|e| e.to_string())?;
    let hand_f1 = macro_f1(&hand);
    let expected = (0.8 + 0.9 + 0.8) / 3.0;
    check(
        worst <= 1e-12 && (hand_f1 - expected).abs() <= 1e-12,
        format!("1000 random matrices, max deviation {worst:.2e}; hand example {hand_f1:.4}"),
    )
}

fn criterion_5_directional() -> Outcome {
    let start = Instant::now();
    let dataset = generate(&SyntheticConfig::default());
    let spec = ExperimentSpec {
        seen_fractions: vec![0.25],
        repetitions: 5,
        encoder: desk_encoder(),
        ..ExperimentSpec::default()
    };
    let report = run_experiment(&spec, &dataset).map_err(|e| e.to_string())?;
    let mean = |method: &str| report.cell(method, 0.25).map(|c| c.mean).unwrap_or(f64::NAN);
    let (doc, half, softmax) = (mean(METHOD_DOC), mean(METHOD_DOC_HALF), mean(METHOD_SOFTMAX));
    let secs = start.elapsed().as_secs_f64();
    let a = doc - half >= 0.02;
    let b = half - softmax >= 0.10;
    check(
        a && b && secs < 600.0,
        format!(
            "DOC {doc:.4}, DOC(t=0.5) {half:.4}, Softmax {softmax:.4}; \
             (a) margin {:.4} {}, (b) margin {:.4} {}; {secs:.0}s",
            doc - half,
            if a { "ok" } else { "< 0.02" },
            half - softmax,
            if b { "ok" } else { "< 0.10" },
        ),
    )
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 16,
        doc_len: 60,
        filter_widths: vec![3, 4],
        filters_per_width: 16,
        hidden_dim: 32,
        ..EncoderConfig::default()
    }
}

fn criterion_6_clamp() -> Outcome {
    let dataset = generate(&SyntheticConfig {
        docs_per_class: 60,
        ..SyntheticConfig::default()
    });
    let split = make_open_split(&dataset, 0.5, 6).map_err(|e| e.to_string())?;
    let vocab = split.build_vocab(&dataset, 5000).map_err(|e| e.to_string())?;
    let encoded = split.encode(&dataset, &vocab, 60);
    let m = encoded.num_classes();
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: m,
        ..small_encoder()
    };
    let (params, _) = train(encoded.training_view(), &config, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let huge = fit_thresholds(&params, &encoded.train, 1e9, &encoded.seen_classes).map_err(|e| e.to_string())?;
    let logits = predict_logits(&params, &encoded.test).map_err(|e| e.to_string())?;
    let clamped = confusion_from_logits(&logits, &encoded.test, m, Decision::open(&huge.thresholds))
        .map_err(|e| e.to_string())?;
    let half = vec![0.5; m];
    let overridden = evaluate(&params, Decision::open(&half), &encoded.test).map_err(|e| e.to_string())?;
    check(
        clamped == overridden && huge.thresholds.iter().all(|&t| t == 0.5),
        format!("{} test documents, identical confusion matrices", clamped.total()),
    )
}

fn parse(args: &[&str]) -> Command {
    let mut full = vec!["doc-open"];
    full.extend_from_slice(args);
    Cli::try_parse_from(full).expect("valid arguments").command
}

fn criterion_7_determinism(dir: &Path) -> Outcome {
    let data = dir.join("data.jsonl");
    let dataset: Vec<LabeledText> = generate(&SyntheticConfig {
        classes: 4,
        docs_per_class: 40,
        ..SyntheticConfig::default()
    });
    write_dataset(std::fs::File::create(&data).map_err(|e| e.to_string())?, &dataset).map_err(|e| e.to_string())?;
    let data = data.to_str().unwrap().to_owned();
    let model_flags = [
        "--embed-dim", "8", "--doc-len", "40", "--filter-widths", "2,3", "--filters", "6",
        "--hidden", "10", "--epochs", "3",
    ];

    let mut models = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("model{run}.bin"));
        let out_s = out.to_str().unwrap().to_owned();
        let mut args = vec!["train", "--data", &data, "--out", &out_s, "--seed", "11", "--calibrate"];
        args.extend_from_slice(&model_flags);
        let Command::Train(a) = parse(&args) else { unreachable!() };
        cli::cmd_train(&a, &mut std::io::sink()).map_err(|e| e.to_string())?;
        models.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }

    let mut reports = Vec::new();
    for run in 0..2 {
        let report = dir.join(format!("report{run}.json"));
        let report_s = report.to_str().unwrap().to_owned();
        let mut args = vec![
            "experiment", "--data", &data, "--fractions", "0.5,1.0", "--reps", "2", "--seed", "5",
            "--report", &report_s,
        ];
        args.extend_from_slice(&model_flags);
        let Command::Experiment(a) = parse(&args) else { unreachable!() };
        cli::cmd_experiment(&a, &mut std::io::sink()).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(&report).map_err(|e| e.to_string())?);
    }
    check(
        models[0] == models[1] && reports[0] == reports[1],
        format!(
            "model files {} ({} bytes), experiment reports {} ({} bytes)",
            if models[0] == models[1] { "identical" } else { "DIFFER" },
            models[0].len(),
            if reports[0] == reports[1] { "identical" } else { "DIFFER" },
            reports[0].len()
        ),
    )
}

fn criterion_8_closed_world() -> Outcome {
    let dataset = generate(&SyntheticConfig::default());
    let split = make_open_split(&dataset, 1.0, 8).map_err(|e| e.to_string())?;
    let vocab = split.build_vocab(&dataset, 5000).map_err(|e| e.to_string())?;
    let encoded = split.encode(&dataset, &vocab, 200);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        num_classes: encoded.num_classes(),
        ..desk_encoder()
    };
    let mut scores = Vec::new();
    for head in [HeadKind::OneVsRest, HeadKind::Softmax] {
        let tc = TrainConfig {
            head,
            seed: 8,
            ..TrainConfig::default()
        };
        let (params, _) = train(encoded.training_view(), &config, &tc).map_err(|e| e.to_string())?;
        let cm = evaluate(&params, Decision::Closed, &encoded.test).map_err(|e| e.to_string())?;
        scores.push(macro_f1(&cm));
    }
    check(
        scores.iter().all(|&s| s >= 0.95),
        format!("1-vs-rest {:.4}, softmax {:.4}", scores[0], scores[1]),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient correctness", Box::new(criterion_1_gradients)),
        ("calibration oracle", Box::new(criterion_2_calibration)),
        ("rejection rule oracle", Box::new(criterion_3_open_rule)),
        ("macro-F1 oracle", Box::new(criterion_4_macro_f1)),
        ("synthetic 25% ordering", Box::new(criterion_5_directional)),
        ("clamp equivalence", Box::new(criterion_6_clamp)),
        ("determinism", Box::new(|| criterion_7_determinism(dir.path()))),
        ("closed-world sanity", Box::new(criterion_8_closed_world)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
