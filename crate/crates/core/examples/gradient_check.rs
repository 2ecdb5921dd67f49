//! Compares the tape's analytic gradients with central finite differences
//! for a tiny network and the 1-vs-rest loss.

use doc_open::encoder::{EncoderConfig, ModelParams};
use doc_open::tensor::{grad_check, Tensor};
use doc_open::trainer::example_gradients;
use doc_open::HeadKind;

fn main() -> doc_open::Result<()> {
    let config = EncoderConfig {
        vocab_size: 12,
        embed_dim: 4,
        filter_widths: vec![2, 3],
        filters_per_width: 3,
        hidden_dim: 5,
        num_classes: 3,
        doc_len: 8,
        conv_relu: true,
    };
    let params = ModelParams::init(&config, 7)?;
    let doc = [4, 9, 2, 11, 5, 0, 0, 0];
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let count: usize = tensors.iter().map(Tensor::len).sum();

    let worst = grad_check(&tensors, 1e-5, |ps| {
        let mut ps = ps.to_vec();
        // padding row stays pinned at zero
        ps[0].row_mut(0).fill(0.0);
        let model = ModelParams::from_tensors(config.clone(), ps)?;
        let (loss, grads) = example_gradients(&model, &doc, 1, HeadKind::OneVsRest)?;
        Ok((Tensor::scalar(loss), grads))
    })?;
    println!("{count} parameters checked, max relative error {worst:.3e}");
    Ok(())
}
