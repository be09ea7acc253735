//! Contrastive alignment and the two prompt-tuning objectives on toy
//! features.
//!
//! cargo run --example losses

use ppt::objectives::{class_distribution, one_hot, pairwise_contrastive, total_contrastive, tuning_loss, FeatureBatch, LossForm, LossWeights};
use ppt::Tensor;

fn main() -> ppt::Result<()> {
    let text = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0])?;
    let aligned = Tensor::matrix(3, 2, vec![0.9, 0.1, 0.1, 0.9, -0.8, -1.1])?;
    let shuffled = Tensor::matrix(3, 2, vec![0.1, 0.9, -0.8, -1.1, 0.9, 0.1])?;
    for tau in [1.0, 0.07] {
        println!(
            "tau {tau}: aligned {:.4}  shuffled {:.4}",
            pairwise_contrastive(&aligned, &text, tau)?.item()?,
            pairwise_contrastive(&shuffled, &text, tau)?.item()?
        );
    }
    let batch = FeatureBatch { point: Some(aligned.clone()), text: Some(text.clone()), image: Some(shuffled) };
    println!("text/point/image total {:.4}", total_contrastive(&batch, &LossWeights::default(), 0.07)?.item()?);

    let probs = class_distribution(&aligned, &text, 1.0)?;
    println!("class distribution {:?}", probs.values().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    let targets = one_hot(&[0, 1, 2], 3)?;
    for form in [LossForm::Categorical, LossForm::Bce] {
        println!("{:>11}: {:.4}", form.as_str(), tuning_loss(&probs, &targets, form)?.item()?);
    }
    Ok(())
}
