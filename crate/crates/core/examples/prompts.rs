//! Learnable prompt contexts: class-token placement, template
//! initialization and reading contexts back as words.
//!
//! cargo run --release --example prompts

use ppt::encoders::{TextEncoder, TextEncoderConfig, Vocabulary};
use ppt::prompt::{nearest_words, InitMode, InsertPosition, PromptLearner};
use ppt::tensor::GeluMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ppt::Result<()> {
    let vocab = Vocabulary::default();
    let cfg = TextEncoderConfig { width: 32, heads: 4, depth: 1, context_len: 40, mlp_ratio: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let text = TextEncoder::new(cfg, vocab.len(), GeluMode::Tanh, &mut rng)?;
    let classes = vec!["cube".to_string(), "torus".to_string(), "night stand".to_string()];

    for position in InsertPosition::ALL {
        let prompt = PromptLearner::new(&text, &vocab, &classes, 8, position, InitMode::Random, None, &mut rng)?;
        let seq = prompt.compose(&text, 2)?;
        println!(
            "{:>6}: class slot {}  class token at {:?} of {} tokens",
            position.as_str(),
            prompt.class_slot(),
            seq.class_index,
            seq.len()
        );
    }

    let template = "a point cloud model of a";
    let prompt = PromptLearner::new(&text, &vocab, &classes, 6, InsertPosition::End, InitMode::Template, Some(template), &mut rng)?;
    println!("text features {:?}", prompt.class_text_features(&text)?.shape());
    for w in nearest_words(prompt.context.values(), cfg.width, &vocab, text.token_embedding.values())? {
        println!("  context {}  {:<8} {:.3}", w.index, w.word, w.distance);
    }
    Ok(())
}
