//! The three frozen encoders on one synthetic shape: a point cloud, its
//! rendered depth image and a caption all land in the shared space.
//!
//! cargo run --release --example encoders

use ppt::data::synthetic::{generate_shape, render_depth, ShapeKind, View};
use ppt::encoders::{EncoderConfig, EncoderStack, Vocabulary};
use ppt::tensor::cosine_similarity;

fn main() -> ppt::Result<()> {
    let mut config = EncoderConfig::default();
    config.text.width = 64;
    config.text.heads = 4;
    config.image.width = 64;
    config.point.width = 64;
    config.point.heads = 4;
    let stack = EncoderStack::new(config, Vocabulary::default(), 0)?;

    let cloud = generate_shape(ShapeKind::Torus, 256, 0.01, 7)?;
    let patches = stack.point.patchify(&cloud)?;
    println!("{} points -> {} patches of {} neighbours", cloud.len(), patches.centers.len() / 3, config.point.patch_size);
    let h = stack.point.features(std::slice::from_ref(&patches))?;
    let point = stack.point.project(&h)?;
    println!("h^P {:?} -> point embedding {:?}", h.shape(), point.shape());

    let size = config.image.image_size;
    let image = stack.image.encode(&render_depth(&cloud, View::FRONT, size, size)?)?;
    let text = stack.text.encode(&stack.text.embed_text(&stack.vocab, "a 3D shape of a torus")?)?;
    println!("image {:?}  text {:?}", image.shape(), text.shape());
    println!(
        "untrained cosines: point-text {:.3}  point-image {:.3}",
        cosine_similarity(&point, &text)?.item()?,
        cosine_similarity(&point, &image)?.item()?
    );
    Ok(())
}
