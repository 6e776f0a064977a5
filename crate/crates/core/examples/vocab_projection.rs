//! Describe toy SAE features from their vocabulary projection.
//!
//! cargo run --example vocab_projection

use featdesc::describe::{vocab_projection_tokens, Describer};
use featdesc::fixture::{ToyFixture, TOY_DETECTOR_TOKENS};
use featdesc::gateway::Gateway;
use featdesc::prompts::Templates;

fn main() -> featdesc::Result<()> {
    let toy = ToyFixture::build()?;
    let gateway = Gateway::mock();
    let templates = Templates::builtin();
    let describer = Describer::new(&gateway, &templates, &toy.tokenizer);

    for piece in TOY_DETECTOR_TOKENS {
        let feature = toy.detector(piece);
        let params = toy.featurizers.params(&feature)?;
        let (top, bottom) = vocab_projection_tokens(&toy.model, &params, feature.index, 5, &toy.tokenizer)?;
        let show = |l: &[featdesc::describe::TokenScore]| {
            l.iter().map(|s| format!("{:?}", s.token_text)).collect::<Vec<_>>().join(" ")
        };
        println!("{feature}  (detects {piece:?})");
        println!("  top:    {}", show(&top));
        println!("  bottom: {}", show(&bottom));
        let d = describer.vocabproj(&feature, &top, &bottom)?;
        println!("  description: {}", d.text);
    }
    Ok(())
}
