//! Clamp a feature, measure the mean logit change per token, describe it.
//!
//! cargo run --example token_change -- [FEATURE_INDEX]

use featdesc::corpus;
use featdesc::describe::{token_change_scores, Describer};
use featdesc::eval::{calibrate_clamp, EvalConfig, Sign};
use featdesc::fixture::ToyFixture;
use featdesc::gateway::Gateway;
use featdesc::prompts::Templates;

fn main() -> featdesc::Result<()> {
    let index: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let toy = ToyFixture::build()?;
    let feature = toy.sae_feature(index);
    let params = toy.featurizers.params(&feature)?;

    let seqs = corpus::tokenize(&toy.corpus, &toy.tokenizer, 128)?;
    let prompts = corpus::sample_windows(&seqs, 32, 32, 7)?;
    let cal = calibrate_clamp(&toy.model, &params, &feature, &prompts, 0.5, Sign::Positive, &EvalConfig::default())?;
    println!(
        "{feature}: clamp m = {:.4} gives KL {:.4} ({} evaluations)",
        cal.m, cal.achieved_kl, cal.evaluations
    );

    let (top, bottom) = token_change_scores(&toy.model, &params, &feature, &prompts, cal.m as f32, 8, &toy.tokenizer)?;
    println!("{:<10} {:>10}    {:<10} {:>10}", "promoted", "delta", "suppressed", "delta");
    for (t, b) in top.iter().zip(&bottom) {
        println!("{:<10} {:>10.4}    {:<10} {:>10.4}", format!("{:?}", t.token_text), t.score, format!("{:?}", b.token_text), b.score);
    }

    let gateway = Gateway::mock();
    let templates = Templates::builtin();
    let d = Describer::new(&gateway, &templates, &toy.tokenizer).tokenchange(&feature, &top, &bottom, Some(cal.m as f32))?;
    println!("description: {}", d.text);
    Ok(())
}
