//! Score a description with both faithfulness metrics.
//!
//! cargo run --example evaluate -- [DETECTOR_TOKEN]

use featdesc::describe::{vocab_projection_tokens, Describer};
use featdesc::eval::{gen_eval_sentences, input_eval, output_eval, sample_distractors, steered_generations, EvalConfig};
use featdesc::fixture::ToyFixture;
use featdesc::gateway::{Gateway, GatewayConfig, JudgePolicy};
use featdesc::prompts::Templates;

fn main() -> featdesc::Result<()> {
    let piece = std::env::args().nth(1).unwrap_or_else(|| "k".into());
    let toy = ToyFixture::build()?;
    let gateway = Gateway::new(GatewayConfig { mock_judge: JudgePolicy::KeywordOverlap, ..GatewayConfig::default() })?;
    let templates = Templates::builtin();
    let config = EvalConfig::default();

    let feature = toy.detector(&piece);
    let params = toy.featurizers.params(&feature)?;
    let (top, bottom) = vocab_projection_tokens(&toy.model, &params, feature.index, 10, &toy.tokenizer)?;
    let description = Describer::new(&gateway, &templates, &toy.tokenizer).vocabproj(&feature, &top, &bottom)?.text;
    println!("{feature}: {description}");

    let (activating, neutral) = gen_eval_sentences(&gateway, &templates, &description, config.n_sentences_per_set, config.llm_attempts)?;
    let input = input_eval(&toy.model, &params, &feature, &toy.tokenizer, &activating, &neutral)?;
    println!("\ninput metric: {}", if input.pass { "pass" } else { "fail" });
    for (s, a) in activating.iter().zip(&input.activating_max) {
        println!("  + {a:>8.4}  {s}");
    }
    for (s, a) in neutral.iter().zip(&input.neutral_max) {
        println!("  - {a:>8.4}  {s}");
    }
    println!("  means {:.4} vs {:.4}", input.mean_activating, input.mean_neutral);

    let target = steered_generations(&toy.model, &params, &feature, &toy.tokenizer, &config)?;
    println!("\nclamp values: {:?}", target.clamp_values().iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>());
    for t in target.texts.iter().take(4) {
        println!("  m={:>8.3}  {}", t.clamp_value, t.text);
    }
    let [d1, d2] = sample_distractors(&toy.featurizers, &feature, None, config.seed)?;
    let s1 = steered_generations(&toy.model, &*toy.featurizers.params(&d1)?, &d1, &toy.tokenizer, &config)?;
    let s2 = steered_generations(&toy.model, &*toy.featurizers.params(&d2)?, &d2, &toy.tokenizer, &config)?;
    let out = output_eval(&gateway, &templates, &description, &target, [&s1, &s2], config.seed, config.llm_attempts)?;
    println!(
        "\noutput metric: {} (distractors {d1}, {d2}; order {:?}; judge chose set {})",
        if out.pass { "pass" } else { "fail" },
        out.presentation_order,
        out.judge_choice
    );
    Ok(())
}
