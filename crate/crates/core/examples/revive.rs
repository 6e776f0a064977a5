//! Find an input that activates a feature never seen firing in the corpus.
//!
//! cargo run --example revive -- [DETECTOR_TOKEN]

use featdesc::corpus;
use featdesc::fixture::ToyFixture;
use featdesc::gateway::Gateway;
use featdesc::index::{build_index, is_dead, IndexConfig};
use featdesc::prompts::Templates;
use featdesc::revival::{build_revival_plan, revive, RevivalConfig};

fn main() -> featdesc::Result<()> {
    // "q" never occurs in the toy corpus
    let piece = std::env::args().nth(1).unwrap_or_else(|| "q".into());
    let toy = ToyFixture::build()?;
    let feature = toy.detector(&piece);
    let params = toy.featurizers.params(&feature)?;
    let seqs = corpus::tokenize(&toy.corpus, &toy.tokenizer, 128)?;
    let index = build_index(&toy.model, &toy.featurizers, &[feature.clone()], &seqs, &IndexConfig::default())?;
    let dead = is_dead(&index, &feature, 0.0)?;
    println!("{feature} dead in the corpus: {dead}");

    let prompts = corpus::sample_windows(&seqs, 32, 32, 7)?;
    let config = RevivalConfig::default();
    let plan = build_revival_plan(&Gateway::mock(), &Templates::builtin(), &toy.model, &params, &feature, &toy.tokenizer, &prompts, &config)?;
    println!(
        "plan: {} pool tokens, {} token prompts, {} sentences ({} candidates)",
        plan.token_pool.len(),
        plan.combo_prompts.len(),
        plan.llm_sentences.len(),
        plan.n_candidates()
    );
    let result = revive(&toy.model, &params, &feature, &toy.tokenizer, &plan, config.batch_size)?;
    match &result.witness {
        Some(w) if result.activated => println!(
            "revived after {} candidates: {:?} {:?} -> activation {:.4}",
            result.candidates_tried, w.kind, w.text, result.witness_activation
        ),
        _ => println!("not revived; best activation {:.4}", result.witness_activation),
    }
    Ok(())
}
