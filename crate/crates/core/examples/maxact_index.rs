//! Build the activation index over the toy corpus and describe a feature
//! from its top-activating examples.
//!
//! cargo run --example maxact_index -- [DETECTOR_TOKEN]

use featdesc::corpus;
use featdesc::describe::Describer;
use featdesc::fixture::ToyFixture;
use featdesc::gateway::Gateway;
use featdesc::index::{build_index, IndexConfig};
use featdesc::prompts::Templates;

fn main() -> featdesc::Result<()> {
    let piece = std::env::args().nth(1).unwrap_or_else(|| "k".into());
    let toy = ToyFixture::build()?;
    let seqs = corpus::tokenize(&toy.corpus, &toy.tokenizer, 128)?;
    let features: Vec<_> = (0..featdesc::fixture::TOY_SAE_WIDTH).map(|i| toy.sae_feature(i)).collect();
    let start = std::time::Instant::now();
    let index = build_index(&toy.model, &toy.featurizers, &features, &seqs, &IndexConfig::default())?;
    println!("indexed {} features over {} sequences in {:.2?}", index.len(), seqs.len(), start.elapsed());

    let dead: Vec<String> = index.summaries().filter(|s| s.is_dead(0.0)).map(|s| s.feature.index.to_string()).collect();
    println!("dead: {}", dead.join(", "));

    let feature = toy.detector(&piece);
    let summary = index.get(&feature)?;
    println!("{feature}: corpus max {:.4}", summary.corpus_max);
    for (i, r) in summary.top_records.iter().enumerate() {
        let pos = r.activations.iter().position(|&a| a == r.max_activation).unwrap_or(0);
        let at = toy.tokenizer.piece(r.tokens[pos]);
        println!("  #{} {} peak {:.4} at {at:?}: {}", i + 1, r.doc_id, r.max_activation, toy.tokenizer.decode(&r.tokens));
    }

    let gateway = Gateway::mock();
    let templates = Templates::builtin();
    let d = Describer::new(&gateway, &templates, &toy.tokenizer).maxact(summary)?;
    println!("description: {}", d.text);
    Ok(())
}
