//! Compute cost of each description method.
//!
//! cargo run --example flops

use featdesc::describe::Method;
use featdesc::fixture::toy_config;
use featdesc::pipeline::{estimate_flops, CostModel};

fn table(title: &str, cost: &CostModel) {
    println!("{title} (N = {:.3e} non-embedding parameters)", cost.n_nonembed_params);
    for m in Method::all() {
        println!("  {:<48} {:>10.3e}", m.to_string(), estimate_flops(cost, &m));
    }
}

fn main() {
    // 2B-parameter model, 25,000 sequences of 128 tokens, one feature
    let large = CostModel {
        n_nonembed_params: 2.03e9,
        corpus_tokens: 25_000.0 * 128.0,
        feature_count: 1.0,
        d_model: 2304.0,
        vocab_size: 256_000.0,
        k_prompts: 32.0,
        prompt_len: 32.0,
    };
    table("large model", &large);

    let cfg = toy_config();
    let toy = CostModel::for_model(&cfg, 200 * 128, 24, 32, 32);
    table("toy model, 24 features", &toy);
}
