//! Every pipeline stage on the shipped toy fixture, offline.
//!
//! cargo run --release --example run_pipeline -- [OUT_DIR]

use std::path::PathBuf;

use featdesc::pipeline::{Metric, Pipeline, PipelineConfig};

fn main() -> featdesc::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy");
    let mut config = PipelineConfig::load(root.join("pipeline.toml"))?;
    if let Some(out) = std::env::args().nth(1) {
        config.output_dir = out.into();
    }
    let p = Pipeline::new(config)?;
    let features = p.resolve_features(&[])?;
    let start = std::time::Instant::now();
    let steps = [
        ("index", p.cmd_index(&features, true)?),
        ("describe", p.cmd_describe(&features, &[], true)?),
        ("eval", p.cmd_eval(&features, &[], &[Metric::Input, Metric::Output], true)?),
        ("revive", p.cmd_revive(&features, true)?),
    ];
    for (name, r) in &steps {
        println!("{name:<9} written {:>4}  failed {}", r.written, r.failures.len());
    }
    println!("\n{:<48} {:<7} {:>4} {:>6}", "method", "metric", "n", "pass");
    for r in &steps[2].1.eval_summary {
        println!("{:<48} {:<7} {:>4} {:>6.3}", r.method.to_string(), r.metric.to_string(), r.n, r.rate);
    }
    if let Some(s) = &steps[3].1.revival_summary {
        println!("\nrevived {} of {} dead features", s.revived, s.dead);
    }
    println!("\n{} features in {:.2?}; stores in {}", features.len(), start.elapsed(), p.config.output_dir.display());
    Ok(())
}
