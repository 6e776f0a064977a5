use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featdesc::describe::Method;
use featdesc::gateway::BackendKind;
use featdesc::pipeline::{estimate_flops, exit_code_for, CostModel, Metric, Pipeline, PipelineConfig, Report};
use featdesc::{Error, Result};

#[derive(Parser)]
#[command(name = "featdesc", version, about = "Describe and evaluate transformer features")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LLM backend.
    #[arg(long, global = true, value_parser = ["mock", "http"])]
    backend: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Selection {
    /// Comma-separated feature specs (`toy_sae/3`, `toy_sae/0-7`, `neuron@mlp_hidden.1/*`)
    /// or a file with one spec per line.
    #[arg(long)]
    features: Option<String>,
    /// Comma-separated methods: maxact, vocabproj, tokenchange, ensemble_raw, ensemble_concat.
    #[arg(long)]
    methods: Option<String>,
    /// Recompute and overwrite existing results.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Input,
    Output,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the corpus and write the activation index.
    Index(Selection),
    /// Generate descriptions for every (feature, method) pair.
    Describe(Selection),
    /// Evaluate stored descriptions.
    Eval {
        #[command(flatten)]
        sel: Selection,
        #[arg(long, value_enum, default_value = "both")]
        metric: MetricArg,
    },
    /// Search for prompts that activate features dead in the index.
    Revive(Selection),
    /// Estimate compute cost per method.
    Flops {
        #[command(flatten)]
        sel: Selection,
        /// Non-embedding parameter count (overrides the config's model).
        #[arg(long)]
        n_params: Option<f64>,
        #[arg(long)]
        corpus_tokens: Option<f64>,
        #[arg(long)]
        feature_count: Option<f64>,
        #[arg(long)]
        d_model: Option<f64>,
        #[arg(long)]
        vocab_size: Option<f64>,
    },
}

fn split_specs(raw: &Option<String>) -> Result<Vec<String>> {
    let Some(raw) = raw else { return Ok(Vec::new()) };
    let path = PathBuf::from(raw);
    let text = if path.is_file() {
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?
    } else {
        raw.replace(',', "\n")
    };
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn parse_methods(raw: &Option<String>) -> Result<Vec<Method>> {
    match raw {
        None => Ok(Vec::new()),
        Some(s) => s.split(',').filter(|m| !m.trim().is_empty()).map(str::parse).collect(),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Usage("--config is required for this command".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    if let Some(b) = &cli.backend {
        config.gateway.backend = b.parse::<BackendKind>().map_err(Error::Usage)?;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn print_report(report: &Report) {
    for n in &report.notices {
        eprintln!("note: {n}");
    }
    for f in &report.failures {
        let method = f.method.as_deref().map(|m| format!(" {m}")).unwrap_or_default();
        eprintln!("failed: {}{method}: {}", f.feature, f.error);
    }
    if !report.eval_summary.is_empty() {
        println!("{:<48} {:<7} {:>4} {:>7} {:>17}", "method", "metric", "n", "pass", "95% CI");
        for r in &report.eval_summary {
            println!(
                "{:<48} {:<7} {:>4} {:>7.3} [{:>6.3}, {:>6.3}]",
                r.method.to_string(),
                r.metric.to_string(),
                r.n,
                r.rate,
                r.ci_low,
                r.ci_high
            );
        }
    }
    if let Some(s) = &report.revival_summary {
        println!("dead features tried: {}, revived: {} ({:.1}%)", s.dead, s.revived, 100.0 * s.fraction);
        for (kind, n) in &s.by_witness {
            println!("  {kind}: {n}");
        }
    }
    eprintln!("{} written, {} skipped, {} failed", report.written, report.skipped, report.failures.len());
}

fn flops(cli: &Cli, sel: &Selection, overrides: [Option<f64>; 5]) -> Result<()> {
    let [n_params, corpus_tokens, feature_count, d_model, vocab_size] = overrides;
    let mut methods = parse_methods(&sel.methods)?;
    let cost = if cli.config.is_some() {
        let p = Pipeline::new(load_config(cli)?)?;
        let features = p.resolve_features(&split_specs(&sel.features)?)?;
        if methods.is_empty() {
            methods = p.config.default_methods()?;
        }
        p.cost_model(features.len())
    } else {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Usage(format!("--{name} is required without --config")));
        CostModel {
            n_nonembed_params: need(n_params, "n-params")?,
            corpus_tokens: need(corpus_tokens, "corpus-tokens")?,
            feature_count: need(feature_count, "feature-count")?,
            d_model: need(d_model, "d-model")?,
            vocab_size: need(vocab_size, "vocab-size")?,
            k_prompts: 32.0,
            prompt_len: 32.0,
        }
    };
    let cost = CostModel {
        n_nonembed_params: n_params.unwrap_or(cost.n_nonembed_params),
        corpus_tokens: corpus_tokens.unwrap_or(cost.corpus_tokens),
        feature_count: feature_count.unwrap_or(cost.feature_count),
        d_model: d_model.unwrap_or(cost.d_model),
        vocab_size: vocab_size.unwrap_or(cost.vocab_size),
        ..cost
    };
    cost.validate()?;
    if methods.is_empty() {
        methods = Method::all();
    }
    println!("{:<48} {:>12}", "method", "FLOPs");
    for m in &methods {
        println!("{:<48} {:>12.3e}", m.to_string(), estimate_flops(&cost, m));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<i32> {
    if let Command::Flops { sel, n_params, corpus_tokens, feature_count, d_model, vocab_size } = &cli.command {
        flops(cli, sel, [*n_params, *corpus_tokens, *feature_count, *d_model, *vocab_size])?;
        return Ok(0);
    }
    let pipeline = Pipeline::new(load_config(cli)?)?;
    let report = match &cli.command {
        Command::Index(sel) => {
            let features = pipeline.resolve_features(&split_specs(&sel.features)?)?;
            pipeline.cmd_index(&features, sel.force)?
        }
        Command::Describe(sel) => {
            let features = pipeline.resolve_features(&split_specs(&sel.features)?)?;
            pipeline.cmd_describe(&features, &parse_methods(&sel.methods)?, sel.force)?
        }
        Command::Eval { sel, metric } => {
            let features = pipeline.resolve_features(&split_specs(&sel.features)?)?;
            let metrics = match metric {
                MetricArg::Input => vec![Metric::Input],
                MetricArg::Output => vec![Metric::Output],
                MetricArg::Both => vec![Metric::Input, Metric::Output],
            };
            pipeline.cmd_eval(&features, &parse_methods(&sel.methods)?, &metrics, sel.force)?
        }
        Command::Revive(sel) => {
            let features = pipeline.resolve_features(&split_specs(&sel.features)?)?;
            pipeline.cmd_revive(&features, sel.force)?
        }
        Command::Flops { .. } => unreachable!("handled above"),
    };
    print_report(&report);
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
