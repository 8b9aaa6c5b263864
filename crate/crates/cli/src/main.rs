//! `scope`: command-line entry point for the readback-monitoring pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scope_core::pipeline::{self, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "scope", version, about = "Open-set ATC readback monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demo corpus with synthesized anomalies.
    Synth(Common),
    /// Embed every split into feature banks.
    Embed(Common),
    /// Train the plug-in classifier head.
    Train(Common),
    /// Calibrate the KNN rejection threshold.
    Calibrate(Common),
    /// Run the monitor over the test split and write verdicts.
    Infer(Common),
    /// Score verdicts against gold labels.
    Evaluate(Common),
    /// Search kappa, rho and alpha on a validation holdout.
    GridSearch(Common),
    /// Run synth, embed, train, calibrate, infer and evaluate in order.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON). Built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Examples per class in the support set.
    #[arg(long)]
    n_shot: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<usize>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for verdicts, prompts and reports.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Use the offline rule oracle instead of the LLM endpoint.
    #[arg(long)]
    stub: bool,
    #[arg(long)]
    no_plugin: bool,
    #[arg(long)]
    no_anchor_pool: bool,
    #[arg(long)]
    no_mmr: bool,
    #[arg(long)]
    shuffle_order: bool,
    #[arg(long)]
    no_example_semantics: bool,
    #[arg(long)]
    with_test_semantics: bool,
}

impl Common {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        Overrides {
            n_shot: self.n_shot,
            alpha: self.alpha,
            rho: self.rho,
            kappa: self.kappa,
            seed: self.seed,
            output: self.output.clone(),
            stub: self.stub,
            no_plugin: self.no_plugin,
            no_anchor_pool: self.no_anchor_pool,
            no_mmr: self.no_mmr,
            shuffle_order: self.shuffle_order,
            no_example_semantics: self.no_example_semantics,
            with_test_semantics: self.with_test_semantics,
        }
        .apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let s = pipeline::cmd_synth(cfg).context("synth")?;
    println!("wrote {} pairs to {} ({} skipped)", s.pairs, cfg.paths.corpus.display(), s.skipped.len());
    print!("{}", s.distribution);
    Ok(())
}

fn embed(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let s = pipeline::cmd_embed(cfg).context("embed")?;
    for (split, n) in &s.counts {
        println!("{:<12} {n} vectors (d={})", split.as_str(), s.dim);
    }
    Ok(())
}

fn train(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let s = pipeline::cmd_train(cfg).context("train")?;
    let best = &s.history[s.best_epoch - 1];
    println!(
        "trained on {} known / {} exposure vectors; best epoch {} (loss {:.4})",
        s.known, s.exposure, s.best_epoch, best.total
    );
    Ok(())
}

fn calibrate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let s = pipeline::cmd_calibrate(cfg).context("calibrate")?;
    println!(
        "tau = {:.4} (J = {:.3}); mean KNN distance known {:.4}, unknown {:.4}",
        s.tau, s.youden_j, s.known_mean, s.unknown_mean
    );
    Ok(())
}

fn infer(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let s = pipeline::cmd_infer(cfg).context("infer")?;
    println!(
        "{} verdicts written to {} ({} parse failures, mean {:.1} ms per pair)",
        s.pairs,
        s.verdicts.display(),
        s.parse_failures,
        s.latency.mean.total_ms
    );
    Ok(())
}

fn evaluate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let m = pipeline::cmd_evaluate(cfg).context("evaluate")?;
    print!("{}", m.to_table());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(c) => synth(&c.config()?),
        Command::Embed(c) => embed(&c.config()?),
        Command::Train(c) => train(&c.config()?),
        Command::Calibrate(c) => calibrate(&c.config()?),
        Command::Infer(c) => infer(&c.config()?),
        Command::Evaluate(c) => evaluate(&c.config()?),
        Command::GridSearch(c) => {
            let cfg = c.config()?;
            let rows = pipeline::cmd_grid_search(&cfg).context("grid-search")?;
            print!("{}", pipeline::grid_table(&rows));
            Ok(())
        }
        Command::All(c) => {
            let cfg = c.config()?;
            synth(&cfg)?;
            embed(&cfg)?;
            train(&cfg)?;
            calibrate(&cfg)?;
            infer(&cfg)?;
            evaluate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
