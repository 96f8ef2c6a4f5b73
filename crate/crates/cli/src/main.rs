use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use termforge_core::corpus::{write_corpus, write_gold};
use termforge_core::eval::render_table;
use termforge_core::pipeline::{
    configure_threads, read_report, run_all, run_stage, Extraction, PipelineConfig, Stage, System,
};
use termforge_core::synthgen::{generate, SynthConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SystemArg {
    Baseline,
    Siamese,
    Triplet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExtractionArg {
    Eom,
    Hybrid,
}

/// Spoken term discovery over pseudo-transcribed speech.
#[derive(Debug, Parser)]
#[command(name = "termforge", version)]
struct Cli {
    /// One of synth, discover, baseline, mine, train, embed, recluster, evaluate, or all.
    stage: String,
    /// JSON pipeline configuration (for `synth`, a bare synthesis configuration also works).
    #[arg(long)]
    config: PathBuf,
    /// Recompute even when cached artifacts are up to date.
    #[arg(long)]
    force: bool,
    /// Output directory, overriding `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured system.
    #[arg(long, value_enum)]
    system: Option<SystemArg>,
    /// Override the configured cluster extraction.
    #[arg(long, value_enum)]
    extraction: Option<ExtractionArg>,
}

fn read_config(cli: &Cli) -> Result<Option<PipelineConfig>> {
    let text = std::fs::read_to_string(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    match serde_json::from_str::<PipelineConfig>(&text) {
        Ok(mut cfg) => {
            if let Some(out) = &cli.out {
                cfg.paths.out = out.clone();
            }
            if let Some(s) = cli.system {
                cfg.system = match s {
                    SystemArg::Baseline => System::Baseline,
                    SystemArg::Siamese => System::Siamese,
                    SystemArg::Triplet => System::Triplet,
                };
            }
            if let Some(e) = cli.extraction {
                cfg.extraction = match e {
                    ExtractionArg::Eom => Extraction::Eom,
                    ExtractionArg::Hybrid => Extraction::Hybrid,
                };
            }
            Ok(Some(cfg))
        }
        Err(pipeline_err) => {
            if cli.stage == "synth" && serde_json::from_str::<SynthConfig>(&text).is_ok() {
                return Ok(None);
            }
            Err(pipeline_err).with_context(|| format!("parsing {}", cli.config.display()))
        }
    }
}

/// `synth` with a bare synthesis config writes the corpus straight to `--out`.
fn synth_only(cli: &Cli) -> Result<()> {
    let Some(out) = &cli.out else {
        bail!("--out is required with a bare synthesis configuration");
    };
    let text = std::fs::read_to_string(&cli.config)?;
    let cfg: SynthConfig = serde_json::from_str(&text)?;
    let (corpus, gold) = generate(&cfg)?;
    write_corpus(&corpus, out)?;
    write_gold(&gold, out)?;
    log::info!("wrote {} utterances to {}", corpus.utterances().len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Ok(n) = std::env::var("TERMFORGE_THREADS") {
        let n: usize = n.parse().context("TERMFORGE_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("TERMFORGE_THREADS must be a positive integer");
        }
        configure_threads(n)?;
    }
    let Some(cfg) = read_config(cli)? else {
        return synth_only(cli);
    };
    if cli.stage == "all" {
        let report = run_all(&cfg, cli.force)?;
        print!("{}", render_table(&[report]));
        return Ok(());
    }
    let stage: Stage = cli.stage.parse()?;
    let status = run_stage(stage, &cfg, cli.force)?;
    log::info!("{stage}: {status:?}");
    if stage == Stage::Evaluate {
        print!("{}", render_table(&[read_report(&cfg)?]));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
