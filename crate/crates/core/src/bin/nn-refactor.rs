use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};

use nn_refactor::driver::{self, report_text, resolve_seed, PipelineConfig, SearchBudget};
use nn_refactor::export::ExportTarget;
use nn_refactor::netgraph::{infer_shapes, load_network};
use nn_refactor::verify::{check_property, load_property, VerifyBudget};

#[derive(Parser)]
#[command(name = "nn-refactor", version, about = "Refactor neural networks for verifiability")]
struct Cli {
    /// Seed for every random choice; overrides NN_REFACTOR_SEED and the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transform, distill, verify and export as configured.
    Run { config: PathBuf },
    /// Binary-search the drop count for a candidate meeting both budgets.
    Search {
        config: PathBuf,
        /// Largest acceptable relative error.
        #[arg(long)]
        emax: Option<f64>,
        /// Per-property verification time budget in seconds.
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        max_candidates: Option<usize>,
        /// Try scale factors 0.75, 0.5 and 0.25 on the accepted candidate.
        #[arg(long)]
        refine: bool,
    },
    /// Write a network in a verifier format.
    Export {
        model: PathBuf,
        #[arg(long)]
        target: ExportTarget,
        /// Property to encode (nnet margin output, rlv assertions).
        #[arg(long)]
        property: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check one robustness property.
    Verify {
        model: PathBuf,
        property: PathBuf,
        /// Wall-clock seconds before giving up with `oor`.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, default_value_t = VerifyBudget::default().max_regions)]
        max_regions: usize,
        #[arg(long, default_value_t = VerifyBudget::default().falsify_samples)]
        falsify_samples: usize,
    },
    /// Generate a runnable scenario around the toy residual network.
    Scaffold {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a network's layers, shapes and neuron count.
    Info { model: PathBuf },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config, cli.seed)?;
            let r = driver::run_pipeline(&cfg)?;
            print!("{}", report_text(std::slice::from_ref(&r), cfg.report.time_decimals));
            if let Some(f) = &r.failure {
                eprintln!("{} stage failed: {}", f.stage, f.message);
                return Ok(false);
            }
            eprintln!("report written to {}", cfg.output_dir.join(&cfg.report.file).display());
        }
        Command::Search { config, emax, tmax, max_candidates, refine } => {
            let cfg = PipelineConfig::load(&config, cli.seed)?;
            let base = cfg.search;
            let (Some(e), Some(t)) = (emax.or(base.map(|b| b.e_max)), tmax.or(base.map(|b| b.t_max))) else {
                bail!("give --emax and --tmax or a [search] table");
            };
            let cap = max_candidates.or(base.map(|b| b.max_candidates)).unwrap_or(usize::MAX);
            let budget = SearchBudget::new(e, t, cap)?.with_refine(refine || base.is_some_and(|b| b.refine));
            let out = driver::search_pipeline(&cfg, &budget)?;
            let rows: Vec<_> = out.trace.iter().chain(&out.refinements).cloned().collect();
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("search.csv");
            driver::emit_report(&rows, &path, cfg.report.time_decimals)?;
            for r in &rows {
                let err = r.rel_error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into());
                println!("{:<16} neurons={:<8} error={err:<12} accepted={}", r.name, r.neurons, r.accepted);
            }
            match &out.best {
                Some(b) => println!("best: {}", b.name),
                None => {
                    println!("no candidate met both budgets");
                    return Ok(false);
                }
            }
        }
        Command::Export { model, target, property, out } => {
            let g = load_network(&model)?;
            let prop = property.as_deref().map(load_property).transpose()?;
            target.write(&g, prop.as_ref(), &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Verify { model, property, timeout, max_regions, falsify_samples } => {
            let g = load_network(&model)?;
            let prop = load_property(&property)?;
            let seed = resolve_seed(None, cli.seed)?;
            let v = check_property(&g, &prop, &VerifyBudget { timeout, max_regions, falsify_samples, seed })?;
            println!("{} ({} regions, {:.3}s)", v.outcome, v.regions, v.seconds);
            if let nn_refactor::verify::Outcome::False(x) = &v.outcome {
                println!("counterexample: {:?}", x.data());
            }
        }
        Command::Scaffold { out } => {
            let seed = resolve_seed(None, cli.seed)?;
            let cfg = driver::scaffold(&out, seed)?;
            println!("{}", cfg.display());
        }
        Command::Info { model } => {
            let g = load_network(&model).with_context(|| format!("loading {}", model.display()))?;
            let t = infer_shapes(&g)?;
            println!("{}: input {:?}", g.name, g.input_shape);
            for (l, s) in g.layers.iter().zip(&t.layers) {
                println!("  {:<6} {:<15} {:?} -> {:?}", l.id.to_string(), format!("{:?}", l.kind.tag()), s.input, s.output);
            }
            println!("neurons {}  parameters {}", t.neurons(), g.param_count());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
