use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use gemrank::config::RunConfig;
use gemrank::pipeline;
use gemrank::ranking::EvalReport;

#[derive(Parser)]
#[command(
    name = "gemrank",
    about = "Collaborative ranking from profile co-occurrence embeddings",
    version
)]
struct Cli {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Ratings kept per user for training.
    #[arg(long, global = true, value_name = "N")]
    upl: Option<usize>,

    /// Basic entity for the co-occurrence matrix.
    #[arg(long, global = true, value_name = "item|user")]
    basis: Option<String>,

    /// gemrank-mlp, gemrank-simple, or user-item-mf.
    #[arg(long, global = true, value_name = "NAME")]
    variant: Option<String>,

    /// Run seed; derives every stage seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory for artifacts and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for per-user scoring (1 = fully deterministic).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the first repetition's train/test split.
    Split,
    /// Count profile co-occurrences over the train split.
    Pco,
    /// Factorize into embedding tables.
    Embed,
    /// Build the final user/item vector tables from a dumped embedding.
    Aggregate,
    /// Train the interest network from dumped vector tables.
    TrainMlp,
    /// Repeated-split NDCG evaluation.
    Evaluate,
    /// All stages end to end: artifacts plus evaluation report.
    Run,
    /// Rank all items a user has not trained on, from persisted artifacts.
    Recommend {
        /// External user id as it appears in the rating log.
        user_id: String,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)
            .with_context(|| format!("reading config `{}`", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(upl) = cli.upl {
        cfg.set("split.upl", &upl.to_string())?;
    }
    if let Some(basis) = &cli.basis {
        cfg.set("basis", basis)?;
    }
    if let Some(variant) = &cli.variant {
        cfg.set("variant", variant)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", &out.display().to_string())?;
    }
    if let Some(threads) = cli.threads {
        cfg.set("threads", &threads.to_string())?;
    }
    Ok(cfg)
}

fn print_report(report: &EvalReport) {
    let mut line = format!("{:<14} upl={:<3}", report.variant, report.upl);
    for (k, n) in report.n_values.iter().enumerate() {
        line.push_str(&format!(
            "  ndcg@{n} = {:.4} +- {:.4}",
            report.mean[k], report.std[k]
        ));
    }
    println!("{line}");
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Split => {
            let split = pipeline::cmd_split(&cfg)?;
            println!(
                "split: {} users included, {} train ratings -> {}",
                split.included_users.len(),
                split.train.ratings.len(),
                cfg.out_dir.display()
            );
        }
        Command::Pco => {
            let pco = pipeline::cmd_pco(&cfg)?;
            println!(
                "pco: {} {}-based entities, {} nonzero pairs -> {}",
                pco.n(),
                pco.basis().as_str(),
                pco.num_pairs(),
                cfg.out_dir.display()
            );
        }
        Command::Embed => {
            let trace = pipeline::cmd_embed(&cfg)?;
            println!(
                "embed: {} epochs, cost {:.3} -> {:.3} -> {}",
                trace.cost_per_epoch.len(),
                trace.cost_per_epoch.first().unwrap_or(&f64::NAN),
                trace.cost_per_epoch.last().unwrap_or(&f64::NAN),
                cfg.out_dir.display()
            );
        }
        Command::Aggregate => {
            pipeline::cmd_aggregate(&cfg)?;
            println!("aggregate: vector tables written -> {}", cfg.out_dir.display());
        }
        Command::TrainMlp => {
            let selection = pipeline::cmd_train_mlp(&cfg)?;
            println!("train-mlp: chose hidden size {}", selection.chosen_hidden);
            for (hidden, loss) in &selection.validation_losses {
                println!("  hidden {hidden:>3}: validation loss {loss:.6}");
            }
        }
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(&cfg)?;
            print_report(&report);
        }
        Command::Run => {
            let report = pipeline::run_pipeline(&cfg)?;
            print_report(&report);
            println!("artifacts -> {}", cfg.out_dir.display());
        }
        Command::Recommend { user_id, top_n } => {
            let items = pipeline::recommend(&cfg, user_id, *top_n)?;
            for (item_id, score) in items {
                println!("{item_id}\t{score}");
            }
        }
    }
    Ok(())
}
