use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pausecue::pipeline::{write_synthetic, Overrides, Pipeline, PipelineConfig};
use pausecue::{Error, Result};

#[derive(Parser)]
#[command(name = "pausecue", version, about = "Pause-centred subsequence classification and guided transcript features")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma-separated seeds for both cross-validation levels.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Keep samples from one transcript or participant in the same fold.
    #[arg(long, global = true, overrides_with = "no_group")]
    group_by_source: bool,

    /// Split folds without grouping.
    #[arg(long, global = true)]
    no_group: bool,

    /// Build aggregates at distances 1, 2 and 3 regardless of guidance.
    #[arg(long, global = true)]
    all_distances: bool,

    /// Drop utterance boundary tokens before counting positions.
    #[arg(long, global = true)]
    skip_boundaries: bool,

    /// Fit token normalization on all word tokens.
    #[arg(long, global = true)]
    global_norm: bool,

    /// Keep left and right aggregates apart.
    #[arg(long, global = true)]
    split_sides: bool,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and extract pause subsequences.
    Extract,
    /// Subsequence cross-validation; picks the aggregate distances.
    Guide,
    /// Build the transcript feature table.
    Features,
    /// Transcript cross-validation over every feature set.
    Classify,
    /// Significance tables and a summary of every stage.
    Report,
    /// Every stage in order.
    RunAll,
    /// Write a synthetic corpus with lexicons and a config.
    Synth {
        #[arg(long)]
        n_transcripts: Option<usize>,
        #[arg(long)]
        signal_distance: Option<usize>,
        #[arg(long)]
        signal_strength: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn overrides(cli: &Cli) -> Overrides {
    let group = if cli.no_group {
        Some(false)
    } else if cli.group_by_source {
        Some(true)
    } else {
        None
    };
    Overrides {
        seeds: cli.seeds.clone(),
        out: cli.out.clone(),
        group,
        all_distances: cli.all_distances,
        skip_boundaries: cli.skip_boundaries,
        global_norm: cli.global_norm,
        split_sides: cli.split_sides,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&overrides(cli));
    Ok(cfg)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Synth {
        n_transcripts,
        signal_distance,
        signal_strength,
        seed,
    } = &cli.command
    {
        let cfg = match &cli.config {
            Some(p) => Some(PipelineConfig::load(p)?),
            None => None,
        };
        let mut spec = cfg.and_then(|c| c.synthetic).unwrap_or_default();
        if let Some(n) = n_transcripts {
            spec.n_transcripts = *n;
        }
        if let Some(d) = signal_distance {
            spec.signal_distance = *d;
        }
        if let Some(s) = signal_strength {
            spec.signal_strength = *s;
        }
        if let Some(s) = seed {
            spec.seed = *s;
        }
        spec.validate()?;
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
        let syn = write_synthetic(&spec, &dir)?;
        let n = syn.corpus.counts();
        println!("wrote {} transcripts ({} HC, {} CI) to {}", n.total, n.hc, n.ci, dir.display());
        for (m, s) in &syn.realized_shift {
            println!("realized shift {}: {s:.3} sd", m.name());
        }
        return Ok(());
    }

    let p = Pipeline::new(load_config(cli)?)?;
    match cli.command {
        Command::Extract => {
            let ex = p.extract()?;
            let n = ex.corpus.counts();
            println!("transcripts\t{}\t{}\t{}", n.hc, n.ci, n.total);
            for t in &ex.tables {
                let c = t.counts();
                println!("{}\t{}\t{}\t{}", t.context, c.hc, c.ci, c.total);
            }
        }
        Command::Guide => {
            let g = p.guide()?;
            for s in &g.report.subsets {
                println!(
                    "M-{}\t{:.2} ± {:.2}{}",
                    s.context,
                    100.0 * s.best.mean_accuracy,
                    100.0 * s.best.std_accuracy,
                    if s.gated_out { "\tgated out" } else { "" }
                );
            }
            let d: Vec<String> = g.guidance.distances.iter().map(|d| d.to_string()).collect();
            println!("winner {} distances {}", g.guidance.winner, d.join(","));
        }
        Command::Features => {
            let f = p.features()?;
            let sets: Vec<String> = f.sets.iter().map(|s| s.to_string()).collect();
            println!("{} rows, {} columns; sets {}", f.table.n_rows(), f.table.n_cols(), sets.join(", "));
        }
        Command::Classify => {
            let c = p.classify()?;
            for r in &c.report.results {
                let b = &r.best;
                println!(
                    "{}\t{}\tacc {} ± {}\tk {}\tsmote {}",
                    b.feature_set,
                    b.model,
                    fmt_pct(b.accuracy.mean),
                    fmt_pct(b.accuracy.std),
                    b.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                    b.smote
                );
            }
        }
        Command::Report | Command::RunAll => {
            let r = p.report()?;
            println!("report written to {}", r.dir.display());
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
