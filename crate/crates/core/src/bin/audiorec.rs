use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use audiorec::config::RunConfig;
use audiorec::eval::{significance_csv, significance_matrix, Metric};
use audiorec::ingest::{pool_table, read_chunk_csv, write_embeddings, write_interactions, Delimiter};
use audiorec::pipeline::{prepare, run_pipeline};
use audiorec::report::{load_reports, render_report, SIGNIFICANCE_FILE};
use audiorec::split::{split_report, write_split};
use audiorec::synth::{planted_genres, PlantedConfig};

/// Offline evaluation of music recommenders over pretrained audio embeddings.
#[derive(Parser)]
#[command(name = "audiorec", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Temporal split only: writes split/ and prints the partition counts.
    Split,
    /// Mean-pools chunk-level embeddings (`item_id,v1..vd` rows) into a PARE table.
    Pool {
        /// Chunk CSV; several rows per item are its chunks.
        input: PathBuf,
    },
    /// Full pipeline over every (model, variant) pair.
    Run,
    /// Renders the comparison table of a finished run.
    Report {
        run_dir: PathBuf,
        /// Print the CSV form instead of the text table.
        #[arg(long)]
        csv: bool,
    },
    /// Recomputes pairwise paired-bootstrap significance for a finished run.
    Significance {
        run_dir: PathBuf,
        #[arg(long, default_value_t = audiorec::eval::DEFAULT_RESAMPLES)]
        resamples: usize,
    },
    /// Writes a planted-genre demo dataset and a matching run config.
    Synth {
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 2000)]
        items: usize,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let path = g.config.as_deref().context("--config <path> is required for this command")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = g.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    match cli.command {
        Command::Split => {
            let cfg = load_config(g)?;
            cfg.validate()?;
            let prepared = prepare(&cfg)?;
            let dir = cfg.output_dir.join("split");
            write_split(&dir, &prepared.split, &cfg.split_config()?)?;
            let report = split_report(&prepared.split).to_string();
            write(&dir.join("split_report.txt"), &report)?;
            print!("{report}");
        }
        Command::Pool { input } => {
            let Some(out) = &g.out else { bail!("--out <file> is required for pool") };
            let file = std::fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let table = pool_table(&read_chunk_csv(std::io::BufReader::new(file))?)?;
            write_embeddings(out, &table)?;
            info!("pooled {} items of dim {} into {}", table.n_items(), table.dim(), out.display());
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let outcome = run_pipeline(&cfg, None)?;
            for p in outcome.manifest.pairs.iter().filter(|p| !p.ok) {
                eprintln!("{}__{} failed: {}", p.model, p.variant, p.error.as_deref().unwrap_or(""));
            }
            let report = outcome.out_dir.join("report.txt");
            if report.is_file() {
                print!("{}", std::fs::read_to_string(&report)?);
            }
            return Ok(outcome.exit_code());
        }
        Command::Report { run_dir, csv } => {
            let r = render_report(&run_dir)?;
            print!("{}", if csv { r.csv } else { r.text });
        }
        Command::Significance { run_dir, resamples } => {
            let reports = load_reports(&run_dir)?;
            if reports.is_empty() {
                bail!("no per-user reports under {}", run_dir.display());
            }
            let sig = significance_matrix(&reports, &[Metric::HitRate, Metric::Recall, Metric::Ndcg], resamples, g.seed.unwrap_or(0))?;
            let text = significance_csv(&sig);
            write(&run_dir.join(SIGNIFICANCE_FILE), &text)?;
            print!("{text}");
        }
        Command::Synth { users, items } => {
            let Some(out) = &g.out else { bail!("--out <dir> is required for synth") };
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let pc = PlantedConfig { n_users: users, n_items: items, ..PlantedConfig::default() };
            let d = planted_genres(&pc, g.seed.unwrap_or(0))?;
            let events = d.log.events().iter().map(|e| (&*e.user, &*e.item, e.timestamp));
            write_interactions(out.join("interactions.tsv"), events, Delimiter::Tsv)?;
            write_embeddings(out.join("informative.pare"), &d.informative)?;
            let cfg = serde_json::json!({
                "interactions": "interactions.tsv",
                "variants": [
                    {"name": "Random", "random_dim": pc.dim},
                    {"name": "Informative", "embeddings": "informative.pare"}
                ],
                "split": {
                    "boundary": d.split.boundary,
                    "train_days": d.split.train_window / audiorec::split::DAY,
                    "holdout_days": d.split.holdout_window / audiorec::split::DAY
                },
                "k": 10,
                "seed": g.seed.unwrap_or(0),
                "shallow": {"epochs": 20},
                "seqrec": {"epochs": 10, "max_len": 50},
                "output_dir": "run"
            });
            write(&out.join("run.json"), &serde_json::to_string_pretty(&cfg)?)?;
            println!("{}", out.join("run.json").display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
